import itertools

import numpy as np
import pytest
from scipy.special import expit

from harmbound.core import DataError, Policy
from harmbound.estimands import Estimand, sharp_bound_terms
from harmbound.nuisance import LearnerConfig
from harmbound.oracle import (
    CSV_FIELDS,
    CouplingInstance,
    DgpSpec,
    coupling_bounds_bruteforce,
    dgp_mu,
    dgp_propensity,
    margin_profile,
    oracle_agreement,
    replicate,
    sample,
    true_bounds,
    write_replication_csv,
)


def _orthant_points():
    """One representative point per sign pattern of the seven coordinates."""
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=7)))
    return signs


def _brute_mu(x, a, beta):
    """Generating mean evaluated coordinate by coordinate."""
    out = []
    for row in x:
        xi = 1 if sum(v > 0 for v in row[2:7]) % 2 else -1
        side = 1 if xi * row[1] > 0 else -1
        slope = (2 * a - 1) if xi * row[0] > 0 else 1
        out.append(1 / (1 + np.exp(-beta * side * slope)))
    return np.array(out)


@pytest.mark.parametrize("beta", [0.0, 3.0, 12.0])
def test_generating_mean_matches_direct_evaluation(beta):
    x = _orthant_points()
    for a in (0, 1):
        assert np.allclose(dgp_mu(x, a, beta), _brute_mu(x, a, beta), atol=1e-15)


def test_beta_zero_is_flat():
    x = np.random.default_rng(0).standard_normal((100, 7))
    assert np.all(dgp_mu(x, 0, 0.0) == 0.5) and np.all(dgp_mu(x, 1, 0.0) == 0.5)


def test_arms_sum_to_one_where_effect_lives():
    x = _orthant_points()
    xi = np.where(np.sum(x[:, 2:7] > 0, axis=1) % 2 == 1, 1.0, -1.0)
    live = xi * x[:, 0] > 0
    total = dgp_mu(x, 0, 3.0) + dgp_mu(x, 1, 3.0)
    assert np.allclose(total[live], 1.0)


def test_effect_takes_three_values():
    x = _orthant_points()
    xi = np.where(np.sum(x[:, 2:7] > 0, axis=1) % 2 == 1, 1.0, -1.0)
    tau = dgp_mu(x, 1, 3.0) - dgp_mu(x, 0, 3.0)
    gap = 2 * expit(3.0) - 1
    assert np.all(np.isclose(np.abs(tau), gap) | (tau == 0))
    assert np.array_equal(tau != 0, xi * x[:, 0] > 0)


def test_propensity_cells():
    assert dgp_propensity(np.array([[0, 0, -1, -1, 0, 0, 0.0]]))[0] == pytest.approx(0.4378, abs=5e-5)
    assert dgp_propensity(np.array([[0, 0, 1, -1, 0, 0, 0.0]]))[0] == pytest.approx(0.6792, abs=5e-5)


def test_mean_propensity():
    cells = [expit(-(0.25 - i + 0.5 * j)) for i in (0, 1) for j in (0, 1)]
    x = np.random.default_rng(1).standard_normal((10**6, 7))
    assert dgp_propensity(x).mean() == pytest.approx(np.mean(cells), abs=0.002)


def test_sampling_reproducible():
    a, b = sample(DgpSpec(3.0, seed=4), 300), sample(DgpSpec(3.0, seed=4), 300)
    assert all(np.array_equal(u, v) for u, v in ((a.x, b.x), (a.a, b.a), (a.y, b.y), (a.e, b.e)))


def test_sample_moments():
    t = sample(DgpSpec(0.0, seed=2), 10**5)
    assert 0.495 <= t.y.mean() <= 0.505
    cells = [expit(-(0.25 - i + 0.5 * j)) for i in (0, 1) for j in (0, 1)]
    assert t.a.mean() == pytest.approx(np.mean(cells), abs=0.005)


def _exact_dgp_bounds(beta, p0_fn=None, p1_fn=None):
    """Exact bounds by summing over the 128 sign cells (each has mass 2^-7)."""
    x = _orthant_points()
    mu0, mu1 = dgp_mu(x, 0, beta), dgp_mu(x, 1, beta)
    p0 = np.zeros(128) if p0_fn is None else p0_fn(x)
    p1 = np.ones(128) if p1_fn is None else p1_fn(x)
    lo, hi = sharp_bound_terms(mu0, mu1, p0, p1)
    return lo.mean(), hi.mean()


@pytest.mark.parametrize("beta", [0.0, 1.0, 3.0, 12.0])
def test_true_bounds_agree_with_cell_enumeration(beta):
    tb = true_bounds(DgpSpec(beta), "fna-lower", 10**6, seed=5)
    lo, hi = _exact_dgp_bounds(beta)
    assert abs(tb.interval.lo - lo) <= max(4 * tb.se_lo, 1e-12)
    assert abs(tb.interval.hi - hi) <= max(4 * tb.se_hi, 1e-12)


def test_true_bounds_policy_kind():
    pol = Policy.coordinate(2)
    tb = true_bounds(DgpSpec(3.0), Estimand("fna-upper-policy", Policy.constant(0), pol), 10**6, seed=6)
    _, hi = _exact_dgp_bounds(3.0, None, pol)
    assert abs(tb.interval.hi - hi) <= 4 * tb.se_hi


def test_true_bounds_endpoints():
    assert true_bounds(DgpSpec(0.0), "fna-upper", 10**4).interval.as_list() == [0.0, 0.5]
    big = true_bounds(DgpSpec(12.0), "fna-upper", 10**6).interval
    assert abs(big.lo - 0.25) < 0.01 and abs(big.hi - 0.25) < 0.01
    assert true_bounds(DgpSpec(0.0), "fna-upper-optimal", 10**4).interval.hi == pytest.approx(0.5)


def test_true_bounds_needs_draws():
    with pytest.raises(DataError):
        true_bounds(DgpSpec(3.0), "fna-lower", 100)


def test_coupling_single_atom():
    iv = coupling_bounds_bruteforce(CouplingInstance([0.7], [0.4], [1.0]), [0], [1])
    assert abs(iv.lo - 0.3) <= 1e-4 and abs(iv.hi - 0.6) <= 1e-4


def test_coupling_same_policy_is_zero():
    iv = coupling_bounds_bruteforce(CouplingInstance([0.3, 0.8], [0.3, 0.8], [0.5, 0.5]), [1, 0], [1, 0])
    assert iv.as_list() == [0.0, 0.0]


def test_coupling_rejects_bad_means():
    with pytest.raises(DataError):
        CouplingInstance([1.2], [0.4], [1.0])
    with pytest.raises(DataError):
        CouplingInstance([0.2], [0.4], [1.0], h=0.01)


def test_coupling_agrees_with_closed_form():
    out = oracle_agreement(200, 5, 1e-4, seed=11)
    assert out["max_discrepancy"] <= 1e-4


def test_margin_point_mass():
    prof = margin_profile([0.5, -0.5] * 10, [0.1, 0.25, 0.49])
    assert np.all(prof.prob == 0)


def test_margin_uniform():
    v = np.random.default_rng(0).uniform(-1, 1, 10**5)
    t = np.linspace(0.05, 1.0, 20)
    prof = margin_profile(v, t)
    assert np.allclose(prof.prob, t, atol=0.01)
    assert prof.slope == pytest.approx(1.0, abs=0.05)


def test_margin_of_generating_effect_is_flat_below_gap():
    x = np.random.default_rng(1).standard_normal((10**4, 7))
    tau = dgp_mu(x, 1, 3.0) - dgp_mu(x, 0, 3.0)
    gap = 2 * expit(3.0) - 1
    prof = margin_profile(tau, [0.1, 0.5, gap * 0.99, gap])
    assert prof.prob[:3].tolist() == [0.0, 0.0, 0.0]
    assert prof.prob[3] == pytest.approx(np.mean(tau != 0))


def test_margin_needs_values():
    with pytest.raises(DataError):
        margin_profile([], [0.1])


CHEAP = LearnerConfig(outcome="sign-cells", effect="sign-cells")


def test_replicate_shape(tmp_path):
    rows = replicate(DgpSpec(3.0), ["fna-lower"], [200], 2, CHEAP, mc_draws=10**4, workers=1)
    assert [(r.estimand, r.estimator) for r in rows] == [("fna-lower", "ahe"), ("fna-lower", "plugin")]
    assert all(r.coverage in (0.0, 0.5, 1.0) for r in rows)
    path = tmp_path / "rep.csv"
    write_replication_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS) and len(lines) == 3


def test_replicate_is_reproducible_across_worker_counts():
    args = (DgpSpec(3.0), ["fna-upper"], [200, 400], 3, CHEAP)
    serial = replicate(*args, mc_draws=10**4, seed=5, workers=1)
    pooled = replicate(*args, mc_draws=10**4, seed=5, workers=2)
    assert serial == pooled


def test_replicate_needs_reps():
    with pytest.raises(DataError):
        replicate(DgpSpec(3.0), ["fna-upper"], [200], 1, CHEAP)


def test_identifiability_disagreements_are_only_sub_grid_widths():
    out = oracle_agreement(200, 5, 1e-4, seed=0)
    assert all(0.0 < w <= 1e-4 for w in out["mismatch_widths"])
