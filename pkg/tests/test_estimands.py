import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmbound.ahe import AtomLaw, population_ahe
from harmbound.core import ConfigurationError, DataError, Interval, Policy
from harmbound.estimands import (
    Estimand,
    EstimandKind,
    build_spec,
    cvar_from_fna,
    cvar_ite_bounds,
    is_identifiable,
    optimal_policy_from,
    project_feasible,
    sharp_bounds_exact,
    sharp_bounds_optimal,
    width_terms,
)
from harmbound.oracle import dgp_mu, tabulated_mu

from _instances import AHE_KINDS, random_population

ONE = AtomLaw([0.0], [1.0])
ZERO, ALL = Policy.constant(0), Policy.constant(1)


def _mu(mu0, mu1):
    return tabulated_mu(np.atleast_1d(mu0), np.atleast_1d(mu1))


def test_optimal_upper_is_min_of_four():
    assert population_ahe(_mu(0.3, 0.6), ONE, build_spec("fna-upper-optimal")) == pytest.approx(0.3, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 1))
def test_identical_policies_give_zero_lower(mu0, mu1, arm):
    pol = Policy.constant(arm)
    spec = build_spec(Estimand("fna-lower-policy", pol, pol))
    assert population_ahe(_mu(mu0, mu1), ONE, spec) == 0.0


def test_reverse_switch_upper():
    spec = build_spec(Estimand("fna-upper-policy", ALL, ZERO))
    assert population_ahe(_mu(0.7, 0.4), ONE, spec) == pytest.approx(0.3, abs=1e-15)


def test_half_means_wholesale():
    assert sharp_bounds_exact(_mu(0.5, 0.5), ONE, ZERO, ALL).as_list() == [0.0, 0.5]


def test_single_atom_wholesale():
    iv = sharp_bounds_exact(_mu(0.7, 0.4), ONE, ZERO, ALL)
    assert iv.lo == pytest.approx(0.3) and iv.hi == pytest.approx(0.6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_deterministic_control_arm_identifies(seed):
    pop = random_population(np.random.default_rng(seed))
    pop.mu0 = np.round(pop.mu0)
    assert sharp_bounds_exact(pop.mu, pop.atoms, pop.pi0, pop.pi1).width == 0.0
    assert is_identifiable(pop.mu, pop.atoms, pop.pi0, pop.pi1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounds_ordered_and_width_identity(seed):
    pop = random_population(np.random.default_rng(seed))
    iv = sharp_bounds_exact(pop.mu, pop.atoms, pop.pi0, pop.pi1)
    assert 0.0 <= iv.lo <= iv.hi <= 1.0
    width = pop.atoms.expect(width_terms(pop.mu0, pop.mu1, pop.arms0.astype(float), pop.arms1.astype(float)))
    assert iv.width == pytest.approx(width, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(AHE_KINDS))
def test_encoding_matches_closed_form(seed, kind):
    pop = random_population(np.random.default_rng(seed))
    est = pop.estimand(kind)
    if kind is EstimandKind.FNA_UPPER_OPTIMAL:
        iv = sharp_bounds_optimal(pop.mu, pop.atoms)
    elif est.pi0 is None:
        iv = sharp_bounds_exact(pop.mu, pop.atoms, ZERO, ALL)
    else:
        iv = sharp_bounds_exact(pop.mu, pop.atoms, est.pi0, est.pi1)
    target = iv.lo if est.is_lower else iv.hi
    assert population_ahe(pop.mu, pop.atoms, build_spec(est)) == pytest.approx(target, abs=1e-12)


def test_identifiability_examples():
    pol = Policy.coordinate(1)
    assert is_identifiable(_mu(0.4, 0.6), ONE, pol, pol)
    assert not is_identifiable(_mu(0.5, 0.5), ONE, ZERO, ALL)
    atoms = AtomLaw([0.0, 1.0], [0.5, 0.5])
    mu = tabulated_mu([1.0, 0.5], [0.3, 0.0])
    assert is_identifiable(mu, atoms, ZERO, ALL)
    assert sharp_bounds_exact(mu, atoms, ZERO, ALL).width == 0.0


def test_zero_mass_atoms_do_not_matter():
    atoms = AtomLaw([0.0, 1.0], [1.0, 0.0])
    assert is_identifiable(tabulated_mu([1.0, 0.5], [0.3, 0.5]), atoms, ZERO, ALL)


def test_optimal_policy_rule():
    x = np.array([[-1.0], [0.0], [2.0]])
    assert optimal_policy_from(lambda x: np.zeros(len(x)))(x).tolist() == [0, 0, 0]
    assert optimal_policy_from(lambda x: x[:, 0])(x).tolist() == [0, 0, 1]


def test_optimal_policy_matches_generating_effect():
    x = np.random.default_rng(0).standard_normal((100_000, 7))
    tau = dgp_mu(x, 1, 3.0) - dgp_mu(x, 0, 3.0)
    assert np.array_equal(optimal_policy_from(lambda z: dgp_mu(z, 1, 3.0) - dgp_mu(z, 0, 3.0))(x), (tau > 0).astype(float))


def _brute_cvar(p_neg, p_zero, p_pos, alpha):
    """Mean of the worst ``alpha`` mass of a law on {-1, 0, 1}."""
    left, total = alpha, 0.0
    for value, mass in ((-1.0, p_neg), (0.0, p_zero), (1.0, p_pos)):
        take = min(mass, left)
        total += take * value
        left -= take
    return total / alpha


@pytest.mark.parametrize(
    "fna,ate,alpha,expected", [(0.0, 0.0, 0.5, 0.0), (0.25, 0.0, 0.25, -1.0), (0.25, 0.0, 0.5, -0.5)]
)
def test_cvar_examples(fna, ate, alpha, expected):
    assert cvar_from_fna(fna, ate, alpha) == pytest.approx(expected, abs=1e-15)
    p_pos = ate + fna
    assert _brute_cvar(fna, 1 - fna - p_pos, p_pos, alpha) == pytest.approx(expected, abs=1e-15)


def test_cvar_bounds_zero_effect():
    assert cvar_ite_bounds(Interval(0.0, 0.0), 0.0, 0.5).as_list() == [0.0, 0.0]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_cvar_formula_matches_brute_force(seed, alpha):
    p = np.random.default_rng(seed).dirichlet(np.ones(3))
    fna, ate = p[0], p[2] - p[0]
    assert cvar_from_fna(fna, ate, alpha) == pytest.approx(_brute_cvar(*p, alpha), abs=1e-12)


def test_cvar_bounds_are_monotone_in_fna():
    iv = cvar_ite_bounds(Interval(0.1, 0.3), 0.1, 0.2)
    assert iv.lo == cvar_from_fna(0.3, 0.1, 0.2) and iv.hi == cvar_from_fna(0.1, 0.1, 0.2)


def test_cvar_rejects_infeasible_inputs():
    with pytest.raises(DataError):
        cvar_ite_bounds(Interval(0.0, 0.6), 0.0, 0.5)
    with pytest.raises(DataError):
        cvar_ite_bounds(Interval(0.0, 0.1), -0.3, 0.5)
    with pytest.raises(ConfigurationError):
        cvar_ite_bounds(Interval(0.0, 0.1), 0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-0.5, 1.5), st.floats(0, 1))
def test_projection_lands_in_feasible_region(ate, lo, extra):
    fna, ate_p = project_feasible(Interval(lo, lo + extra), ate)
    iv = cvar_ite_bounds(fna, ate_p, 0.3)
    assert -1.0 <= iv.lo <= iv.hi <= 1.0


def test_estimand_validation():
    with pytest.raises(ConfigurationError):
        Estimand("fna-lower-policy")
    with pytest.raises(ConfigurationError):
        Estimand.parse("fna-middle")
    with pytest.raises(ConfigurationError):
        build_spec(Estimand("cvar-ite", alpha=0.3))
    with pytest.raises(ConfigurationError):
        Estimand("cvar-ite", alpha=1.2)
