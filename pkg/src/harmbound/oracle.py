"""Ground truth for checking the estimators.

Holds the synthetic simulation population, Monte-Carlo true bounds, a
brute-force search over joint laws of the potential outcomes, the margin
diagnostic and the replication harness.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .ahe import cross_fit, report_from_scores
from .core import DataError, Interval, ObservationTable, Policy, as_matrix
from .estimands import Estimand, EstimandKind, build_spec, sharp_bound_terms
from .nuisance import LearnerConfig

log = logging.getLogger(__name__)

DGP_DIM = 7


# ---------------------------------------------------------------------------
# Simulation population
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpSpec:
    beta: float
    seed: int = 0
    dim: int = DGP_DIM

    def __post_init__(self):
        if self.beta < 0:
            raise DataError("beta must be nonnegative")
        if self.dim != DGP_DIM:
            raise DataError("the simulation population is 7-dimensional")


def parity_sign(x) -> np.ndarray:
    """``+1`` if an odd number of ``x3..x7`` are positive, else ``-1``."""
    x = as_matrix(x)
    odd = np.sum(x[:, 2:7] > 0, axis=1) % 2
    return 2.0 * odd - 1.0


def dgp_mu(x, a: int, beta: float) -> np.ndarray:
    x = as_matrix(x)
    xi = parity_sign(x)
    side = 2.0 * (xi * x[:, 1] > 0) - 1.0
    differs = xi * x[:, 0] > 0
    slope = np.where(differs, 2.0 * a - 1.0, 1.0)
    return expit(beta * side * slope)


def dgp_propensity(x) -> np.ndarray:
    x = as_matrix(x)
    return expit(-(0.25 - (x[:, 2] > 0) + 0.5 * (x[:, 3] > 0)))


def sample(dgp: DgpSpec, n: int, seed: int | None = None) -> ObservationTable:
    """Draw ``n`` observations, recording the true propensity as the ``e`` column."""
    if n < 1:
        raise DataError("n must be at least 1")
    rng = np.random.default_rng(dgp.seed if seed is None else seed)
    x = rng.standard_normal((n, DGP_DIM))
    e = dgp_propensity(x)
    a = (rng.random(n) < e).astype(int)
    mu = np.where(a == 1, dgp_mu(x, 1, dgp.beta), dgp_mu(x, 0, dgp.beta))
    y = (rng.random(n) < mu).astype(int)
    return ObservationTable(x, a, y, e)


@dataclass(frozen=True)
class TrueBounds:
    interval: Interval
    se_lo: float
    se_hi: float
    draws: int

    def endpoint(self, lower: bool) -> float:
        return self.interval.lo if lower else self.interval.hi


def true_bounds(
    dgp: DgpSpec,
    estimand: Estimand | EstimandKind | str,
    mc_draws: int = 1_000_000,
    seed: int | None = None,
    chunk: int = 250_000,
) -> TrueBounds:
    """Monte-Carlo sharp bounds of the population, with standard errors.

    Wholesale kinds give the all-0 to all-1 interval, policy kinds the
    interval for their policies and ``fna-upper-optimal`` the interval for
    the optimal policy under the exact conditional means.
    """
    if mc_draws < 10_000:
        raise DataError("mc_draws must be at least 10^4")
    if not isinstance(estimand, Estimand):
        estimand = Estimand(EstimandKind(estimand))
    rng = np.random.default_rng(dgp.seed + 7919 if seed is None else seed)
    s_lo = s_hi = q_lo = q_hi = 0.0
    left = mc_draws
    while left:
        m = min(chunk, left)
        left -= m
        x = rng.standard_normal((m, DGP_DIM))
        mu0, mu1 = dgp_mu(x, 0, dgp.beta), dgp_mu(x, 1, dgp.beta)
        if estimand.kind is EstimandKind.FNA_UPPER_OPTIMAL:
            p1 = (mu1 - mu0 > 0).astype(float)
            p0 = 1 - p1
        elif estimand.kind in (EstimandKind.FNA_LOWER_POLICY, EstimandKind.FNA_UPPER_POLICY):
            p0, p1 = estimand.pi0(x), estimand.pi1(x)
        else:
            p0, p1 = np.zeros(m), np.ones(m)
        lo, hi = sharp_bound_terms(mu0, mu1, p0, p1)
        s_lo += lo.sum()
        s_hi += hi.sum()
        q_lo += (lo * lo).sum()
        q_hi += (hi * hi).sum()
    n = mc_draws
    m_lo, m_hi = s_lo / n, s_hi / n
    se_lo = math.sqrt(max(q_lo / n - m_lo**2, 0.0) / n)
    se_hi = math.sqrt(max(q_hi / n - m_hi**2, 0.0) / n)
    return TrueBounds(Interval(m_lo, m_hi), se_lo, se_hi, n)


# ---------------------------------------------------------------------------
# Brute-force coupling search
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CouplingInstance:
    """Per-atom arm means and masses; ``h`` is the sweep resolution."""

    mu0: np.ndarray
    mu1: np.ndarray
    p: np.ndarray
    h: float = 1e-4

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float).reshape(-1)
        mu1 = np.asarray(self.mu1, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if not mu0.size == mu1.size == p.size:
            raise DataError("mu0, mu1 and p need one entry per atom")
        if np.any((mu0 < 0) | (mu0 > 1) | (mu1 < 0) | (mu1 > 1)):
            raise DataError("arm means must lie in [0, 1]")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise DataError("atom masses must be nonnegative and sum to 1")
        if not 0 < self.h <= 1e-3:
            raise DataError("grid resolution must lie in (0, 1e-3]")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "p", p)


def joint_cells(mu0: float, mu1: float, q: np.ndarray) -> np.ndarray:
    """Cells ``P(Y0=i, Y1=j)`` as columns ``(00, 01, 10, 11)`` for ``q = P(Y0=1, Y1=0)``."""
    return np.column_stack([1 - mu1 - q, mu1 - mu0 + q, q, mu0 - q])


def coupling_bounds_bruteforce(inst: CouplingInstance, pi0, pi1) -> Interval:
    """Min and max of the fraction harmed over swept joint laws.

    ``pi0`` and ``pi1`` are per-atom arms.  For each atom, ``q`` runs over
    its feasible range on a grid of spacing at most ``h``; each grid point
    is a joint law whose cells are checked for validity and margins, and
    the harmed probability is read off its cells.  The aggregate is
    separable across atoms, so per-atom extremes suffice.
    """
    p0 = np.asarray(pi0, dtype=float).reshape(-1)
    p1 = np.asarray(pi1, dtype=float).reshape(-1)
    lo_total = hi_total = 0.0
    for mu0, mu1, w, a0, a1 in zip(inst.mu0, inst.mu1, inst.p, p0, p1):
        q_lo, q_hi = max(0.0, mu0 - mu1), min(mu0, 1.0 - mu1)
        steps = max(1, math.ceil((q_hi - q_lo) / inst.h))
        q = np.linspace(q_lo, q_hi, steps + 1)
        cells = joint_cells(mu0, mu1, q)
        if np.any(cells < -1e-12) or np.any(np.abs(cells.sum(axis=1) - 1) > 1e-12):
            raise DataError("swept coupling is not a probability law")
        if np.any(np.abs(cells[:, 2] + cells[:, 3] - mu0) > 1e-12) or np.any(
            np.abs(cells[:, 1] + cells[:, 3] - mu1) > 1e-12
        ):
            raise DataError("swept coupling does not reproduce the arm means")
        # harmed: Y(pi0)=1 and Y(pi1)=0
        harmed = a1 * (1 - a0) * cells[:, 2] + a0 * (1 - a1) * cells[:, 1]
        lo_total += w * harmed.min()
        hi_total += w * harmed.max()
    return Interval(lo_total, hi_total)


# ---------------------------------------------------------------------------
# Margin diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginProfile:
    t: np.ndarray
    prob: np.ndarray
    slope: float

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.prob.tolist()))


def margin_profile(values, t_grid: Sequence[float]) -> MarginProfile:
    """Empirical ``P(0 < |eta| <= t)`` over ``t_grid``.

    ``slope`` is the least-squares slope of log-probability on log-t over
    grid points with positive probability; NaN when fewer than two exist.
    """
    v = np.abs(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise DataError("margin_profile needs at least one value")
    t = np.asarray(t_grid, dtype=float)
    nz = np.sort(v[v > 0])
    prob = np.searchsorted(nz, t, side="right") / v.size
    keep = (prob > 0) & (t > 0)
    slope = float("nan")
    if np.count_nonzero(keep) >= 2:
        slope = float(np.polyfit(np.log(t[keep]), np.log(prob[keep]), 1)[0])
    return MarginProfile(t, prob, slope)


# ---------------------------------------------------------------------------
# Replication harness
# ---------------------------------------------------------------------------

CSV_FIELDS = ("n", "estimand", "estimator", "rmse", "coverage", "mean_ci_width", "reps", "seed")


@dataclass(frozen=True)
class ReplicationRow:
    n: int
    estimand: str
    estimator: str
    rmse: float
    coverage: float
    mean_ci_width: float
    reps: int
    seed: int

    def as_csv(self) -> list[str]:
        return [str(self.n), self.estimand, self.estimator, repr(self.rmse), repr(self.coverage),
                repr(self.mean_ci_width), str(self.reps), str(self.seed)]


def max_workers() -> int:
    cap = os.environ.get("HARMBOUND_THREADS")
    cpus = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(int(cap), cpus))
        except ValueError:
            log.warning("ignoring non-integer HARMBOUND_THREADS=%r", cap)
    return cpus


def _one_rep(args):
    dgp, estimands, n, rep, seed, cfg, k, ci_level = args
    seq = np.random.SeedSequence([seed, n, rep])
    data = sample(dgp, n, seed=seq.generate_state(1)[0])
    out = []
    for est in estimands:
        cf = cross_fit(data, build_spec(est), cfg, k)
        rep_ahe = report_from_scores(cf.phi, ci_level)
        rep_plug = report_from_scores(cf.plugin, ci_level)
        out.append(((rep_ahe.point, rep_ahe.ci.lo, rep_ahe.ci.hi), (rep_plug.point, rep_plug.ci.lo, rep_plug.ci.hi)))
    return rep, out


def replicate(
    dgp: DgpSpec,
    estimands: Iterable[Estimand | EstimandKind | str],
    n_grid: Sequence[int],
    reps: int,
    cfg: LearnerConfig | None = None,
    k: int = 5,
    ci_level: float = 0.95,
    seed: int = 0,
    mc_draws: int = 1_000_000,
    workers: int | None = None,
) -> list[ReplicationRow]:
    """RMSE, CI coverage and CI width of the cross-fitted and plug-in estimators.

    The plug-in comparator averages the AHE integrand at the same off-fold
    outcome estimates; its CI uses the naive standard error of that average.
    """
    if reps < 2:
        raise DataError("reps must be at least 2")
    if not n_grid:
        raise DataError("n_grid must be nonempty")
    cfg = cfg or LearnerConfig()
    ests = [e if isinstance(e, Estimand) else Estimand(EstimandKind(e)) for e in estimands]
    truth = [true_bounds(dgp, e, mc_draws).endpoint(e.is_lower) for e in ests]
    workers = workers or max_workers()
    rows: list[ReplicationRow] = []
    for n in n_grid:
        jobs = [(dgp, ests, n, r, seed, cfg, k, ci_level) for r in range(reps)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_one_rep, jobs))
        else:
            results = [_one_rep(j) for j in jobs]
        results.sort(key=lambda r: r[0])
        for i, (est, target) in enumerate(zip(ests, truth)):
            for j, label in enumerate(("ahe", "plugin")):
                stats = np.array([res[1][i][j] for res in results])
                point, lo, hi = stats[:, 0], stats[:, 1], stats[:, 2]
                rows.append(
                    ReplicationRow(
                        n=int(n),
                        estimand=est.name,
                        estimator=label,
                        rmse=float(np.sqrt(np.mean((point - target) ** 2))),
                        coverage=float(np.mean((lo <= target) & (target <= hi))),
                        mean_ci_width=float(np.mean(hi - lo)),
                        reps=reps,
                        seed=seed,
                    )
                )
        log.info("replicated n=%d (%d reps)", n, reps)
    return rows


def write_replication_csv(rows: Sequence[ReplicationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow(row.as_csv())


# ---------------------------------------------------------------------------
# Random finite instances
# ---------------------------------------------------------------------------


def tabulated(values):
    """Function of atom-index covariates (first column) returning ``values[index]``."""
    table = np.asarray(values, dtype=float)

    def fn(x):
        return table[as_matrix(x)[:, 0].astype(np.int64)]

    return fn


def tabulated_mu(mu0, mu1):
    f0, f1 = tabulated(mu0), tabulated(mu1)
    return lambda x, a: f1(x) if a else f0(x)


def tabulated_policy(arms) -> Policy:
    return Policy(tabulated(arms), name="tabulated")


def oracle_agreement(instances: int = 200, max_atoms: int = 5, h: float = 1e-4, seed: int = 0) -> dict:
    """Largest gap between closed-form and brute-force bounds over random instances.

    Also counts instances where :func:`is_identifiable` disagrees with the
    rule "brute-force width <= h", listing the exact widths of those
    instances.
    """
    from .ahe import AtomLaw
    from .estimands import is_identifiable, sharp_bounds_exact

    rng = np.random.default_rng(seed)
    worst = 0.0
    mismatch_widths: list[float] = []
    for _ in range(instances):
        k = int(rng.integers(1, max_atoms + 1))
        mu0, mu1 = rng.random(k), rng.random(k)
        p = rng.dirichlet(np.ones(k))
        p[-1] = 1.0 - p[:-1].sum()
        a0, a1 = rng.integers(0, 2, k), rng.integers(0, 2, k)
        atoms = AtomLaw(np.arange(k), p)
        mu = tabulated_mu(mu0, mu1)
        exact = sharp_bounds_exact(mu, atoms, tabulated_policy(a0), tabulated_policy(a1))
        brute = coupling_bounds_bruteforce(CouplingInstance(mu0, mu1, p, h), a0, a1)
        worst = max(worst, abs(exact.lo - brute.lo), abs(exact.hi - brute.hi))
        ident = is_identifiable(mu, atoms, tabulated_policy(a0), tabulated_policy(a1))
        if ident != (brute.width <= h):
            mismatch_widths.append(exact.width)
    return {
        "instances": instances,
        "max_discrepancy": worst,
        "grid": h,
        "identifiability_mismatches": len(mismatch_widths),
        "mismatch_widths": mismatch_widths,
    }


__all__ = [
    "CouplingInstance",
    "DgpSpec",
    "MarginProfile",
    "ReplicationRow",
    "TrueBounds",
    "coupling_bounds_bruteforce",
    "dgp_mu",
    "dgp_propensity",
    "margin_profile",
    "oracle_agreement",
    "replicate",
    "sample",
    "true_bounds",
    "write_replication_csv",
]
