"""Score function, cross-fitted estimator and population-level evaluators."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable

import numpy as np

from .core import (
    AheSpec,
    ConfigurationError,
    DataError,
    Interval,
    InvariantError,
    ObservationTable,
    as_matrix,
    fold_assign,
    fold_members,
)
from .nuisance import LearnerConfig, NuisanceBundle, fit_bundle, fit_propensity, propensity_is_known


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


# ---------------------------------------------------------------------------
# Score
# ---------------------------------------------------------------------------


def _score(spec: AheSpec, coef, a, y, e, mu0, mu1, eta) -> np.ndarray:
    # coef: (m+1, n, 3); eta: (m, n)
    w = coef[0].copy()
    if spec.m:
        fire = (eta <= 0).astype(float) * np.asarray(spec.rho, dtype=float)[:, None]
        w += np.einsum("ln,lnj->nj", fire, coef[1:])
    arm0 = ((a - e) * mu0 + (1 - a) * y) / (1 - e)
    arm1 = ((e - a) * mu1 + a * y) / e
    return w[:, 2] + w[:, 0] * arm0 + w[:, 1] * arm1


def phi_scores(x, a, y, bundle: NuisanceBundle, spec: AheSpec) -> np.ndarray:
    """Score of every row under the given nuisances.

    Hinge ``l`` fires where ``eta_hat_l(x) <= 0``.  Raises
    :class:`InvariantError` if the bundle's estimates leave their ranges.
    """
    x = as_matrix(x)
    a = np.asarray(a, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(bundle.eta_hat) != spec.m:
        raise InvariantError(f"bundle has {len(bundle.eta_hat)} hinge nuisances, spec needs {spec.m}")
    e, mu0, mu1, eta = bundle.evaluate(x)
    return _score(spec, spec.coefficients(x), a, y, e, mu0, mu1, eta)


def phi_score(x, a: int, y: int, bundle: NuisanceBundle, spec: AheSpec) -> float:
    """Score of a single observation."""
    return float(phi_scores(as_matrix(x), [a], [y], bundle, spec)[0])


# ---------------------------------------------------------------------------
# Cross-fitted estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateReport:
    estimand: str
    point: float
    se: float
    ci_level: float
    ci: Interval
    n: int
    folds: int
    seed: int | None
    per_fold: tuple[float, ...]
    learners: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "point": self.point,
            "se": self.se,
            "ci_level": self.ci_level,
            "ci": self.ci.as_list(),
            "n": self.n,
            "folds": self.folds,
            "seed": self.seed,
            "learners": dict(self.learners),
            "per_fold": list(self.per_fold),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def summary(self) -> str:
        return (
            f"{self.estimand}: {self.point:.4f} (se {self.se:.4f}), "
            f"{100 * self.ci_level:g}% CI [{self.ci.lo:.4f}, {self.ci.hi:.4f}], n={self.n}, K={self.folds}"
        )


def report_from_scores(
    phi: np.ndarray,
    ci_level: float,
    estimand: str = "ahe",
    folds: np.ndarray | None = None,
    k: int = 1,
    seed: int | None = None,
    learners: dict | None = None,
) -> EstimateReport:
    """Point estimate, standard error and CI from a vector of scores."""
    if not 0 < ci_level < 1:
        raise ConfigurationError("ci_level must lie in (0, 1)")
    phi = np.asarray(phi, dtype=float)
    n = phi.size
    point = float(np.sum(phi) / n)
    se = float(np.sqrt(np.sum((phi - point) ** 2) / (n * (n - 1)))) if n > 1 else 0.0
    z = normal_quantile((1 + ci_level) / 2)
    if folds is None:
        folds = np.zeros(n, dtype=np.int64)
    per_fold = tuple(float(phi[folds == j].mean()) for j in range(k))
    return EstimateReport(
        estimand=estimand,
        point=point,
        se=se,
        ci_level=ci_level,
        ci=Interval(point - z * se, point + z * se),
        n=n,
        folds=k,
        seed=seed,
        per_fold=per_fold,
        learners=learners or {},
    )


@dataclass(frozen=True)
class CrossFit:
    """Raw cross-fitting output: scores and plug-in integrand per row."""

    phi: np.ndarray
    plugin: np.ndarray
    folds: np.ndarray
    k: int


def cross_fit(
    data: ObservationTable,
    spec: AheSpec,
    cfg: LearnerConfig,
    k: int = 5,
    shuffle_seed: int | None = None,
) -> CrossFit:
    """Fit nuisances off-fold and score each fold's rows.

    Also records the plug-in integrand (the AHE integrand at the off-fold
    ``mu_hat``) for comparison studies.
    """
    if k < 1 or data.n < 2 * k:
        raise ConfigurationError(f"need n >= 2*folds, got n={data.n}, folds={k}")
    folds = fold_assign(data.n, k, shuffle_seed)
    # a design-known propensity is available for every row, held out or not
    known = fit_propensity(data, cfg) if propensity_is_known(data, cfg) else None
    phi = np.empty(data.n)
    plugin = np.empty(data.n)
    for j, rows in enumerate(fold_members(folds, k)):
        if rows.size == 0:
            raise ConfigurationError(f"fold {j} is empty")
        train = data.subset(np.flatnonzero(folds != j))
        bundle = fit_bundle(train, spec, cfg, e_hat=known)
        x = data.x[rows]
        e, mu0, mu1, eta = bundle.evaluate(x)
        coef = spec.coefficients(x)
        phi[rows] = _score(spec, coef, data.a[rows].astype(float), data.y[rows].astype(float), e, mu0, mu1, eta)
        plugin[rows] = ahe_integrand(spec, coef, mu0, mu1)
    return CrossFit(phi, plugin, folds, k)


def estimate(
    data: ObservationTable,
    spec: AheSpec,
    cfg: LearnerConfig | None = None,
    k: int = 5,
    ci_level: float = 0.95,
    shuffle_seed: int | None = None,
) -> EstimateReport:
    """Cross-fitted point estimate, standard error and normal CI for ``spec``."""
    cfg = cfg or LearnerConfig()
    if not 0 < ci_level < 1:
        raise ConfigurationError("ci_level must lie in (0, 1)")
    cf = cross_fit(data, spec, cfg, k, shuffle_seed)
    return report_from_scores(
        cf.phi, ci_level, estimand=spec.name, folds=cf.folds, k=k, seed=cfg.seed, learners=cfg.to_dict()
    )


def estimate_fixed(
    data: ObservationTable, spec: AheSpec, bundle: NuisanceBundle, ci_level: float = 0.95
) -> EstimateReport:
    """Estimate with nuisances supplied as fixed functions (no fitting)."""
    phi = phi_scores(data.x, data.a, data.y, bundle, spec)
    return report_from_scores(phi, ci_level, estimand=spec.name)


# ---------------------------------------------------------------------------
# Population side
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AtomLaw:
    """A finitely supported covariate distribution."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.x) if np.ndim(self.x) > 1 else np.asarray(self.x, dtype=float).reshape(-1, 1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if p.size != x.shape[0]:
            raise DataError("need one probability per atom")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise DataError(f"atom probabilities must be nonnegative and sum to 1, got sum {p.sum()!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.p, values))


def ahe_integrand(spec: AheSpec, coef: np.ndarray, mu0: np.ndarray, mu1: np.ndarray) -> np.ndarray:
    """Linear part plus signed hinges at given conditional means."""
    lin = coef[0, :, 0] * mu0 + coef[0, :, 1] * mu1 + coef[0, :, 2]
    if spec.m:
        eta = spec.eta(None, mu0, mu1, coef)
        lin = lin + np.asarray(spec.rho, dtype=float) @ np.minimum(0.0, eta)
    return lin


def population_ahe(mu: Callable, atoms: AtomLaw, spec: AheSpec) -> float:
    """Exact average hinge effect under a finite covariate law."""
    mu0, mu1 = np.asarray(mu(atoms.x, 0), dtype=float), np.asarray(mu(atoms.x, 1), dtype=float)
    return atoms.expect(ahe_integrand(spec, spec.coefficients(atoms.x), mu0, mu1))


def population_phi_mean(mu: Callable, e: Callable, atoms: AtomLaw, bundle: NuisanceBundle, spec: AheSpec) -> float:
    """Exact mean score under the law ``(atoms, e, mu)`` for a fixed bundle.

    Sums over both arms and both outcomes with their true probabilities.
    """
    x = atoms.x
    k = x.shape[0]
    e_true = np.asarray(e(x), dtype=float)
    mu_true = (np.asarray(mu(x, 0), dtype=float), np.asarray(mu(x, 1), dtype=float))
    eh, mu0h, mu1h, eta = bundle.evaluate(x)
    coef = spec.coefficients(x)
    total = np.zeros(k)
    for a in (0, 1):
        pa = e_true if a else 1 - e_true
        for y in (0, 1):
            py = mu_true[a] if y else 1 - mu_true[a]
            s = _score(spec, coef, np.full(k, float(a)), np.full(k, float(y)), eh, mu0h, mu1h, eta)
            total += pa * py * s
    return atoms.expect(total)
