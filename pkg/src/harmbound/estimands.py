"""Estimand constructors, closed-form sharp bounds and the CVaR mapping."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ahe import AtomLaw
from .core import (
    AheSpec,
    ConfigurationError,
    DataError,
    EtaRole,
    Interval,
    InvariantError,
    Policy,
    constant_triple,
    policy_indicator_functions,
)


class EstimandKind(str, enum.Enum):
    FNA_LOWER_WHOLESALE = "fna-lower"
    FNA_UPPER_WHOLESALE = "fna-upper"
    FNA_LOWER_POLICY = "fna-lower-policy"
    FNA_UPPER_POLICY = "fna-upper-policy"
    FNA_UPPER_OPTIMAL = "fna-upper-optimal"
    CVAR_ITE = "cvar-ite"


POLICY_KINDS = (EstimandKind.FNA_LOWER_POLICY, EstimandKind.FNA_UPPER_POLICY)
LOWER_KINDS = (EstimandKind.FNA_LOWER_WHOLESALE, EstimandKind.FNA_LOWER_POLICY)


@dataclass(frozen=True)
class Estimand:
    """An estimand kind with its policies (policy kinds) or level (CVaR)."""

    kind: EstimandKind
    pi0: Policy | None = None
    pi1: Policy | None = None
    alpha: float | None = None

    def __post_init__(self):
        kind = EstimandKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in POLICY_KINDS and (self.pi0 is None or self.pi1 is None):
            raise ConfigurationError(f"{kind.value} needs both pi0 and pi1")
        if kind is EstimandKind.CVAR_ITE and not (self.alpha is not None and 0 < self.alpha < 1):
            raise ConfigurationError("cvar-ite needs alpha in (0, 1)")

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def is_lower(self) -> bool:
        return self.kind in LOWER_KINDS

    @classmethod
    def parse(cls, name: str, pi0: Policy | None = None, pi1: Policy | None = None, alpha: float | None = None):
        try:
            kind = EstimandKind(name)
        except ValueError:
            names = ", ".join(k.value for k in EstimandKind)
            raise ConfigurationError(f"unknown estimand {name!r}; choose from {names}") from None
        return cls(kind, pi0, pi1, alpha)


def build_spec(estimand: Estimand | EstimandKind | str) -> AheSpec:
    """Encode an FNA bound as an average hinge effect."""
    if not isinstance(estimand, Estimand):
        estimand = Estimand(EstimandKind(estimand))
    kind = estimand.kind
    if kind is EstimandKind.FNA_LOWER_WHOLESALE:
        return AheSpec((-1,), (constant_triple(0, 0, 0), constant_triple(-1, 1, 0)), (EtaRole.CATE,), kind.value)
    if kind is EstimandKind.FNA_UPPER_WHOLESALE:
        return AheSpec((1,), (constant_triple(1, 0, 0), constant_triple(-1, -1, 1)), (EtaRole.CATS,), kind.value)
    if kind is EstimandKind.FNA_UPPER_OPTIMAL:
        return AheSpec(
            (1, 1),
            (constant_triple(1, 0, 0), constant_triple(-1, 1, 0), constant_triple(-1, -1, 1)),
            (EtaRole.CATE, EtaRole.CATS),
            kind.value,
        )
    if kind in POLICY_KINDS:
        terms = policy_indicator_functions(estimand.pi0, estimand.pi1)
        if kind is EstimandKind.FNA_LOWER_POLICY:
            return AheSpec((-1,), (constant_triple(0, 0, 0), terms.hinge_lower), (EtaRole.CATE,), kind.value)
        return AheSpec((1,), (terms.base, terms.hinge_upper), (EtaRole.CATS,), kind.value)
    raise ConfigurationError(f"{kind.value} is not an average hinge effect; it composes FNA and ATE estimates")


def ate_spec() -> AheSpec:
    """The average treatment effect as a hinge-free AHE."""
    return AheSpec((), (constant_triple(-1, 1, 0),), (), "ate")


# ---------------------------------------------------------------------------
# Closed-form bounds on a finite covariate law
# ---------------------------------------------------------------------------


def _atom_terms(mu: Callable, atoms: AtomLaw, pi0: Policy, pi1: Policy):
    mu0 = np.asarray(mu(atoms.x, 0), dtype=float)
    mu1 = np.asarray(mu(atoms.x, 1), dtype=float)
    if np.any((mu0 < 0) | (mu0 > 1) | (mu1 < 0) | (mu1 > 1)):
        raise DataError("conditional means must lie in [0, 1]")
    return mu0, mu1, pi0(atoms.x), pi1(atoms.x)


def sharp_bound_terms(mu0, mu1, p0, p1) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom lower and upper integrands of the sharp FNA bounds."""
    tau = mu1 - mu0
    lo = np.maximum((p0 - p1) * tau, 0.0)
    fwd = p1 * (1 - p0)
    back = p0 * (1 - p1)
    hi = np.minimum(fwd * mu0 + back * (1 - mu0), fwd * (1 - mu1) + back * mu1)
    return lo, hi


def sharp_bounds_exact(mu: Callable, atoms: AtomLaw, pi0: Policy, pi1: Policy) -> Interval:
    """Sharp bounds on the fraction harmed by switching from ``pi0`` to ``pi1``."""
    lo, hi = sharp_bound_terms(*_atom_terms(mu, atoms, pi0, pi1))
    if np.any(lo > hi + 1e-12):
        raise InvariantError("per-atom lower bound exceeds upper bound")
    return Interval(atoms.expect(lo), atoms.expect(hi))


def sharp_bounds_optimal(mu: Callable, atoms: AtomLaw) -> Interval:
    """Sharp bounds on the misclassification rate of the optimal policy."""
    star = optimal_policy_from(lambda x: np.asarray(mu(x, 1)) - np.asarray(mu(x, 0)))
    return sharp_bounds_exact(mu, atoms, Policy(lambda x: 1 - star(x), "1-pi*"), star)


def width_terms(mu0, mu1, p0, p1) -> np.ndarray:
    """Per-atom width ``(p0 + p1 - 2 p0 p1) * min(mu0, 1-mu0, mu1, 1-mu1)``."""
    return (p0 + p1 - 2 * p0 * p1) * np.minimum.reduce([mu0, 1 - mu0, mu1, 1 - mu1])


def is_identifiable(mu: Callable, atoms: AtomLaw, pi0: Policy, pi1: Policy) -> bool:
    """Whether the fraction harmed is pinned down by the observed law.

    True iff on every atom of positive mass the policies agree or one arm's
    outcome is deterministic.  Cross-checked against the bound width.
    """
    mu0, mu1, p0, p1 = _atom_terms(mu, atoms, pi0, pi1)
    pos = atoms.p > 0
    clause = (p0 == p1) | np.isin(mu0, (0.0, 1.0)) | np.isin(mu1, (0.0, 1.0))
    by_clause = bool(np.all(clause[pos]))
    by_width = bool(np.all(width_terms(mu0, mu1, p0, p1)[pos] == 0.0))
    if by_clause != by_width:
        raise InvariantError("identifiability clause and bound width disagree")
    return by_clause


def optimal_policy_from(tau_hat: Callable) -> Policy:
    """Treat exactly where the effect estimate is positive; ties go to arm 0."""
    return Policy.threshold(tau_hat, name="pi*")


# ---------------------------------------------------------------------------
# CVaR of the individual effect
# ---------------------------------------------------------------------------


def cvar_from_fna(fna: float, ate: float, alpha: float) -> float:
    """CVaR at level ``alpha`` of a {-1, 0, 1} effect with given FNA and ATE."""
    return max(-1.0, -fna / alpha, 1.0 - (1.0 - ate) / alpha)


def cvar_ite_bounds(fna: Interval, ate: float, alpha: float, tol: float = 1e-12) -> Interval:
    """Sharp interval for the CVaR of the individual effect.

    Raises :class:`DataError` when no effect law has the given ATE and an
    FNA inside ``fna``.
    """
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    if not -1 - tol <= ate <= 1 + tol:
        raise DataError(f"ATE {ate!r} outside [-1, 1]")
    if fna.lo < -tol or fna.hi > 1 + tol:
        raise DataError("FNA bounds must lie in [0, 1]")
    # P(ITE=-1) = f >= max(0, -ATE) and P(ITE=0) = 1 - ATE - 2f >= 0
    if fna.lo < max(0.0, -ate) - tol or fna.hi > (1 - ate) / 2 + tol:
        raise DataError(f"FNA interval [{fna.lo}, {fna.hi}] is infeasible with ATE {ate}")
    lo = cvar_from_fna(fna.hi, ate, alpha)
    hi = cvar_from_fna(fna.lo, ate, alpha)
    return Interval(min(max(lo, -1.0), 1.0), min(max(hi, -1.0), 1.0))


def project_feasible(fna: Interval, ate: float) -> tuple[Interval, float]:
    """Clamp estimated ``(fna, ate)`` onto the feasible region of effect laws."""
    ate = min(max(ate, -1.0), 1.0)
    floor, ceil = max(0.0, -ate), (1 - ate) / 2
    lo = min(max(fna.lo, floor), ceil)
    hi = min(max(fna.hi, lo), ceil)
    return Interval(lo, hi), ate
