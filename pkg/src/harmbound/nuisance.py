"""Fitting the nuisance functions: propensity, outcome means, CATE and CATS.

Each fitter takes an :class:`~harmbound.core.ObservationTable` and a
:class:`LearnerConfig` and returns an immutable predictor.  The pieces are
assembled into a :class:`NuisanceBundle` that the score function consumes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import (
    AheSpec,
    ConfigurationError,
    EtaRole,
    InvariantError,
    ObservationTable,
    as_matrix,
)
from .learners import REGRESSORS, ConstantPredictor, fit_regressor

PROPENSITY_MODES = tuple(dict.fromkeys(("auto", "known", "constant") + REGRESSORS))
ETA_MODES = ("plugin", "dr")


class EmptyArmWarning(UserWarning):
    """An arm has no training rows; its outcome model falls back to the pooled mean."""


@dataclass(frozen=True)
class LearnerConfig:
    """Learner selection and hyperparameters.

    ``propensity`` is ``auto`` (use the known column when present, otherwise
    ``logistic``), ``known``, ``constant`` (``propensity_value`` everywhere)
    or any regressor name.  ``effect`` is the regressor for the doubly robust
    pseudo-outcomes; when unset it follows ``outcome`` (``logistic`` maps to
    least squares since pseudo-outcomes are real valued).
    """

    propensity: str = "auto"
    propensity_value: float = 0.5
    outcome: str = "boosted-stumps"
    effect: str | None = None
    eta_mode: str = "dr"
    learning_rate: float = 0.1
    rounds: int = 200
    k: int | None = None
    ridge: float = 1e-6
    max_iter: int = 200
    tol: float = 1e-8
    clip: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.propensity not in PROPENSITY_MODES:
            raise ConfigurationError(f"propensity must be one of {PROPENSITY_MODES}, got {self.propensity!r}")
        if self.outcome not in REGRESSORS:
            raise ConfigurationError(f"outcome must be one of {REGRESSORS}, got {self.outcome!r}")
        if self.effect is not None and self.effect not in REGRESSORS:
            raise ConfigurationError(f"effect must be one of {REGRESSORS}, got {self.effect!r}")
        if self.eta_mode not in ETA_MODES:
            raise ConfigurationError(f"eta_mode must be one of {ETA_MODES}, got {self.eta_mode!r}")
        if not 0 < self.clip < 0.5:
            raise ConfigurationError("clip must lie in (0, 0.5)")
        if not self.clip <= self.propensity_value <= 1 - self.clip:
            raise ConfigurationError("propensity_value must lie in [clip, 1 - clip]")
        if not 0 < self.learning_rate <= 1:
            raise ConfigurationError("learning_rate must lie in (0, 1]")
        if self.rounds < 1 or self.max_iter < 1:
            raise ConfigurationError("rounds and max_iter must be positive")
        if self.k is not None and self.k < 1:
            raise ConfigurationError("k must be positive")
        if self.ridge < 0 or self.tol <= 0:
            raise ConfigurationError("ridge must be >= 0 and tol > 0")

    @property
    def effect_learner(self) -> str:
        kind = self.effect or self.outcome
        return "linear" if kind == "logistic" else kind

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> LearnerConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown learner config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> LearnerConfig:
        """Load a flat JSON object whose keys are the field names above."""
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def with_(self, **changes) -> LearnerConfig:
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------


class Clipped:
    def __init__(self, inner: Callable, lo: float, hi: float):
        self.inner = inner
        self.lo = lo
        self.hi = hi

    def __call__(self, x) -> np.ndarray:
        return np.clip(self.inner(x), self.lo, self.hi)


class KnownPropensity:
    """Looks up the supplied propensity of each covariate row."""

    def __init__(self, x: np.ndarray, e: np.ndarray):
        table: dict[bytes, float] = {}
        for row, val in zip(np.ascontiguousarray(x), e):
            key = row.tobytes()
            if table.setdefault(key, float(val)) != float(val):
                raise ConfigurationError("known propensity differs between identical covariate rows")
        self._table = table

    def __call__(self, x) -> np.ndarray:
        x = np.ascontiguousarray(as_matrix(x))
        try:
            return np.array([self._table[row.tobytes()] for row in x])
        except KeyError:
            raise ConfigurationError("known propensity requested for a covariate row not in the data") from None


class OutcomeModel:
    """``mu_hat(x, a)``: one predictor per arm."""

    def __init__(self, arm0: Callable, arm1: Callable):
        self.arms = (arm0, arm1)

    def __call__(self, x, a: int) -> np.ndarray:
        return np.clip(self.arms[int(a)](x), 0.0, 1.0)


class HingeNuisance:
    """``eta_hat`` assembled from coefficient functions and learned effects.

    With coefficients ``(c0, c1, c2)`` the target is
    ``(c1-c0)/2 * tau + (c0+c1)/2 * sigma + c2``; ``tau`` and ``sigma`` are
    whichever predictors were supplied.
    """

    def __init__(self, g: Callable, tau: Callable, sigma: Callable):
        self.g = g
        self.tau = tau
        self.sigma = sigma

    def __call__(self, x) -> np.ndarray:
        x = as_matrix(x)
        c = np.asarray(self.g(x), dtype=float)
        val = 0.5 * (c[:, 1] - c[:, 0]) * self.tau(x) + 0.5 * (c[:, 0] + c[:, 1]) * self.sigma(x) + c[:, 2]
        return np.clip(val, -3.0, 3.0)


class PluginHinge:
    def __init__(self, g: Callable, mu: Callable):
        self.g = g
        self.mu = mu

    def __call__(self, x) -> np.ndarray:
        x = as_matrix(x)
        c = np.asarray(self.g(x), dtype=float)
        return np.clip(c[:, 0] * self.mu(x, 0) + c[:, 1] * self.mu(x, 1) + c[:, 2], -3.0, 3.0)


@dataclass(frozen=True)
class NuisanceBundle:
    """Propensity, outcome means and one hinge nuisance per hinge term.

    ``e_hat(x)`` returns propensities, ``mu_hat(x, a)`` conditional means and
    each ``eta_hat[l](x)`` the estimated hinge argument.  All are vectorised
    over covariate rows.
    """

    e_hat: Callable
    mu_hat: Callable
    eta_hat: tuple[Callable, ...] = ()
    clip: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "eta_hat", tuple(self.eta_hat))

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(e, mu0, mu1, eta)`` at ``x`` with every range invariant checked."""
        x = as_matrix(x)
        n = x.shape[0]
        e = np.broadcast_to(np.asarray(self.e_hat(x), dtype=float), (n,))
        tol = 1e-12
        if np.any(e < self.clip - tol) or np.any(e > 1 - self.clip + tol):
            raise InvariantError(f"propensity estimate outside [{self.clip}, {1 - self.clip}]")
        mu0 = np.broadcast_to(np.asarray(self.mu_hat(x, 0), dtype=float), (n,))
        mu1 = np.broadcast_to(np.asarray(self.mu_hat(x, 1), dtype=float), (n,))
        if np.any((mu0 < -tol) | (mu0 > 1 + tol) | (mu1 < -tol) | (mu1 > 1 + tol)):
            raise InvariantError("outcome estimate outside [0, 1]")
        if self.eta_hat:
            eta = np.stack([np.broadcast_to(np.asarray(h(x), dtype=float), (n,)) for h in self.eta_hat])
        else:
            eta = np.zeros((0, n))
        if np.any(np.abs(eta) > 3 + tol):
            raise InvariantError("hinge nuisance outside [-3, 3]")
        return e, mu0, mu1, eta


# ---------------------------------------------------------------------------
# Fitters
# ---------------------------------------------------------------------------


def propensity_is_known(data: ObservationTable, cfg: LearnerConfig) -> bool:
    return _resolve_propensity(data, cfg) == "known"


def _resolve_propensity(train: ObservationTable, cfg: LearnerConfig) -> str:
    if cfg.propensity == "auto":
        return "known" if train.has_propensity else "logistic"
    return cfg.propensity


def fit_propensity(train: ObservationTable, cfg: LearnerConfig) -> Callable:
    """Predictor of ``P(A=1 | X)`` clipped to ``[clip, 1 - clip]``."""
    mode = _resolve_propensity(train, cfg)
    lo, hi = cfg.clip, 1 - cfg.clip
    if mode == "known":
        if not train.has_propensity:
            raise ConfigurationError("known propensity requested but the data has no e column")
        return Clipped(KnownPropensity(train.x, train.e), lo, hi)
    if mode == "constant":
        return Clipped(ConstantPredictor(cfg.propensity_value), lo, hi)
    return Clipped(fit_regressor(mode, train.x, train.a, binary=True, cfg=cfg), lo, hi)


def fit_outcome(train: ObservationTable, cfg: LearnerConfig) -> OutcomeModel:
    """Two binary regressions of ``Y`` on ``X``, one per arm."""
    arms = []
    for arm in (0, 1):
        rows = train.a == arm
        if not rows.any():
            warnings.warn(
                f"no training rows in arm {arm}; predicting the pooled outcome mean",
                EmptyArmWarning,
                stacklevel=2,
            )
            arms.append(ConstantPredictor(train.y.mean()))
            continue
        arms.append(fit_regressor(cfg.outcome, train.x[rows], train.y[rows], binary=True, cfg=cfg))
    return OutcomeModel(*arms)


def dr_pseudo_outcome(a, y, e, mu0, mu1) -> np.ndarray:
    """Doubly robust effect pseudo-outcome for rows with fitted ``e`` and ``mu``."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    mu_a = np.where(a == 1, mu1, mu0)
    return mu1 - mu0 + (a - e) / (e * (1 - e)) * (y - mu_a)


def _nested_halves(n: int, seed: int) -> list[np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(order[0::2]), np.sort(order[1::2])]


def _fit_effect(train, cfg, e_hat, mu_hat, sign: int, nested: bool) -> Callable:
    """Shared machinery of :func:`fit_cate` (``sign=-1``) and :func:`fit_cats` (``sign=+1``).

    The target is the contrast ``mu1 + sign*mu0``.  Arm-0 outcomes are
    multiplied by ``-sign``, so the transformed arm means are
    ``(-sign*mu0, mu1)`` and their difference is the target.
    """
    x, a, y = train.x, train.a.astype(float), train.y.astype(float)
    flip = np.where(a == 1, 1.0, -sign)
    y_t = flip * y
    psi = np.empty(train.n)
    if nested and train.n >= 4:
        halves = _nested_halves(train.n, cfg.seed)
        for held, fit_on in ((halves[0], halves[1]), (halves[1], halves[0])):
            part = train.subset(fit_on)
            if e_hat is not None and _resolve_propensity(train, cfg) == "known":
                e_fn = e_hat
            elif _resolve_propensity(train, cfg) == "known":
                e_fn = fit_propensity(train, cfg)
            else:
                e_fn = fit_propensity(part, cfg)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                mu_fn = fit_outcome(part, cfg)
            xh = x[held]
            psi[held] = dr_pseudo_outcome(a[held], y_t[held], e_fn(xh), -sign * mu_fn(xh, 0), mu_fn(xh, 1))
    else:
        if e_hat is None:
            e_hat = fit_propensity(train, cfg)
        if mu_hat is None:
            mu_hat = fit_outcome(train, cfg)
        psi = dr_pseudo_outcome(a, y_t, e_hat(x), -sign * mu_hat(x, 0), mu_hat(x, 1))
    return fit_regressor(cfg.effect_learner, x, psi, binary=False, cfg=cfg)


class _ArmContrast:
    def __init__(self, mu: Callable, sign: int):
        self.mu = mu
        self.sign = sign

    def __call__(self, x) -> np.ndarray:
        return self.mu(x, 1) + self.sign * self.mu(x, 0)


def fit_cate(
    train: ObservationTable,
    cfg: LearnerConfig,
    e_hat: Callable | None = None,
    mu_hat: Callable | None = None,
    nested: bool = True,
) -> Callable:
    """Predictor of ``tau(x) = mu(x, 1) - mu(x, 0)``, clipped to [-1, 1].

    In ``plugin`` mode this is the difference of ``mu_hat`` (fitted here if
    not supplied).  In ``dr`` mode the doubly robust pseudo-outcomes are
    regressed on ``x``; with ``nested`` they are built from propensity and
    outcome models fitted on the opposite half of ``train``, otherwise from
    the supplied ``e_hat`` and ``mu_hat``.
    """
    if cfg.eta_mode == "plugin":
        return Clipped(_ArmContrast(mu_hat or fit_outcome(train, cfg), -1), -1.0, 1.0)
    return Clipped(_fit_effect(train, cfg, e_hat, mu_hat, sign=-1, nested=nested), -1.0, 1.0)


def fit_cats(
    train: ObservationTable,
    cfg: LearnerConfig,
    e_hat: Callable | None = None,
    mu_hat: Callable | None = None,
    nested: bool = True,
) -> Callable:
    """Predictor of ``sigma(x) = mu(x, 1) + mu(x, 0)``, clipped to [0, 2].

    Runs the CATE machinery on the outcome ``(2a - 1) * y``, whose arm means
    are ``mu(x, 1)`` and ``-mu(x, 0)``.
    """
    if cfg.eta_mode == "plugin":
        return Clipped(_ArmContrast(mu_hat or fit_outcome(train, cfg), +1), 0.0, 2.0)
    return Clipped(_fit_effect(train, cfg, e_hat, mu_hat, sign=+1, nested=nested), 0.0, 2.0)


def fit_bundle(
    train: ObservationTable, spec: AheSpec, cfg: LearnerConfig, e_hat: Callable | None = None
) -> NuisanceBundle:
    """Fit every nuisance the score of ``spec`` needs on ``train``.

    A supplied ``e_hat`` (a design-known propensity) is used as is.
    """
    if e_hat is None:
        e_hat = fit_propensity(train, cfg)
    mu_hat = fit_outcome(train, cfg)
    roles = set(spec.eta_roles)
    tau_hat = sigma_hat = None
    if cfg.eta_mode == "dr":
        if EtaRole.CATE in roles:
            tau_hat = fit_cate(train, cfg, e_hat, mu_hat)
        if EtaRole.CATS in roles:
            sigma_hat = fit_cats(train, cfg, e_hat, mu_hat)
    tau_plug = _ArmContrast(mu_hat, -1)
    sigma_plug = _ArmContrast(mu_hat, +1)
    etas = []
    for g, role in zip(spec.g[1:], spec.eta_roles):
        if cfg.eta_mode == "plugin" or role is EtaRole.CUSTOM:
            etas.append(PluginHinge(g, mu_hat))
        elif role is EtaRole.CATE:
            etas.append(HingeNuisance(g, tau_hat, sigma_plug))
        else:
            etas.append(HingeNuisance(g, tau_plug, sigma_hat))
    return NuisanceBundle(e_hat, mu_hat, tuple(etas), clip=cfg.clip)


def fixed_bundle(
    e: Callable,
    mu: Callable,
    spec: AheSpec,
    eta: Sequence[Callable] | None = None,
    clip: float = 0.01,
) -> NuisanceBundle:
    """Bundle from given functions; hinge nuisances default to the plug-in of ``mu``."""
    if eta is None:
        eta = [PluginHinge(g, mu) for g in spec.g[1:]]
    return NuisanceBundle(e, mu, tuple(eta), clip=clip)
