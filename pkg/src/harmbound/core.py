"""Domain types shared by every other module.

Covariates are dense float arrays of shape ``(n, d)``; every function-valued
object in the package (policies, coefficient triples, nuisance predictors)
is vectorised over the rows of such an array.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]

INTERVAL_TOL = 1e-12


class HarmboundError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(HarmboundError, ValueError):
    """Invalid fold counts, learner settings or estimand parameters."""


class DataError(HarmboundError, ValueError):
    """Malformed observation data."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class InvariantError(HarmboundError, RuntimeError):
    """An internal range or consistency invariant was violated."""


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise DataError(f"covariates must be 2-dimensional, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Coarsened observations ``(X, A, Y)`` with an optional known propensity.

    Parameters
    ----------
    x : array of shape (n, d)
        Covariates.
    a : array of shape (n,)
        Treatment arm, 0 or 1.
    y : array of shape (n,)
        Binary outcome.
    e : array of shape (n,), optional
        Known propensity ``P(A=1 | X)`` for each row, strictly inside (0, 1).
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    e: np.ndarray | None = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float, order="C")
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError(f"x must be 2-dimensional, got shape {x.shape}")
        n = x.shape[0]
        if n < 1:
            raise DataError("an observation table needs at least one row")
        a = np.asarray(self.a)
        y = np.asarray(self.y)
        if a.shape != (n,) or y.shape != (n,):
            raise DataError("a and y must be 1-dimensional with one entry per row")
        for name, col in (("a", a), ("y", y)):
            bad = np.flatnonzero((col != 0) & (col != 1))
            if bad.size:
                raise DataError(f"{name} must be 0 or 1, got {col[bad[0]]!r}", row=int(bad[0]))
        e = self.e
        if e is not None:
            e = np.array(e, dtype=float)
            if e.shape != (n,):
                raise DataError("e must carry one propensity per row")
            bad = np.flatnonzero(~((e > 0.0) & (e < 1.0)))
            if bad.size:
                raise DataError(f"known propensity must lie in (0, 1), got {e[bad[0]]!r}", row=int(bad[0]))
            e.setflags(write=False)
        x.setflags(write=False)
        a = a.astype(np.int8)
        y = y.astype(np.int8)
        a.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "e", e)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def has_propensity(self) -> bool:
        return self.e is not None

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> ObservationTable:
        idx = np.asarray(idx)
        return ObservationTable(
            self.x[idx], self.a[idx], self.y[idx], None if self.e is None else self.e[idx]
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> ObservationTable:
        """Read the canonical ``x1,...,xd,a,y[,e]`` CSV layout.

        Row numbers in :class:`DataError` messages are file line numbers.
        """
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError("empty file", row=1) from None
            d, has_e = _check_header(header)
            xs, arms, ys, es = [], [], [], []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise DataError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
                try:
                    vals = [float(c) for c in row]
                except ValueError as exc:
                    raise DataError(f"cannot parse number ({exc})", row=lineno) from None
                if not all(math.isfinite(v) for v in vals):
                    raise DataError("non-finite value", row=lineno)
                a, y = vals[d], vals[d + 1]
                if a not in (0.0, 1.0):
                    raise DataError(f"a must be 0 or 1, got {row[d]!r}", row=lineno)
                if y not in (0.0, 1.0):
                    raise DataError(f"y must be 0 or 1, got {row[d + 1]!r}", row=lineno)
                if has_e:
                    if not 0.0 < vals[d + 2] < 1.0:
                        raise DataError(f"e must lie in (0, 1), got {row[d + 2]!r}", row=lineno)
                    es.append(vals[d + 2])
                xs.append(vals[:d])
                arms.append(int(a))
                ys.append(int(y))
        if not xs:
            raise DataError("no data rows", row=2)
        return cls(
            np.array(xs, dtype=float).reshape(len(xs), d),
            np.array(arms),
            np.array(ys),
            np.array(es) if has_e else None,
        )

    def to_csv(self, path: str | Path) -> None:
        header = [f"x{j + 1}" for j in range(self.d)] + ["a", "y"]
        if self.e is not None:
            header.append("e")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(self.n):
                row = [repr(float(v)) for v in self.x[i]] + [int(self.a[i]), int(self.y[i])]
                if self.e is not None:
                    row.append(repr(float(self.e[i])))
                writer.writerow(row)


def _check_header(header: list[str]) -> tuple[int, bool]:
    has_e = bool(header) and header[-1] == "e"
    core = header[:-1] if has_e else header
    if len(core) < 3 or core[-2:] != ["a", "y"]:
        raise DataError("header must read x1,...,xd,a,y[,e]", row=1)
    d = len(core) - 2
    if core[:d] != [f"x{j + 1}" for j in range(d)]:
        raise DataError("covariate columns must be named x1..xd in order", row=1)
    return d, has_e


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Policy:
    """A deterministic map from covariates to an arm in {0, 1}.

    ``fn`` receives an ``(n, d)`` array and returns ``n`` arms.  Use the
    class-method constructors rather than ``fn`` directly where possible.
    """

    def __init__(self, fn: ArrayFn, name: str = "custom"):
        self._fn = fn
        self.name = name

    def __call__(self, x) -> np.ndarray:
        x = as_matrix(x)
        arms = np.asarray(self._fn(x))
        if arms.shape == ():
            arms = np.full(x.shape[0], arms)
        arms = arms.astype(float)
        if arms.shape != (x.shape[0],) or np.any((arms != 0) & (arms != 1)):
            raise InvariantError(f"policy {self.name!r} must return one 0/1 arm per row")
        return arms

    def __repr__(self) -> str:
        return f"Policy({self.name})"

    @classmethod
    def constant(cls, arm: int) -> Policy:
        if arm not in (0, 1):
            raise ConfigurationError(f"constant policy arm must be 0 or 1, got {arm!r}")
        return cls(lambda x: np.full(x.shape[0], float(arm)), name=f"constant{arm}")

    @classmethod
    def threshold(cls, score: ArrayFn, name: str = "threshold") -> Policy:
        """Treat exactly where ``score(x) > 0``."""
        return cls(lambda x: (np.asarray(score(x)) > 0).astype(float), name=name)

    @classmethod
    def coordinate(cls, column: int) -> Policy:
        """Treat where covariate ``column`` (1-based, like the CSV header) is positive."""
        if column < 1:
            raise ConfigurationError("coordinate policies use 1-based column indices")
        j = column - 1
        return cls(lambda x: (x[:, j] > 0).astype(float), name=f"threshold:{column}")

    @classmethod
    def rowwise(cls, fn: Callable[[np.ndarray], int], name: str = "custom") -> Policy:
        """Wrap a function of a single covariate vector."""
        return cls(lambda x: np.array([fn(row) for row in x], dtype=float), name=name)

    @classmethod
    def parse(cls, text: str) -> Policy:
        """Parse ``constant0``, ``constant1`` or ``threshold:<column>``."""
        text = text.strip()
        if text in ("constant0", "0"):
            return cls.constant(0)
        if text in ("constant1", "1"):
            return cls.constant(1)
        if text.startswith("threshold:"):
            try:
                col = int(text.split(":", 1)[1])
            except ValueError:
                raise ConfigurationError(f"bad policy spec {text!r}") from None
            return cls.coordinate(col)
        raise ConfigurationError(
            f"bad policy spec {text!r}; expected constant0, constant1 or threshold:<column>"
        )


class PolicyTerms(NamedTuple):
    """Coefficient functions induced by a pair of policies."""

    base: ArrayFn
    hinge_lower: ArrayFn
    hinge_upper: ArrayFn
    active: ArrayFn


def policy_indicator_functions(pi0: Policy, pi1: Policy) -> PolicyTerms:
    """Coefficient triples for the policy-change bounds.

    ``base`` is the linear part ``(pi1(1-pi0), pi0(1-pi1), 0)`` of the
    upper bound, ``hinge_upper`` is ``(-s, -s, s)`` and ``hinge_lower`` is
    ``(pi0-pi1, pi1-pi0, 0)``, where ``s = (pi1-pi0)^2`` flags the rows on
    which the two policies disagree.
    """

    def active(x):
        d = pi1(x) - pi0(x)
        return d * d

    def base(x):
        p0, p1 = pi0(x), pi1(x)
        return np.column_stack([p1 * (1 - p0), p0 * (1 - p1), np.zeros_like(p0)])

    def hinge_lower(x):
        d = pi1(x) - pi0(x)
        return np.column_stack([-d, d, np.zeros_like(d)])

    def hinge_upper(x):
        s = active(x)
        return np.column_stack([-s, -s, s])

    return PolicyTerms(base, hinge_lower, hinge_upper, active)


# ---------------------------------------------------------------------------
# Average hinge effects
# ---------------------------------------------------------------------------


class EtaRole(str, enum.Enum):
    """Which learned function a hinge nuisance is built from."""

    CATE = "cate"
    CATS = "cats"
    CUSTOM = "custom"


def constant_triple(g0: float, g1: float, g2: float) -> ArrayFn:
    row = np.array([g0, g1, g2], dtype=float)

    def fn(x):
        return np.broadcast_to(row, (x.shape[0], 3)).copy()

    fn.constant = (g0, g1, g2)
    return fn


@dataclass(frozen=True)
class AheSpec:
    """One average hinge effect.

    ``g[0]`` is the linear part, ``g[1:]`` the hinge terms; each entry maps an
    ``(n, d)`` covariate array to an ``(n, 3)`` array of coefficients on
    ``mu(x, 0)``, ``mu(x, 1)`` and the constant.
    """

    rho: tuple[int, ...]
    g: tuple[ArrayFn, ...]
    eta_roles: tuple[EtaRole, ...] = ()
    name: str = "ahe"

    def __post_init__(self):
        rho = tuple(int(r) for r in self.rho)
        if any(r not in (-1, 1) for r in rho):
            raise ConfigurationError("rho entries must be -1 or +1")
        if len(self.g) != len(rho) + 1:
            raise ConfigurationError(f"need m+1={len(rho) + 1} coefficient triples, got {len(self.g)}")
        roles = tuple(EtaRole(r) for r in self.eta_roles) if self.eta_roles else (EtaRole.CUSTOM,) * len(rho)
        if len(roles) != len(rho):
            raise ConfigurationError("need one eta role per hinge term")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "g", tuple(self.g))
        object.__setattr__(self, "eta_roles", roles)

    @property
    def m(self) -> int:
        return len(self.rho)

    def coefficients(self, x) -> np.ndarray:
        """Coefficient array of shape ``(m+1, n, 3)``; raises if outside [-1, 1]."""
        x = as_matrix(x)
        out = np.stack([np.asarray(g(x), dtype=float).reshape(x.shape[0], 3) for g in self.g])
        if np.any(np.abs(out) > 1 + 1e-12):
            raise InvariantError(f"{self.name}: coefficient outside [-1, 1]")
        return out

    def eta(self, x, mu0: np.ndarray, mu1: np.ndarray, coef: np.ndarray | None = None) -> np.ndarray:
        """Hinge arguments ``eta_l(x)`` for given conditional means, shape ``(m, n)``."""
        if coef is None:
            coef = self.coefficients(x)
        h = coef[1:]
        return h[..., 0] * mu0 + h[..., 1] * mu1 + h[..., 2]

    def check_ranges(self, x, mu0: np.ndarray, mu1: np.ndarray) -> None:
        coef = self.coefficients(x)
        if np.any(np.abs(self.eta(x, mu0, mu1, coef)) > 3 + 1e-12):
            raise InvariantError(f"{self.name}: hinge argument outside [-3, 3]")


# ---------------------------------------------------------------------------
# Intervals and folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if lo > hi + INTERVAL_TOL:
            raise InvariantError(f"inverted interval [{lo!r}, {hi!r}]")
        object.__setattr__(self, "lo", min(lo, hi))
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= value <= self.hi + tol

    def as_list(self) -> list[float]:
        return [self.lo, self.hi]


def fold_assign(n: int, k: int, seed: int | None = None) -> np.ndarray:
    """Fold id (0-based) for every row.

    Row ``i`` lands in fold ``i mod k``.  With a ``seed`` the rows are first
    permuted and position ``j`` of the permutation lands in fold ``j mod k``.
    """
    if not 1 <= k <= n:
        raise ConfigurationError(f"need 1 <= folds <= n, got folds={k}, n={n}")
    order = np.arange(n)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[order] = np.arange(n) % k
    return folds


def fold_members(folds: np.ndarray, k: int) -> list[np.ndarray]:
    return [np.flatnonzero(folds == j) for j in range(k)]


__all__ = (
    "AheSpec",
    "ConfigurationError",
    "DataError",
    "EtaRole",
    "HarmboundError",
    "Interval",
    "InvariantError",
    "ObservationTable",
    "Policy",
    "PolicyTerms",
    "constant_triple",
    "fold_assign",
    "fold_members",
    "policy_indicator_functions",
)
