"""Small supervised learners used for the nuisance functions.

Every ``fit_*`` function returns an immutable predictor: a callable taking
an ``(n, d)`` covariate array and returning ``n`` predictions.  Binary
targets get probabilities, real targets get conditional means.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from .core import ConfigurationError, as_matrix

REGRESSORS = ("logistic", "linear", "boosted-stumps", "knn", "sign-cells", "constant")


class DegenerateLabelWarning(UserWarning):
    """Training labels leave nothing to learn; a constant predictor is used."""


class ConstantPredictor:
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, x) -> np.ndarray:
        return np.full(as_matrix(x).shape[0], self.value)

    def __repr__(self) -> str:
        return f"ConstantPredictor({self.value!r})"


class LinearPredictor:
    def __init__(self, coef: np.ndarray, logistic: bool):
        self.coef = np.array(coef, dtype=float)
        self.coef.setflags(write=False)
        self.logistic = logistic

    def __call__(self, x) -> np.ndarray:
        x = as_matrix(x)
        z = self.coef[0] + x @ self.coef[1:]
        return expit(z) if self.logistic else z


def _design(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])


def _log_loss(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_logistic(x, y, ridge: float = 1e-6, max_iter: int = 200, tol: float = 1e-8) -> LinearPredictor:
    """Ridge-penalised logistic regression by damped Newton steps.

    The intercept is not penalised.  Stops once the largest gradient entry
    falls below ``tol`` or after ``max_iter`` steps.
    """
    z_mat = _design(as_matrix(x))
    y = np.asarray(y, dtype=float)
    n, p = z_mat.shape
    pen = np.full(p, ridge)
    pen[0] = 0.0
    w = np.zeros(p)
    w[0] = math.log(max(y.mean(), 1e-12) / max(1 - y.mean(), 1e-12))

    def objective(v):
        return _log_loss(z_mat @ v, y) + 0.5 * float(np.sum(pen * v * v))

    obj = objective(w)
    for _ in range(max_iter):
        prob = expit(z_mat @ w)
        grad = z_mat.T @ (prob - y) / n + pen * w
        if np.max(np.abs(grad)) < tol:
            break
        hess = (z_mat.T * (prob * (1 - prob))) @ z_mat / n + np.diag(pen + 1e-12)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = w - t * step
            cand_obj = objective(cand)
            if cand_obj <= obj - 1e-4 * t * float(grad @ step):
                break
            t *= 0.5
        else:
            break
        w, obj = cand, cand_obj
    return LinearPredictor(w, logistic=True)


def fit_linear(x, t, ridge: float = 1e-6) -> LinearPredictor:
    """Ridge least squares with an unpenalised intercept."""
    z_mat = _design(as_matrix(x))
    t = np.asarray(t, dtype=float)
    n, p = z_mat.shape
    pen = np.full(p, ridge)
    pen[0] = 0.0
    lhs = z_mat.T @ z_mat / n + np.diag(pen)
    rhs = z_mat.T @ t / n
    try:
        w = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        w = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return LinearPredictor(w, logistic=False)


class StumpEnsemble:
    def __init__(self, init, features, thresholds, left, right, logistic):
        self.init = float(init)
        self.features = np.asarray(features, dtype=np.int64)
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.left = np.asarray(left, dtype=float)
        self.right = np.asarray(right, dtype=float)
        self.logistic = logistic

    def decision(self, x) -> np.ndarray:
        x = as_matrix(x)
        f = np.full(x.shape[0], self.init)
        for j, thr, lv, rv in zip(self.features, self.thresholds, self.left, self.right):
            f += np.where(x[:, j] <= thr, lv, rv)
        return f

    def __call__(self, x) -> np.ndarray:
        f = self.decision(x)
        return expit(f) if self.logistic else f


def fit_boosted_stumps(
    x,
    t,
    logistic: bool,
    rounds: int = 200,
    learning_rate: float = 0.1,
    n_bins: int = 32,
    l2: float = 1.0,
) -> StumpEnsemble:
    """Gradient boosting with depth-1 trees.

    Log-loss with Newton leaf values when ``logistic``; squared loss otherwise.
    Split candidates are the quantile bin edges of each covariate.
    """
    x = as_matrix(x)
    t = np.asarray(t, dtype=float)
    n, d = x.shape
    edges, bins = [], []
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    for j in range(d):
        e = np.unique(np.quantile(x[:, j], qs))
        edges.append(e)
        bins.append(np.searchsorted(e, x[:, j], side="left"))

    if logistic:
        mean = min(max(t.mean(), 1e-6), 1 - 1e-6)
        init = math.log(mean / (1 - mean))
    else:
        init = float(t.mean())
    f = np.full(n, init)
    feats, thrs, lefts, rights = [], [], [], []
    for _ in range(rounds):
        if logistic:
            prob = expit(f)
            g = t - prob
            h = prob * (1 - prob)
        else:
            g = t - f
            h = np.ones(n)
        g_tot, h_tot = g.sum(), h.sum()
        best = None
        for j in range(d):
            if edges[j].size == 0:
                continue
            nb = edges[j].size + 1
            gl = np.cumsum(np.bincount(bins[j], weights=g, minlength=nb))[:-1]
            hl = np.cumsum(np.bincount(bins[j], weights=h, minlength=nb))[:-1]
            gr, hr = g_tot - gl, h_tot - hl
            gain = gl**2 / (hl + l2) + gr**2 / (hr + l2)
            i = int(np.argmax(gain))
            if best is None or gain[i] > best[0]:
                best = (gain[i], j, i, gl[i] / (hl[i] + l2), gr[i] / (hr[i] + l2))
        if best is None:
            break
        _, j, i, lv, rv = best
        lv *= learning_rate
        rv *= learning_rate
        f += np.where(bins[j] <= i, lv, rv)
        feats.append(j)
        thrs.append(edges[j][i])
        lefts.append(lv)
        rights.append(rv)
    return StumpEnsemble(init, feats, thrs, lefts, rights, logistic)


class NearestMean:
    def __init__(self, x: np.ndarray, t: np.ndarray, k: int):
        self.tree = cKDTree(x)
        self.t = np.array(t, dtype=float)
        self.k = int(k)

    def __call__(self, x) -> np.ndarray:
        x = as_matrix(x)
        _, idx = self.tree.query(x, k=self.k)
        idx = np.asarray(idx).reshape(x.shape[0], self.k)
        return self.t[idx].mean(axis=1)


def fit_knn(x, t, k: int | None = None) -> NearestMean:
    """Mean target over the ``k`` nearest training points (default ``ceil(sqrt(n))``)."""
    x = as_matrix(x)
    n = x.shape[0]
    k = math.ceil(math.sqrt(n)) if k is None else k
    return NearestMean(x, t, min(max(k, 1), n))


class SignCellMean:
    """Piecewise-constant fit over the orthants ``sign(x - cut)``."""

    def __init__(self, codes: np.ndarray, means: np.ndarray, fallback: float, cut: float):
        self.codes = codes
        self.means = means
        self.fallback = float(fallback)
        self.cut = float(cut)

    @staticmethod
    def encode(x: np.ndarray, cut: float) -> np.ndarray:
        bits = (x > cut).astype(np.int64)
        return bits @ (np.int64(1) << np.arange(x.shape[1], dtype=np.int64))

    def __call__(self, x) -> np.ndarray:
        code = self.encode(as_matrix(x), self.cut)
        pos = np.searchsorted(self.codes, code)
        pos = np.minimum(pos, self.codes.size - 1)
        hit = self.codes[pos] == code
        return np.where(hit, self.means[pos], self.fallback)


def fit_sign_cells(x, t, cut: float = 0.0) -> SignCellMean:
    """Cell means over the sign pattern of the covariates; unseen cells get the pooled mean."""
    x = as_matrix(x)
    if x.shape[1] > 62:
        raise ConfigurationError("sign-cells supports at most 62 covariates")
    t = np.asarray(t, dtype=float)
    code = SignCellMean.encode(x, cut)
    codes, inverse = np.unique(code, return_inverse=True)
    sums = np.bincount(inverse, weights=t)
    counts = np.bincount(inverse)
    return SignCellMean(codes, sums / counts, t.mean(), cut)


def fit_regressor(kind: str, x, t, binary: bool, cfg) -> object:
    """Dispatch on learner name; ``cfg`` supplies the hyperparameters."""
    t = np.asarray(t, dtype=float)
    if binary and np.all(t == t[0]):
        warnings.warn(
            f"all training labels equal {t[0]:g}; using a constant predictor",
            DegenerateLabelWarning,
            stacklevel=3,
        )
        return ConstantPredictor(t[0])
    if kind == "constant":
        return ConstantPredictor(t.mean())
    if kind in ("logistic", "linear"):
        if binary and kind == "logistic":
            return fit_logistic(x, t, ridge=cfg.ridge, max_iter=cfg.max_iter, tol=cfg.tol)
        return fit_linear(x, t, ridge=cfg.ridge)
    if kind == "boosted-stumps":
        return fit_boosted_stumps(x, t, logistic=binary, rounds=cfg.rounds, learning_rate=cfg.learning_rate)
    if kind == "knn":
        return fit_knn(x, t, cfg.k)
    if kind == "sign-cells":
        return fit_sign_cells(x, t)
    raise ConfigurationError(f"unknown learner {kind!r}; choose from {', '.join(REGRESSORS)}")
