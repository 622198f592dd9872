"""Monte Carlo estimators of ``T = E[W X]`` and their error estimates.

Three estimators are provided: the plain sample mean of ``W X``
(:func:`estimate_basic`), the weight-as-control estimator with a
leave-one-out coefficient (:func:`estimate_centered`), and the general
control-variates estimator with leave-one-out coefficients
(:func:`estimate_cv`). All three are unbiased for ``T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controls import ControlSetStats


class InsufficientDataError(ValueError):
    """Raised when an estimator gets fewer datapoints than it needs."""


def _need(n: int, minimum: int, what: str) -> None:
    if n < minimum:
        raise InsufficientDataError(f"{what} needs N >= {minimum}, got N = {n}")


@dataclass(frozen=True)
class Dataset:
    """Aligned per-instance values ``X``, ``W`` and controls ``V`` (shape ``(N, N_cv)``)."""

    x: np.ndarray
    w: np.ndarray
    v: np.ndarray | None = None
    shot_var: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        if x.size == 0 or x.size != w.size:
            raise ValueError("x and w must be non-empty and of equal length")
        if self.v is not None:
            v = np.asarray(self.v, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            if v.shape[0] != x.size:
                raise ValueError("v must have one row per datapoint")
            object.__setattr__(self, "v", v)
        if self.shot_var is not None:
            sv = np.asarray(self.shot_var, dtype=float).ravel()
            if sv.size != x.size:
                raise ValueError("shot_var must have one entry per datapoint")
            object.__setattr__(self, "shot_var", sv)

    @property
    def n(self) -> int:
        return self.x.size

    def subset(self, rows) -> Dataset:
        return Dataset(
            self.x[rows],
            self.w[rows],
            None if self.v is None else self.v[rows],
            None if self.shot_var is None else self.shot_var[rows],
        )


@dataclass(frozen=True)
class EstimationResult:
    t_hat: float
    sigma_hat_sq: float
    method: str
    n: int
    n_cv: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def sigma_hat(self) -> float:
        return math.sqrt(self.sigma_hat_sq)


# --- sample statistics -------------------------------------------------------


def smean(a) -> float:
    return float(np.mean(a, axis=0)) if np.ndim(a) == 1 else np.mean(a, axis=0)


def svar(a) -> float:
    a = np.asarray(a, dtype=float)
    _need(a.shape[0], 2, "svar")
    return float(np.var(a, ddof=1))


def scov(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _need(a.shape[0], 2, "scov")
    return float(np.sum((a - a.mean()) * (b - b.mean())) / (a.size - 1))


def scov_matrix(a) -> np.ndarray:
    """Sample covariance matrix of the columns of ``a`` (``N - 1`` denominator)."""
    a = np.asarray(a, dtype=float)
    _need(a.shape[0], 2, "scov")
    d = a - a.mean(axis=0)
    return d.T @ d / (a.shape[0] - 1)


def smean_sans_one(a, i: int | None = None):
    """Mean excluding datapoint ``i``; all ``i`` at once when ``i`` is None."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    _need(n, 2, "smean_sans_one")
    out = (a.sum(axis=0) - a) / (n - 1)
    return out if i is None else out[i]


def scov_sans_one(a, b, i: int | None = None):
    """Sample covariance of ``a`` and ``b`` excluding datapoint ``i``.

    ``b`` may be 2-D (columns are separate variables). Computed for every
    ``i`` in ``O(N)`` via the rank-one downdate of the full covariance.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    _need(n, 3, "scov_sans_one")
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    if db.ndim == 2 and da.ndim == 1:
        da = da[:, None]
    full = np.sum(da * db, axis=0) / (n - 1)
    out = (n - 1) / (n - 2) * full - n / ((n - 2) * (n - 1)) * da * db
    return out if i is None else out[i]


# --- estimators ---------------------------------------------------------------


def estimate_basic(ds: Dataset) -> EstimationResult:
    _need(ds.n, 2, "basic estimator")
    y = ds.w * ds.x
    return EstimationResult(float(y.mean()), svar(y) / ds.n, "basic", ds.n)


def estimate_centered(ds: Dataset, mu_w: float) -> EstimationResult:
    """Weight used as control with leave-one-out coefficient ``SMean_sans-one[X]``."""
    n = ds.n
    _need(n, 2, "centered estimator")
    xbar = ds.x.mean()
    r = ds.x - xbar
    z = (n * ds.w - mu_w) / (n - 1) * r
    t_hat = z.mean() + mu_w * xbar
    sigma_sq = svar(z) / n + scov(ds.x, ds.w) ** 2 / (n - 1) ** 2
    return EstimationResult(float(t_hat), float(sigma_sq), "centered", n)


def cv_terms(ds: Dataset, stats: ControlSetStats) -> dict:
    """Intermediate per-datapoint arrays of the control-variates estimator."""
    n = ds.n
    _need(n, 4, "cv estimator")
    if ds.v is None:
        raise ValueError("dataset has no control values")
    if ds.v.shape[1] != stats.n_cv:
        raise ValueError(
            f"dataset has {ds.v.shape[1]} controls, statistics describe {stats.n_cv}"
        )
    x, w = ds.x, ds.w
    vc = ds.v - stats.mu
    xbar = x.mean()
    r = x - xbar
    g = w[:, None] * vc
    l = r[:, None] / (n - 1) * ((n - 2) * stats.c + n * (g - g.mean(axis=0)))
    w_res = w - vc @ (stats.k_plus @ stats.c)
    s = scov_sans_one(x, g)
    z = (n * w - w_res) / (n - 1) * r - np.sum((s @ stats.k_plus) * vc, axis=1)
    y = z + w_res * xbar
    return {"g": g, "l": l, "w_res": w_res, "s": s, "z": z, "y": y, "r": r}


def estimate_cv(ds: Dataset, stats: ControlSetStats, method: str = "cv") -> EstimationResult:
    """Control-variates estimator with leave-one-out coefficients.

    The estimate is ``SMean[Z] + SMean[W_res] SMean[X]``; the error estimate
    adds a coefficient-uncertainty term built from ``SCov[L_a, L_b]``.
    """
    n = ds.n
    t = cv_terms(ds, stats)
    t_hat = t["z"].mean() + t["w_res"].mean() * ds.x.mean()
    correction = float(np.sum(stats.k_plus * scov_matrix(t["l"]))) / ((n - 2) * (n - 3))
    sigma_sq = svar(t["y"]) / n + correction
    return EstimationResult(float(t_hat), float(sigma_sq), method, n, stats.n_cv)


# --- variance split and performance metrics -----------------------------------


@dataclass(frozen=True)
class VarianceSplit:
    inter: float
    intra: float
    ceiling_daf: float
    ceiling_sorp: float

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.ceiling_daf)


def variance_decomposition(w, x, shot_var, n_shots: int) -> VarianceSplit:
    """Split ``SVar[W X]`` into inter- and intra-instance parts.

    ``shot_var`` is the per-instance sample variance (``ddof=1``) of single-shot
    outcomes; ``x`` the per-instance shot mean. The intra part is the mean of
    ``W^2 shot_var / n_shots``; the inter part is the floored remainder.
    """
    if n_shots < 2:
        raise ValueError("n_shots must be at least 2")
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    shot_var = np.asarray(shot_var, dtype=float)
    total = svar(w * x)
    intra = float(np.mean(w * w * shot_var / n_shots))
    inter = max(0.0, total - intra)
    if intra <= 1e-15 * total or intra == 0.0:
        return VarianceSplit(inter, intra, math.inf, 100.0)
    return VarianceSplit(inter, intra, total / intra, (1.0 - intra / total) * 100.0)


def daf(sigma_basic_sq: float, sigma_method_sq: float) -> float:
    """Data amplification factor ``sigma_basic^2 / sigma_method^2`` (NaN if undefined)."""
    if sigma_method_sq <= 0:
        return math.nan
    return sigma_basic_sq / sigma_method_sq


def sorp(sigma_basic_sq: float, sigma_method_sq: float) -> float:
    """Sampling overhead reduction percentage."""
    if sigma_basic_sq <= 0:
        return math.nan
    return (1.0 - sigma_method_sq / sigma_basic_sq) * 100.0


def studentized_residual(t_method, sigma_method_sq, t_ref, sigma_ref_sq) -> float:
    denom = sigma_method_sq + sigma_ref_sq
    if denom <= 0:
        return math.nan
    return (t_method - t_ref) / math.sqrt(denom)
