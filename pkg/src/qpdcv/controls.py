"""Factorizable control variates and their exactly precomputed statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections.abc import Mapping, Sequence

import numpy as np

from .numerics import (
    SignedLog,
    as_symmetric,
    slog_from_array,
    slog_prod_arrays,
    slog_sum_arrays,
    slog_to_array,
    sym_pseudoinverse,
)
from .qpd import QpdModel, mu_w as _mu_w

CV_SET2_THETAS = (-1.5, -0.75, 0.0, 0.75, 1.5)
CV_SET3_PHIS = (-3.0, -1.5, 0.0, 1.5, 3.0)


@dataclass(frozen=True)
class FactorizableControl:
    """``V(k_1..k_M) = prod_m tables[m][k_m]``.

    When ``normalized`` is set the tables have already been divided by the
    per-position factor ``sqrt(sum_k p v^2)``, so ``E[V^2] = 1``.
    """

    tables: tuple[np.ndarray, ...]
    normalized: bool = False
    name: str = ""

    @classmethod
    def from_tables(cls, tables, name: str = "") -> FactorizableControl:
        return cls(tuple(np.asarray(t, dtype=float) for t in tables), False, name)

    @classmethod
    def normalized_from(cls, model: QpdModel, tables, name: str = "") -> FactorizableControl:
        """Rescale each position to unit second moment (in log space)."""
        raw = cls.from_tables(tables, name)
        raw.check(model)
        _, p, _ = model.padded()
        sign, logt = slog_from_array(raw.padded(p.shape[1]))
        with np.errstate(divide="ignore"):
            log_second, s = slog_sum_arrays(sign * sign, 2 * logt + np.log(p), axis=1)
        if np.any(s == 0):
            raise ValueError(f"position {int(np.argmin(s))}: table is identically zero")
        scaled = slog_to_array(sign, logt - 0.5 * log_second[:, None])
        return cls(tuple(scaled[m, :k] for m, k in enumerate(model.k_sizes)), True, name)

    def check(self, model: QpdModel) -> None:
        if len(self.tables) != model.n_positions:
            raise ValueError(
                f"control has {len(self.tables)} positions, model has {model.n_positions}"
            )
        for m, (t, pm) in enumerate(zip(self.tables, model.p)):
            if t.shape != pm.shape:
                raise ValueError(f"position {m}: table length {t.size} != K_m {pm.size}")

    def padded(self, kmax: int) -> np.ndarray:
        out = np.zeros((len(self.tables), kmax))
        for m, t in enumerate(self.tables):
            out[m, : t.size] = t
        return out


def evaluate_control_slog(control: FactorizableControl, indices) -> tuple:
    """Signed-log value(s) of a control at index tuple(s) ``(M,)`` or ``(N, M)``."""
    idx = np.asarray(indices, dtype=int)
    kmax = max((t.size for t in control.tables), default=1)
    sign, logv = slog_from_array(control.padded(kmax))
    rows = np.arange(len(control.tables))
    return slog_prod_arrays(sign[rows, idx], logv[rows, idx], axis=-1)


def evaluate_control(control: FactorizableControl, indices):
    sign, logv = evaluate_control_slog(control, indices)
    return slog_to_array(sign, logv)[()] if np.ndim(sign) == 0 else slog_to_array(sign, logv)


def evaluate_controls(controls: Sequence[FactorizableControl], indices) -> np.ndarray:
    """Values of every control for every instance, shape ``(N, N_cv)``."""
    idx = np.atleast_2d(indices)
    return np.stack([evaluate_control(c, idx) for c in controls], axis=1)


@dataclass(frozen=True)
class ControlSetStats:
    """Population statistics of a control set under a model.

    ``mu[a] = E[V_a]``, ``c[a] = Cov[W, V_a]``, ``k_matrix = Cov[V]``,
    ``k_plus`` its pseudoinverse and ``mu_w = E[W]``.
    """

    mu: np.ndarray
    c: np.ndarray
    k_matrix: np.ndarray
    k_plus: np.ndarray
    mu_w: float

    @property
    def n_cv(self) -> int:
        return self.mu.size

    @classmethod
    def from_moments(cls, mu, c, k_matrix, mu_w: float, rel_tol: float = 1e-12, scale: float = 0.0):
        k_matrix = as_symmetric(k_matrix, atol=1e-12)
        return cls(
            np.asarray(mu, dtype=float),
            np.asarray(c, dtype=float),
            k_matrix,
            sym_pseudoinverse(k_matrix, rel_tol, scale),
            float(mu_w),
        )


def _position_sums(weights, tables):
    """Signed-log of ``sum_k weights[m, k] * prod(tables)[m, k]`` for every ``m``."""
    sign, logv = slog_from_array(weights)
    for t in tables:
        s, lg = slog_from_array(t)
        sign = sign * s
        logv = logv + np.where(s == 0, 0.0, lg)
    return slog_sum_arrays(sign, np.where(sign == 0, -np.inf, logv), axis=1)


def _product_over_positions(log_sums, signs) -> float:
    s, lg = slog_prod_arrays(signs, log_sums, axis=0)
    return float(slog_to_array(s, lg))


def precompute_stats(
    model: QpdModel, controls: Sequence[FactorizableControl], rel_tol: float = 1e-12
) -> ControlSetStats:
    """Exact ``mu_a``, ``C_a``, ``K``, ``K^+`` for factorizable controls.

    Every expectation of a product of factorizable functions is a product
    over positions of per-position sums, evaluated in signed-log form.
    Cost is ``O(N_sigmaK * N_cv^2)``.
    """
    for c in controls:
        c.check(model)
    q, p, _ = model.padded()
    kmax = p.shape[1]
    tabs = [c.padded(kmax) for c in controls]
    n = len(controls)

    mu = np.empty(n)
    ewv = np.empty(n)
    for a, ta in enumerate(tabs):
        lg, s = _position_sums(p, [ta])
        mu[a] = _product_over_positions(lg, s)
        lg, s = _position_sums(q, [ta])
        ewv[a] = _product_over_positions(lg, s)

    second = np.empty((n, n))
    for a in range(n):
        for b in range(a + 1):
            lg, s = _position_sums(p, [tabs[a], tabs[b]])
            second[a, b] = second[b, a] = _product_over_positions(lg, s)

    mw = _mu_w(model)
    k = second - np.outer(mu, mu)
    c = ewv - mw * mu
    scale = float(np.max(np.abs(np.diag(second)), initial=0.0))
    return ControlSetStats.from_moments(mu, c, k, mw, rel_tol, scale)


def sign_tables(model: QpdModel) -> list[np.ndarray]:
    return [np.sign(qm).astype(float) for qm in model.q]


def sign_of_weight_control(model: QpdModel) -> FactorizableControl:
    """``sgn(W) = prod_m sgn(w_m)``."""
    return FactorizableControl(tuple(sign_tables(model)), False, "sgnW")


def _require_binary(model: QpdModel, kind: int) -> None:
    bad = np.flatnonzero(model.k_sizes != 2)
    if bad.size:
        raise ValueError(f"cv set {kind} needs K_m = 2 everywhere; position {bad[0]} has K_m={model.k_sizes[bad[0]]}")


def build_cv_set(
    kind: int,
    model: QpdModel,
    qubit_grouping: Mapping[int, tuple] | Sequence[tuple] | None = None,
    rng: np.random.Generator | None = None,
    n_qubits: int | None = None,
    thetas: Sequence[float] = CV_SET2_THETAS,
    phis: Sequence[float] = CV_SET3_PHIS,
    n_random: int = 5,
) -> list[FactorizableControl]:
    """Construct one of the five standard control sets.

    1. ``{sgn(W)}``.
    2. normalized ``v(0) = theta + 1``, ``v(1) = theta - 1`` for each theta.
    3. normalized ``v(0) = 1``, ``v(1) = phi - 1`` for each phi.
    4. per-qubit and per-neighbour-pair sign products, plus ``sgn(W)``;
       ``qubit_grouping[m]`` is ``("single", q)`` or ``("pair", q)`` with
       ``q`` zero-based (the pair is ``(q, q + 1)``).
    5. normalized tables with standard-normal entries drawn from ``rng``.

    In sets 2 and 3, index 0 means "not inserting" (positive weight) and
    index 1 "inserting" (negative weight).
    """
    if kind == 1:
        return [sign_of_weight_control(model)]
    if kind == 2:
        _require_binary(model, kind)
        return [
            FactorizableControl.normalized_from(
                model, [np.array([t + 1.0, t - 1.0])] * model.n_positions, f"theta={t:g}"
            )
            for t in thetas
        ]
    if kind == 3:
        _require_binary(model, kind)
        return [
            FactorizableControl.normalized_from(
                model, [np.array([1.0, f - 1.0])] * model.n_positions, f"phi={f:g}"
            )
            for f in phis
        ]
    if kind == 4:
        if qubit_grouping is None:
            raise ValueError("cv set 4 needs a qubit grouping")
        groups = list(qubit_grouping.values()) if isinstance(qubit_grouping, Mapping) else list(qubit_grouping)
        if len(groups) != model.n_positions:
            raise ValueError("qubit grouping must cover every position")
        if n_qubits is None:
            n_qubits = 1 + max(g[1] + (g[0] == "pair") for g in groups)
        signs = sign_tables(model)
        out = []
        for kind_label, count in (("single", n_qubits), ("pair", n_qubits - 1)):
            for qb in range(count):
                tabs = [
                    s if g == (kind_label, qb) else np.ones_like(s)
                    for s, g in zip(signs, groups)
                ]
                out.append(FactorizableControl(tuple(tabs), False, f"{kind_label}{qb}"))
        out.append(sign_of_weight_control(model))
        return out
    if kind == 5:
        if rng is None:
            raise ValueError("cv set 5 needs a random stream")
        out = []
        for a in range(n_random):
            tabs = [rng.standard_normal(k) for k in model.k_sizes]
            out.append(FactorizableControl.normalized_from(model, tabs, f"random{a}"))
        return out
    raise ValueError(f"unknown cv set kind {kind!r}")


def optimal_coefficients(cov_uv, stats: ControlSetStats) -> np.ndarray:
    """``lambda* = K^+ Cov[U, V]``."""
    cov_uv = np.asarray(cov_uv, dtype=float)
    if cov_uv.shape != (stats.n_cv,):
        raise ValueError("cov_uv does not match the control set dimension")
    return stats.k_plus @ cov_uv


def residual_variance(var_u: float, cov_uv, k_plus) -> float:
    """Minimum variance ``Var[U] - Cov^T K^+ Cov`` reachable with optimal coefficients."""
    cov_uv = np.asarray(cov_uv, dtype=float)
    return float(var_u - cov_uv @ np.asarray(k_plus) @ cov_uv)


def rho_squared_weight_control(ex: float, ewx: float, gamma: float) -> float:
    """Squared correlation of ``W`` and ``WX`` for ``W = +-gamma``, ``E[W] = 1``, ``X = +-1``."""
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    g2 = gamma * gamma
    return (g2 * ex - ewx) ** 2 / ((g2 - 1.0) * (g2 - ewx * ewx))


def conditional_means(ex: float, ewx: float, gamma: float) -> tuple[float, float]:
    """``(E[X | W=+gamma], E[X | W=-gamma])`` for the two-valued weight setup."""
    p_plus = (1.0 + 1.0 / gamma) / 2.0
    p_minus = 1.0 - p_plus
    # ex = p+ a + p- b ; ewx = gamma (p+ a - p- b)
    s = ewx / gamma
    a = (ex + s) / (2 * p_plus)
    b = (ex - s) / (2 * p_minus)
    return a, b


def rho_squared_grid(gamma: float, n: int = 101) -> dict:
    """Heatmap data over ``E[X], E[WX]`` in ``[-1, 1]^2``.

    ``allowed`` is False where either conditional mean of ``X`` given the
    sign of ``W`` leaves ``[-1, 1]``.
    """
    ex = np.linspace(-1.0, 1.0, n)
    ewx = np.linspace(-1.0, 1.0, n)
    exg, ewxg = np.meshgrid(ex, ewx, indexing="ij")
    g2 = gamma * gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (g2 * exg - ewxg) ** 2 / ((g2 - 1.0) * (g2 - ewxg**2))
    a, b = conditional_means(exg, ewxg, gamma)
    allowed = (np.abs(b) <= 1.0 + 1e-12) & (np.abs(a) <= 1.0 + 1e-12)
    return {"gamma": gamma, "ex": ex, "ewx": ewx, "rho2": rho, "allowed": allowed}


def diagonalize_controls(stats: ControlSetStats, values=None):
    """Rotate controls onto the eigenbasis of ``K``.

    Returns ``(new_stats, new_values, rotation)`` where ``new_values`` is
    ``values @ rotation`` (or None). ``K`` of the result is diagonal.
    """
    lam, u = np.linalg.eigh(stats.k_matrix)
    k_plus = u.T @ stats.k_plus @ u
    new = ControlSetStats(u.T @ stats.mu, u.T @ stats.c, np.diag(lam), np.diag(np.diag(k_plus)), stats.mu_w)
    new_values = None if values is None else np.asarray(values, dtype=float) @ u
    return new, new_values, u


def transform_controls(stats: ControlSetStats, values, mat, shift):
    """Apply ``V -> M V + alpha`` to the statistics and the per-datapoint values."""
    mat = np.asarray(mat, dtype=float)
    shift = np.asarray(shift, dtype=float)
    k = mat @ stats.k_matrix @ mat.T
    k = 0.5 * (k + k.T)
    new = ControlSetStats(
        mat @ stats.mu + shift,
        mat @ stats.c,
        k,
        np.linalg.inv(mat).T @ stats.k_plus @ np.linalg.inv(mat),
        stats.mu_w,
    )
    return new, np.asarray(values, dtype=float) @ mat.T + shift


def control_mean_slog(model: QpdModel, control: FactorizableControl) -> SignedLog:
    lg, s = _position_sums(model.padded()[1], [control.padded(model.padded()[1].shape[1])])
    sg, total = slog_prod_arrays(s, lg, axis=0)
    return SignedLog(int(sg), float(total))


def is_normalized(model: QpdModel, control: FactorizableControl, tol: float = 1e-12) -> bool:
    return all(
        math.isclose(float(np.sum(pm * t * t)), 1.0, rel_tol=0, abs_tol=tol)
        for pm, t in zip(model.p, control.tables)
    )
