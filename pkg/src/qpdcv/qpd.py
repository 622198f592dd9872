"""Quasiprobability decompositions with factorizable sampling distributions.

A decomposition has ``M`` positions. Position ``m`` carries nonzero real
coefficients ``q[m][k]`` and strictly positive sampling probabilities
``p[m][k]``, ``k = 0 .. K_m - 1``. Sampling one index per position gives a
mitigation instance whose weight is ``prod_m q[m][k_m] / p[m][k_m]``.

Indices are zero-based throughout this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .numerics import SignedLog, slog_from_array, slog_mul, slog_prod_arrays, slog_sum_arrays


@dataclass(frozen=True)
class QpdModel:
    """Per-position coefficient and probability tables.

    Use :meth:`proportional` or :meth:`with_probabilities` to build one;
    both drop zero coefficients and record the surviving original labels
    in ``labels``.
    """

    q: tuple[np.ndarray, ...]
    p: tuple[np.ndarray, ...]
    labels: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        if len(self.q) != len(self.p):
            raise ValueError("q and p must have the same number of positions")
        for m, (qm, pm) in enumerate(zip(self.q, self.p)):
            if qm.ndim != 1 or qm.shape != pm.shape or qm.size == 0:
                raise ValueError(f"position {m}: malformed tables")
            if np.any(qm == 0):
                raise ValueError(f"position {m}: zero coefficient")
            if np.any(pm <= 0) or abs(pm.sum() - 1.0) > 1e-12:
                raise ValueError(f"position {m}: p must be positive and sum to 1")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(np.arange(qm.size) for qm in self.q))

    @classmethod
    def proportional(cls, q_tables) -> QpdModel:
        """Sampling probabilities proportional to ``|q|`` (minimum-variance choice)."""
        qs, labels = _drop_zeros(q_tables)
        ps = []
        for m, qm in enumerate(qs):
            if qm.size == 0:
                raise ValueError(f"position {m} has no nonzero coefficient")
            a = np.abs(qm)
            ps.append(a / a.sum())
        return cls(tuple(qs), tuple(ps), tuple(labels))

    @classmethod
    def with_probabilities(cls, q_tables, p_tables) -> QpdModel:
        """General model with explicit sampling probabilities.

        Probabilities of dropped zero-coefficient terms are removed and the
        remainder renormalised.
        """
        if len(q_tables) != len(p_tables):
            raise ValueError("q and p must have the same number of positions")
        qs, labels = _drop_zeros(q_tables)
        ps = []
        for m, (lab, pm) in enumerate(zip(labels, p_tables)):
            if lab.size == 0:
                raise ValueError(f"position {m} has no nonzero coefficient")
            pm = np.asarray(pm, dtype=float)[lab]
            ps.append(pm / pm.sum())
        return cls(tuple(qs), tuple(ps), tuple(labels))

    @property
    def n_positions(self) -> int:
        return len(self.q)

    @property
    def k_sizes(self) -> np.ndarray:
        return np.array([qm.size for qm in self.q], dtype=int)

    def weights(self, m: int) -> np.ndarray:
        """Per-index weights ``q/p`` at position ``m``."""
        return self.q[m] / self.p[m]

    def padded(self):
        """Dense ``(M, K_max)`` arrays ``(q, p, w)`` with zero padding."""
        return self._padded

    @cached_property
    def _padded(self):
        kmax = int(self.k_sizes.max(initial=1))
        m = self.n_positions
        q = np.zeros((m, kmax))
        p = np.zeros((m, kmax))
        for i, (qm, pm) in enumerate(zip(self.q, self.p)):
            q[i, : qm.size] = qm
            p[i, : pm.size] = pm
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(p > 0, q / np.where(p > 0, p, 1.0), 0.0)
        return q, p, w


def _drop_zeros(q_tables):
    qs, labels = [], []
    for qm in q_tables:
        qm = np.atleast_1d(np.asarray(qm, dtype=float))
        keep = np.flatnonzero(qm != 0)
        qs.append(qm[keep])
        labels.append(keep)
    return qs, labels


def mu_w(model: QpdModel) -> float:
    """Mean weight ``prod_m sum_k q[m][k]`` (independent of ``p``)."""
    sums = np.array([qm.sum() for qm in model.q])
    return slog_mul(SignedLog.from_real(s) for s in sums).to_real()


def gamma(model: QpdModel) -> float:
    """``prod_m sum_k |q[m][k]|``."""
    return math.exp(log_gamma(model))


def log_gamma(model: QpdModel) -> float:
    return float(sum(math.log(np.abs(qm).sum()) for qm in model.q))


def gamma_per_position(model: QpdModel) -> np.ndarray:
    return np.array([np.abs(qm).sum() for qm in model.q])


def n_pi_k(model: QpdModel) -> SignedLog:
    """Number of distinct index tuples, in signed-log form."""
    return SignedLog(1, float(np.sum(np.log(model.k_sizes))))


def n_sigma_k(model: QpdModel) -> int:
    return int(model.k_sizes.sum())


@dataclass(frozen=True)
class SampledInstance:
    indices: np.ndarray
    weight: SignedLog


def instance_log_weight(model: QpdModel, indices) -> tuple[int, float]:
    """Signed-log weight of one or many index tuples.

    ``indices`` has shape ``(M,)`` or ``(N, M)``.
    """
    _, _, w = model.padded()
    sign, logw = slog_from_array(w)
    idx = np.asarray(indices, dtype=int)
    rows = np.arange(model.n_positions)
    return slog_prod_arrays(sign[rows, idx], logw[rows, idx], axis=-1)


def sample_indices(model: QpdModel, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw index tuples, shape ``(M,)`` or ``(n, M)``, independently per position."""
    _, p, _ = model.padded()
    cdf = np.cumsum(p, axis=1)
    cdf[:, -1] = np.inf  # guard against round-off at the top end
    size = (model.n_positions,) if n is None else (n, model.n_positions)
    u = rng.random(size)
    idx = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, model.k_sizes - 1)


def sample_instance(model: QpdModel, rng: np.random.Generator) -> SampledInstance:
    idx = sample_indices(model, rng)
    sign, logw = instance_log_weight(model, idx)
    return SampledInstance(idx, SignedLog(int(sign), float(logw)))


def instance_weights(model: QpdModel, indices) -> np.ndarray:
    """Real-valued weights ``W`` for an ``(N, M)`` array of index tuples."""
    sign, logw = instance_log_weight(model, indices)
    return sign * np.exp(logw)


def expectation_factorized(model: QpdModel, tables) -> SignedLog:
    """``E[prod_m f_m(k_m)]`` under the model's sampling distribution."""
    terms = []
    for pm, fm in zip(model.p, tables):
        lg, s = slog_sum_arrays(*slog_from_array(np.asarray(fm, dtype=float) * pm))
        terms.append(SignedLog(int(s), float(lg)))
    return slog_mul(terms)
