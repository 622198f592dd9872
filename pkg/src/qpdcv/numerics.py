"""Low-level numerical helpers.

Signed log-domain arithmetic for long products, a symmetric pseudoinverse,
elementary symmetric polynomials and hierarchical seeded random streams.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from collections.abc import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class SignedLog:
    """A real number stored as ``(sign, log|value|)``.

    ``sign == 0`` means exactly zero; ``log_magnitude`` is then ignored.
    """

    sign: int
    log_magnitude: float = 0.0

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign!r}")

    @classmethod
    def from_real(cls, x: float) -> SignedLog:
        if x == 0:
            return cls(0, -math.inf)
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    def to_real(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_magnitude)

    def __float__(self):
        return self.to_real()

    def __mul__(self, other: SignedLog) -> SignedLog:
        return slog_mul([self, other])


ZERO = SignedLog(0, -math.inf)
ONE = SignedLog(1, 0.0)


def slog_mul(factors: Iterable[SignedLog]) -> SignedLog:
    """Product of signed-log factors. Empty product is one."""
    sign = 1
    total = 0.0
    for f in factors:
        if f.sign == 0:
            return ZERO
        sign *= f.sign
        total += f.log_magnitude
    return SignedLog(sign, total)


def log_sum_exp(terms: Sequence[SignedLog]) -> SignedLog:
    """Signed sum of signed-log terms, max-shift stabilised."""
    live = [t for t in terms if t.sign != 0]
    if not live:
        return ZERO
    logs = np.array([t.log_magnitude for t in live])
    signs = np.array([t.sign for t in live], dtype=float)
    value, sign = slog_sum_arrays(signs, logs)
    return SignedLog(int(sign), float(value))


def slog_sum_arrays(signs, logs, axis=None):
    """Array version of :func:`log_sum_exp`.

    Returns ``(log|sum|, sign(sum))``. Entries with sign 0 are ignored and an
    exact cancellation gives sign 0 and log ``-inf``.
    """
    signs = np.asarray(signs, dtype=float)
    logs = np.where(signs == 0, -np.inf, np.asarray(logs, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        value, sign = logsumexp(logs, axis=axis, b=signs, return_sign=True)
    value = np.asarray(value, dtype=float)
    sign = np.asarray(sign, dtype=float)
    dead = ~np.isfinite(value) | (sign == 0)
    sign = np.where(dead, 0.0, sign)
    value = np.where(dead, -np.inf, value)
    if value.ndim == 0:
        return float(value), int(sign)
    return value, sign.astype(int)


def slog_from_array(x):
    """Split a real array into ``(sign, log|x|)`` arrays (log is -inf at zeros)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.sign(x).astype(int), np.log(np.abs(x))


def slog_to_array(sign, logmag):
    sign = np.asarray(sign)
    with np.errstate(over="ignore"):
        return np.where(sign == 0, 0.0, sign * np.exp(np.where(sign == 0, 0.0, logmag)))


def slog_prod_arrays(signs, logs, axis=-1):
    """Product along ``axis`` of values given in signed-log form."""
    signs = np.asarray(signs)
    logs = np.asarray(logs, dtype=float)
    zero = np.any(signs == 0, axis=axis)
    sign = np.prod(np.where(signs == 0, 1, signs), axis=axis)
    total = np.sum(np.where(signs == 0, 0.0, logs), axis=axis)
    sign = np.where(zero, 0, sign).astype(int)
    total = np.where(zero, -np.inf, total)
    return sign, total


def as_symmetric(a, atol: float = 0.0) -> np.ndarray:
    """Validate a square symmetric matrix and return a float copy.

    The lower triangle is authoritative: the result is rebuilt from it so
    that ``out[a, b] == out[b, a]`` holds exactly.
    """
    a = np.array(a, dtype=float, ndmin=2)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(float(np.max(np.abs(a), initial=0.0)), 1.0)
    if np.max(np.abs(a - a.T), initial=0.0) > atol * scale + 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    low = np.tril(a)
    return low + np.tril(a, -1).T


def sym_pseudoinverse(k, rel_tol: float = 1e-12, scale: float = 0.0) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric matrix.

    Eigenvalues with ``|lam| <= rel_tol * max(max|lam|, scale)`` are treated
    as zero. Pass ``scale`` when ``k`` is a difference of larger terms (a
    covariance formed as ``E[VV] - mu mu``), so round-off residue is cut.
    """
    k = as_symmetric(k)
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    lam, vec = np.linalg.eigh(k)
    cutoff = rel_tol * max(float(np.max(np.abs(lam), initial=0.0)), scale)
    keep = np.abs(lam) > cutoff
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    out = (vec * inv) @ vec.T
    return as_symmetric(out, atol=1e-10)


def elementary_symmetric(values) -> np.ndarray:
    """Elementary symmetric polynomials ``e_0 .. e_Q`` of ``values``.

    ``values`` may carry leading batch axes; the last axis holds the ``Q``
    variables and the result has shape ``(..., Q + 1)``.
    """
    values = np.asarray(values)
    q = values.shape[-1]
    e = np.zeros(values.shape[:-1] + (q + 1,), dtype=np.result_type(values, float))
    e[..., 0] = 1.0
    for j in range(q):
        x = values[..., j : j + 1]
        # right-hand side is evaluated before assignment, so this uses the old e
        e[..., 1 : j + 2] = e[..., 1 : j + 2] + x * e[..., 0 : j + 1]
    return e


def _label_to_int(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        return int(label)
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be non-negative")
        return int(label)
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_stream(master_seed: int, path: Sequence = ()) -> np.random.Generator:
    """Deterministic random generator for ``(master_seed, path)``.

    Each path element (string or non-negative int) becomes one level of the
    ``SeedSequence`` spawn key, so distinct paths give independent streams
    and the result never depends on call order.
    """
    key = tuple(_label_to_int(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
