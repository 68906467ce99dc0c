"""Cross-covariance between RFF blocks and the pairwise decorrelation objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CrossCov:
    matrix: np.ndarray
    pair: tuple[int, int] | None = None

    @property
    def T(self) -> "CrossCov":
        pair = None if self.pair is None else (self.pair[1], self.pair[0])
        return CrossCov(self.matrix.T, pair)


@dataclass
class DecorrObjective:
    total: float
    per_pair: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        """Mean of per-pair squared Frobenius norms (0 when there are no pairs)."""
        return self.total / len(self.per_pair) if self.per_pair else 0.0


def _blocks(u_block, v_block):
    u = np.asarray(u_block, dtype=np.float64)
    v = np.asarray(v_block, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    if v.ndim == 1:
        v = v[:, None]
    if u.shape[0] != v.shape[0]:
        raise ValueError(f"row count mismatch: {u.shape[0]} vs {v.shape[0]}")
    n = u.shape[0]
    if n < 2:
        raise ValueError("unbiased cross-covariance needs n >= 2")
    return u, v, n


def _check_weights(weights, n):
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return w


def cross_cov(u_block, v_block) -> CrossCov:
    """Unbiased empirical cross-covariance, ``(u - u_bar)^T (v - v_bar) / (n - 1)``."""
    u, v, n = _blocks(u_block, v_block)
    du = u - u.mean(axis=0)
    dv = v - v.mean(axis=0)
    return CrossCov(du.T @ dv / (n - 1))


def weighted_cross_cov(u_block, v_block, weights) -> CrossCov:
    """Cross-covariance of the weight-scaled features ``w_i u_i`` and ``w_i v_i``.

    The weights multiply the feature rows before centring; with unit weights
    this reduces exactly to :func:`cross_cov`.
    """
    u, v, n = _blocks(u_block, v_block)
    w = _check_weights(weights, n)
    return cross_cov(w[:, None] * u, w[:, None] * v)


def importance_cross_cov(u_block, v_block, weights) -> CrossCov:
    """Cross-covariance of the weighted empirical distribution.

    ``n/(n-1) * sum_i p_i (u_i - u_p)^T (v_i - v_p)`` with ``p = w / sum(w)``
    and ``u_p = sum_i p_i u_i``.  Invariant to rescaling ``w``; unit weights
    give :func:`cross_cov`.
    """
    u, v, n = _blocks(u_block, v_block)
    w = _check_weights(weights, n)
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    p = w / w.sum()
    du = u - p @ u
    dv = v - p @ v
    return CrossCov((p[:, None] * du).T @ dv * (n / (n - 1)))


def frob_sq(c) -> float:
    m = c.matrix if isinstance(c, CrossCov) else np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite cross-covariance")
    return float(np.sum(m * m))


def _check_layout(reconstructed, multiplier):
    r = np.asarray(reconstructed, dtype=np.float64)
    if r.ndim != 2:
        raise ValueError("reconstructed features must be a matrix")
    if multiplier < 1 or r.shape[1] % multiplier:
        raise ValueError(f"{r.shape[1]} columns not divisible by multiplier {multiplier}")
    if r.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    return r, r.shape[1] // multiplier


FORMS = ("literal", "importance")


def weighted_centered(reconstructed, weights):
    """Return ``A = w*U - mean(w*U)``, the centred weight-scaled features."""
    a = np.asarray(weights, dtype=np.float64)[:, None] * reconstructed
    return a - a.mean(axis=0)


def full_cov(reconstructed, weights, form: str = "literal") -> np.ndarray:
    """Weighted covariance of all reconstructed columns at once."""
    r = np.asarray(reconstructed, dtype=np.float64)
    n = r.shape[0]
    w = _check_weights(weights, n)
    if form == "literal":
        a = weighted_centered(r, w)
        return a.T @ a / (n - 1)
    if form == "importance":
        if w.sum() <= 0:
            raise ValueError("weights must not all be zero")
        p = w / w.sum()
        d = r - p @ r
        return (p[:, None] * d).T @ d * (n / (n - 1))
    raise ValueError(f"unknown weighting form {form!r}; expected one of {FORMS}")


def pair_norms(reconstructed, weights, multiplier, form: str = "literal") -> tuple[np.ndarray, np.ndarray]:
    """Squared Frobenius norm of every block pair as an (m, m) matrix.

    Also returns the full weighted covariance matrix so callers can reuse it.
    """
    r, m = _check_layout(reconstructed, multiplier)
    cov = full_cov(r, weights, form)
    k = multiplier
    norms = np.einsum("ajbk->ab", (cov * cov).reshape(m, k, m, k))
    return norms, cov


def decorr_objective(reconstructed, weights, multiplier: int, form: str = "literal") -> DecorrObjective:
    """Sum over block pairs ``i < j`` of the squared Frobenius norm of their weighted cross-covariance.

    ``form="literal"`` uses :func:`weighted_cross_cov`, ``"importance"`` uses
    :func:`importance_cross_cov`.
    """
    norms, _ = pair_norms(reconstructed, weights, multiplier, form)
    m = norms.shape[0]
    per_pair = {(i, j): float(norms[i, j]) for i in range(m) for j in range(i + 1, m)}
    # fixed summation order keeps the total bit-stable
    total = float(sum(per_pair.values()))
    return DecorrObjective(total=total, per_pair=per_pair)


def pair_rows(obj: DecorrObjective, iteration: int):
    """CSV rows ``(iteration, i, j, frob_sq)`` for one objective evaluation."""
    return [(iteration, i, j, v) for (i, j), v in obj.per_pair.items()]
