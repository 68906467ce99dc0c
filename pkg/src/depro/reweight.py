"""Global sample-weight table optimised against the decorrelation objective.

Weights live on the scaled simplex ``{w > 0, sum(w) = n}``.  They are stored
as unconstrained logits ``theta`` with ``w = n * softmax(theta)`` so every
update stays feasible without projection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .independence import _check_layout, decorr_objective, weighted_centered

MNLI_PRESET = {"weight_lr": 1e-2, "weight_decay": 1e-3}
FEVER_PRESET = {"weight_lr": 5e-2, "weight_decay": 1e-3}

# |theta| cap; keeps the weight ratio above exp(-60) so no weight underflows to 0
LOGIT_BOUND = 30.0


@dataclass
class WeightTable:
    theta: np.ndarray
    lr: float = 1e-2
    lr_decay: float = 1e-3
    step_count: int = 0

    @classmethod
    def uniform(cls, n: int, lr: float = 1e-2, lr_decay: float = 1e-3) -> "WeightTable":
        if n < 1:
            raise ValueError("weight table needs at least one sample")
        if lr <= 0 or lr_decay < 0:
            raise ValueError("lr must be > 0 and lr_decay >= 0")
        return cls(theta=np.zeros(n), lr=lr, lr_decay=lr_decay)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def current_lr(self) -> float:
        return self.lr / (1.0 + self.lr_decay * self.step_count)

    def weights(self) -> np.ndarray:
        e = np.exp(self.theta - self.theta.max())
        return self.n * e / e.sum()


def realize(table: WeightTable, indices=None) -> np.ndarray:
    """Globally normalised weights, optionally sliced at ``indices``."""
    w = table.weights()
    if indices is None:
        return w
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.n):
        raise IndexError(f"sample index out of range for table of size {table.n}")
    return w[idx]


def _off_block(cov, m, k):
    cov.reshape(m, k, m, k)[np.arange(m), :, np.arange(m), :] = 0.0
    return cov


def weight_grad(reconstructed_batch, weights, multiplier: int, form: str = "literal") -> np.ndarray:
    """Gradient of the summed pairwise objective w.r.t. the raw batch weights.

    The objective is ``0.5 * sum(mask * C**2)`` where ``mask`` drops the
    diagonal blocks; write ``M = mask * C``.

    literal: ``A = centre(w * U)``, ``C = A^T A / (n - 1)``, so
    ``dL/dA = 2 A M / (n - 1)`` and ``dL/dw_i = <row_i(dL/dA), U_i>``.

    importance: ``p = w / sum(w)``, ``D = U - p U``,
    ``C = n/(n-1) * D^T diag(p) D``, so ``dL/dp_i = n/(n-1) * D_i M D_i^T``
    and ``dL/dw = (dL/dp - <p, dL/dp>) / sum(w)``.
    """
    u, m = _check_layout(reconstructed_batch, multiplier)
    n = u.shape[0]
    w = np.asarray(weights, dtype=np.float64)
    if form == "literal":
        a = weighted_centered(u, w)
        cov = _off_block(a.T @ a / (n - 1), m, multiplier)
        g = 2.0 * (a @ cov) / (n - 1)
        # g has zero column means already, so the centring Jacobian drops out
        return np.einsum("ik,ik->i", g, u)
    if form == "importance":
        s = w.sum()
        p = w / s
        d = u - p @ u
        cov = _off_block((p[:, None] * d).T @ d * (n / (n - 1)), m, multiplier)
        gp = np.einsum("ij,ij->i", d @ cov, d) * (n / (n - 1))
        return (gp - p @ gp) / s
    raise ValueError(f"unknown weighting form {form!r}")


def weight_step(table: WeightTable, reconstructed_batch, batch_indices, multiplier: int,
                form: str = "literal"):
    """One descent step on ``theta[batch_indices]``; returns ``(table, objective)``.

    The table is updated in place.  ``objective`` is recomputed with the
    post-step weights.
    """
    idx = np.asarray(batch_indices)
    u = np.asarray(reconstructed_batch, dtype=np.float64)
    if idx.shape[0] < 2 or u.shape[0] != idx.shape[0]:
        raise ValueError("weight step needs a batch of >= 2 rows matching its indices")
    w_all = realize(table)
    w = w_all[idx]
    g = weight_grad(u, w, multiplier, form)
    # chain rule through w = n * softmax(theta), restricted to the batch
    gw = g * w
    dtheta = gw - w * gw.sum() / table.n
    lr = table.current_lr()
    theta = table.theta.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        theta[idx] -= lr * dtheta
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("non-finite weight logits")
    np.clip(theta, -LOGIT_BOUND, LOGIT_BOUND, out=theta)
    table.theta = theta
    table.step_count += 1
    obj = decorr_objective(u, realize(table, idx), multiplier, form)
    return table, obj


def weight_histogram(table: WeightTable, bins: int = 20):
    """Histogram of realised weights: ``(counts, edges)``."""
    return np.histogram(realize(table), bins=bins)
