"""Saliency-based slot selection and the InfoNCE mutual-information bound."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netcore import Node, Tape


@dataclass
class SaliencyReport:
    per_slot_norm: np.ndarray  # (n, kslots)
    selected: np.ndarray       # (n, M) slot indices, most salient first

    @property
    def m(self) -> int:
        return self.selected.shape[1]

    def mask(self) -> np.ndarray:
        """(n, kslots) 0/1 matrix of selected slots."""
        out = np.zeros_like(self.per_slot_norm)
        np.put_along_axis(out, self.selected, 1.0, axis=1)
        return out


@dataclass
class InfoNceEstimate:
    value: float
    batch_size: int


def n_kept(kslots: int, purify_ratio: float) -> int:
    if not 0.0 < purify_ratio <= 1.0:
        raise ValueError(f"purify_ratio must lie in (0, 1], got {purify_ratio}")
    # round away float noise first so 0.7 * 10 keeps 7, not 8
    return max(1, min(kslots, math.ceil(round(purify_ratio * kslots, 9))))


def saliency(local_grads, purify_ratio: float) -> SaliencyReport:
    """Rank slots per sample by the l2 norm of the loss gradient w.r.t. each local feature.

    ``local_grads`` has shape (n, kslots, d_emb).  The top ``ceil(ratio * kslots)``
    slots are kept; ties go to the lower slot index.
    """
    g = np.asarray(local_grads, dtype=np.float64)
    if g.ndim != 3:
        raise ValueError("local gradients must have shape (n, kslots, d_emb)")
    m = n_kept(g.shape[1], purify_ratio)
    norms = np.sqrt(np.einsum("nsd,nsd->ns", g, g))
    order = np.argsort(-norms, axis=1, kind="stable")
    return SaliencyReport(per_slot_norm=norms, selected=order[:, :m])


def infonce_terms(tape: Tape, local: Node, global_: Node, critic_w: Node, critic_b: Node) -> Node:
    """Per-sample InfoNCE terms ``s(i,i) - log mean_b exp(s(i,b))``, shape (n,).

    Scores are ``s(i, b) = <critic(local_i), global_b>`` with an affine critic.
    """
    proj = tape.affine(local, critic_w, critic_b)
    scores = tape.matmul(proj, tape.transpose(global_))
    return tape.sub(tape.diag(scores), tape.logmeanexp(scores, axis=1))


def infonce(local, global_, critic) -> InfoNceEstimate:
    """Batch InfoNCE estimate for one slot; ``critic`` is ``(W, b)``."""
    local = np.asarray(local, dtype=np.float64)
    global_ = np.asarray(global_, dtype=np.float64)
    if local.shape[0] < 1 or local.shape[0] != global_.shape[0]:
        raise ValueError("local and global need the same positive row count")
    tape = Tape()
    terms = infonce_terms(tape, tape.leaf(local), tape.leaf(global_),
                          tape.leaf(critic[0]), tape.leaf(critic[1]))
    value = float(np.mean(terms.value))
    if not np.isfinite(value):
        raise FloatingPointError("non-finite InfoNCE scores")
    return InfoNceEstimate(value=value, batch_size=local.shape[0])


def selection_frequency(reports) -> np.ndarray:
    """Fraction of samples selecting each slot across a list of reports."""
    masks = np.concatenate([r.mask() for r in reports], axis=0)
    return masks.mean(axis=0)
