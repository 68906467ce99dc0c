"""Embedding + encoder + classifier + critic, and the composite debiasing objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import Node, NonFiniteError, ParamSet, Tape, glorot
from .purify import SaliencyReport, infonce_terms, n_kept, saliency


@dataclass(frozen=True)
class ModelDims:
    vocab: int = 64
    kslots: int = 8
    d_emb: int = 16
    d_hidden: int = 16
    m_z: int = 16
    n_classes: int = 2


@dataclass(frozen=True)
class DeproLossConfig:
    alpha: float = 1e-4
    purify_ratio: float = 0.7
    use_decorrelation: bool = True
    use_purification: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        n_kept(1, self.purify_ratio)  # validates the ratio


class DeproModel:
    """Parameters:

    - ``embed`` (vocab, d_emb): local features ``T`` are rows of this table.
    - ``enc.W1`` (kslots*d_emb, d_hidden), ``enc.W2`` (d_hidden, m_z): the
      encoder pools the slots by concatenation (equivalently, a sum of
      per-slot projections) and applies two tanh layers to get ``Z``.
    - ``cls.W`` (m_z, C): classifier.
    - ``critic.W`` (d_emb, m_z): projects a local feature into ``Z`` space
      for InfoNCE scoring.
    """

    def __init__(self, dims: ModelDims, params: ParamSet):
        self.dims = dims
        self.params = params

    @classmethod
    def init(cls, dims: ModelDims, seed: int) -> "DeproModel":
        rng = np.random.default_rng(seed)
        p = ParamSet()
        p["embed"] = rng.normal(0.0, 0.1, size=(dims.vocab, dims.d_emb))
        p["enc.W1"] = glorot(rng, dims.kslots * dims.d_emb, dims.d_hidden)
        p["enc.b1"] = np.zeros(dims.d_hidden)
        p["enc.W2"] = glorot(rng, dims.d_hidden, dims.m_z)
        p["enc.b2"] = np.zeros(dims.m_z)
        p["cls.W"] = glorot(rng, dims.m_z, dims.n_classes)
        p["cls.b"] = np.zeros(dims.n_classes)
        p["critic.W"] = glorot(rng, dims.d_emb, dims.m_z)
        p["critic.b"] = np.zeros(dims.m_z)
        return cls(dims, p)

    @classmethod
    def from_params(cls, params: ParamSet, kslots: int) -> "DeproModel":
        vocab, d_emb = params["embed"].shape
        d_hidden = params["enc.W1"].shape[1]
        if params["enc.W1"].shape[0] != kslots * d_emb:
            raise ValueError("checkpoint does not match slot count")
        m_z, n_classes = params["cls.W"].shape
        return cls(ModelDims(vocab, kslots, d_emb, d_hidden, m_z, n_classes), params)

    def clone(self) -> "DeproModel":
        return DeproModel(self.dims, self.params.copy())

    def check_tokens(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids)
        if ids.ndim != 2 or ids.shape[1] != self.dims.kslots:
            raise ValueError(f"expected (n, {self.dims.kslots}) token ids, got {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.dims.vocab):
            raise ValueError(f"token id outside vocabulary of size {self.dims.vocab}")
        return ids


def forward(tape: Tape, leaves: dict, model: DeproModel, token_ids) -> tuple[Node, Node]:
    """Record ``T`` (n, kslots, d_emb) and ``Z`` (n, m_z) on ``tape``."""
    ids = model.check_tokens(token_ids)
    d = model.dims
    t = tape.named(tape.gather(leaves["embed"], ids), "T")
    pooled = tape.reshape(t, (ids.shape[0], d.kslots * d.d_emb))
    h = tape.tanh(tape.affine(pooled, leaves["enc.W1"], leaves["enc.b1"]))
    z = tape.named(tape.tanh(tape.affine(h, leaves["enc.W2"], leaves["enc.b2"])), "Z")
    return t, z


def encode(model: DeproModel, batch) -> tuple[np.ndarray, np.ndarray]:
    tape = Tape()
    t, z = forward(tape, model.params.leaves(tape), model, getattr(batch, "token_ids", batch))
    return t.value, z.value


def logits(model: DeproModel, token_ids) -> np.ndarray:
    tape = Tape()
    leaves = model.params.leaves(tape)
    _, z = forward(tape, leaves, model, token_ids)
    return tape.affine(z, leaves["cls.W"], leaves["cls.b"]).value


@dataclass
class LossResult:
    total: float
    ce: float
    mi: float
    tape: Tape
    report: SaliencyReport | None
    z: np.ndarray


def objective(tape: Tape, leaves: dict, t: Node, z: Node, labels, weights,
              cfg: DeproLossConfig) -> LossResult:
    """Complete the objective on a tape that already holds ``T`` and ``Z``.

    ``ce`` is the batch mean of ``w_i * CE_i``; ``mi`` is the sum over each
    sample's selected slots of its InfoNCE term, averaged over the batch.
    Total is ``ce - alpha * mi``.  Slot selection uses the gradient of the
    weighted CE alone.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    out = tape.affine(z, leaves["cls.W"], leaves["cls.b"])
    ce = tape.softmax_cross_entropy(out, labels, weights)
    report = None
    if not cfg.use_purification:
        tape.root = ce
        return LossResult(float(ce.value), float(ce.value), 0.0, tape, None, z.value)

    report = saliency(tape.backward(ce)["T"], cfg.purify_ratio)
    mask = report.mask()
    if not mask.any():
        raise ValueError("purification selected no local features")
    parts = []
    for j in range(mask.shape[1]):
        if not mask[:, j].any():
            continue
        terms = infonce_terms(tape, tape.select(t, j, axis=1), z,
                              leaves["critic.W"], leaves["critic.b"])
        parts.append(tape.dot(terms, mask[:, j] / n))
    mi = parts[0]
    for p in parts[1:]:
        mi = tape.add(mi, p)
    total = tape.sub(ce, tape.scale(mi, cfg.alpha))
    if not np.isfinite(total.value):
        raise NonFiniteError("non-finite objective")
    tape.root = total
    return LossResult(float(total.value), float(ce.value), float(mi.value), tape, report, z.value)


def depro_loss(model: DeproModel, batch, weights, cfg: DeproLossConfig) -> LossResult:
    """Forward the composite objective for ``batch``; ``result.tape`` is ready for backward."""
    tape = Tape()
    leaves = model.params.leaves(tape)
    t, z = forward(tape, leaves, model, batch.token_ids)
    w = np.ones(len(batch)) if weights is None else np.asarray(weights, dtype=np.float64)
    return objective(tape, leaves, t, z, batch.labels, w, cfg)


def predict(model: DeproModel, token_ids) -> np.ndarray:
    return np.argmax(logits(model, token_ids), axis=1)
