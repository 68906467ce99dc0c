"""Tape-based reverse-mode differentiation over numpy arrays.

Only the handful of operations the model needs are provided.  Every op
appends a node to the tape; nodes are therefore already in topological
order and ``backward`` is a single reverse sweep.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


class Node:
    __slots__ = ("value", "parents", "vjp", "name", "index")

    def __init__(self, value, parents=(), vjp=None, name=None, index=-1):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node({self.name or self.index}, shape={self.shape})"


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    """Records a forward computation.

    ``root`` is the scalar the owning loss function designates as the
    objective; :func:`backward` differentiates it.  Each root may be
    back-propagated at most once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.root: Node | None = None
        self._done: set[int] = set()

    def _add(self, value, parents=(), vjp=None, name=None):
        node = Node(value, tuple(parents), vjp, name, len(self.nodes))
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None) -> Node:
        return self._add(np.asarray(value, dtype=np.float64), name=name)

    def named(self, node: Node, name: str) -> Node:
        node.name = name
        return node

    # -- elementwise / linear algebra -------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        sa, sb = a.shape, b.shape
        return self._add(a.value + b.value, (a, b),
                         lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Node, b: Node) -> Node:
        sa, sb = a.shape, b.shape
        return self._add(a.value - b.value, (a, b),
                         lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        sa, sb = a.shape, b.shape
        return self._add(av * bv, (a, b),
                         lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))

    def scale(self, a: Node, c: float) -> Node:
        return self._add(c * a.value, (a,), lambda g: (c * g,))

    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        return self._add(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def transpose(self, a: Node) -> Node:
        return self._add(a.value.T, (a,), lambda g: (g.T,))

    def affine(self, x: Node, w: Node, b: Node) -> Node:
        return self.add(self.matmul(x, w), b)

    def tanh(self, a: Node) -> Node:
        y = np.tanh(a.value)
        return self._add(y, (a,), lambda g: (g * (1.0 - y * y),))

    # -- shape / indexing --------------------------------------------------

    def reshape(self, a: Node, shape) -> Node:
        old = a.shape
        return self._add(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def gather(self, table: Node, ids) -> Node:
        """Embedding lookup: ``table[ids]`` for an integer array of any shape."""
        ids = np.asarray(ids)
        tshape = table.shape

        def vjp(g):
            out = np.zeros(tshape)
            np.add.at(out, ids.ravel(), g.reshape(-1, tshape[1]))
            return (out,)

        return self._add(table.value[ids], (table,), vjp)

    def select(self, a: Node, index, axis: int) -> Node:
        """``a`` indexed at a single position along ``axis``."""
        sl = [slice(None)] * a.value.ndim
        sl[axis] = index
        sl = tuple(sl)
        shape = a.shape

        def vjp(g):
            out = np.zeros(shape)
            out[sl] = g
            return (out,)

        return self._add(a.value[sl], (a,), vjp)

    def diag(self, a: Node) -> Node:
        return self._add(np.diagonal(a.value).copy(), (a,), lambda g: (np.diag(g),))

    # -- reductions --------------------------------------------------------

    def sum(self, a: Node, axis=None) -> Node:
        shape = a.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._add(np.sum(a.value, axis=axis), (a,), vjp)

    def mean(self, a: Node, axis=None) -> Node:
        count = a.value.size if axis is None else a.shape[axis]
        return self.scale(self.sum(a, axis), 1.0 / count)

    def dot(self, a: Node, c) -> Node:
        """Contract a vector node with a constant vector."""
        c = np.asarray(c, dtype=np.float64)
        return self._add(np.float64(a.value @ c), (a,), lambda g: (g * c,))

    def logmeanexp(self, a: Node, axis: int = 1) -> Node:
        """``log(mean(exp(a), axis))`` with max subtraction."""
        x = a.value
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        s = e.mean(axis=axis, keepdims=True)
        out = (m + np.log(s)).squeeze(axis)
        p = e / e.sum(axis=axis, keepdims=True)
        return self._add(out, (a,), lambda g: (np.expand_dims(g, axis) * p,))

    def softmax_cross_entropy(self, logits: Node, labels, weights=None) -> Node:
        """``(1/n) * sum_i w_i * CE(logits_i, labels_i)``; labels and weights are constants."""
        z = logits.value
        n = z.shape[0]
        labels = np.asarray(labels)
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        m = z.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))).ravel()
        per = lse - z[np.arange(n), labels]
        value = np.float64(np.dot(w, per) / n)
        p = np.exp(z - lse[:, None])

        def vjp(g):
            d = p.copy()
            d[np.arange(n), labels] -= 1.0
            return (g * d * (w / n)[:, None],)

        return self._add(value, (logits,), vjp)

    # -- backward ----------------------------------------------------------

    def backward(self, root: Node | None = None) -> dict:
        """Gradients of scalar ``root`` for every named node, keyed by name.

        Named nodes the root does not depend on get exact zeros.
        """
        root = self.root if root is None else root
        if root is None:
            raise RuntimeError("tape has no root to differentiate")
        if root.index in self._done:
            raise RuntimeError("backward already run for this root; double backward is unsupported")
        if np.ndim(root.value) != 0:
            raise ValueError("backward needs a scalar root")
        self._done.add(root.index)
        grads: list = [None] * (root.index + 1)
        grads[root.index] = np.float64(1.0)
        for node in reversed(self.nodes[: root.index + 1]):
            g = grads[node.index]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        out = {}
        for node in self.nodes:
            if node.name is None:
                continue
            g = grads[node.index] if node.index < len(grads) else None
            out[node.name] = np.zeros_like(node.value, dtype=np.float64) if g is None else np.asarray(g, dtype=np.float64)
        return out


def backward(tape: Tape) -> dict:
    return tape.backward()


class ParamSet(OrderedDict):
    """Named float64 parameter arrays with fixed shapes."""

    def __setitem__(self, key, value):
        value = np.array(value, dtype=np.float64)
        if key in self and self[key].shape != value.shape:
            raise ValueError(f"shape of {key!r} is fixed at {self[key].shape}")
        super().__setitem__(key, value)

    def copy(self) -> "ParamSet":
        return ParamSet((k, v.copy()) for k, v in self.items())

    def leaves(self, tape: Tape) -> dict[str, Node]:
        return {k: tape.leaf(v, name=k) for k, v in self.items()}

    def save(self, path, extra: dict | None = None) -> None:
        """Flat text checkpoint: one JSON object per array (name, shape, row-major values)."""
        lines = [json.dumps({"meta": extra or {}})]
        for k, v in self.items():
            lines.append(json.dumps({"name": k, "shape": list(v.shape), "values": v.ravel().tolist()}))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> tuple["ParamSet", dict]:
        params, meta = cls(), {}
        for i, line in enumerate(Path(path).read_text().splitlines()):
            rec = json.loads(line)
            if "meta" in rec:
                meta = rec["meta"]
                continue
            params[rec["name"]] = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
        return params, meta


def glorot(rng, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def forward_loss(params: ParamSet, batch, build_loss):
    """Run ``build_loss(tape, leaves, batch) -> scalar node`` on a fresh tape.

    Returns ``(loss_value, tape)`` with ``tape.root`` set.
    """
    tape = Tape()
    leaves = params.leaves(tape)
    root = build_loss(tape, leaves, batch)
    if not np.isfinite(root.value):
        raise NonFiniteError("non-finite loss")
    tape.root = root
    return float(root.value), tape


def sgd_step(params: ParamSet, grads: dict, lr: float) -> ParamSet:
    """In-place ``p -= lr * g``.  Raises before touching anything if a gradient is non-finite."""
    for k in params:
        if k in grads and not np.all(np.isfinite(grads[k])):
            raise NonFiniteError(f"non-finite gradient for {k!r}; step aborted")
    for k, p in params.items():
        if k in grads:
            p -= lr * grads[k]
    return params


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at array ``x`` (x is restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a, b, floor: float = 1e-12) -> float:
    """``max|a - b| / max(max|a|, max|b|)``; 0 for two all-zero arrays."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if not a.size:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max())
    return float(np.abs(a - b).max() / scale) if scale > floor else 0.0


def gradcheck(f, arrays: dict, analytic: dict, h: float = 1e-5) -> dict[str, float]:
    """Max relative error between ``analytic`` and central differences per array."""
    return {k: rel_error(analytic[k], numeric_grad(f, arrays[k], h)) for k in arrays}
