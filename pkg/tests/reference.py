"""Brute-force reference implementations shared by the unit and acceptance tests."""
import math

import numpy as np

from depro.netcore import Tape, gradcheck


def loop_cov(u, v):
    n, a = u.shape
    b = v.shape[1]
    ubar = [sum(u[i, p] for i in range(n)) / n for p in range(a)]
    vbar = [sum(v[i, q] for i in range(n)) / n for q in range(b)]
    out = np.zeros((a, b))
    for p in range(a):
        for q in range(b):
            out[p, q] = sum((u[i, p] - ubar[p]) * (v[i, q] - vbar[q]) for i in range(n)) / (n - 1)
    return out


def loop_weighted_cov(u, v, w):
    # weights scale the feature rows before centring
    n = u.shape[0]
    wu = np.array([[w[i] * u[i, p] for p in range(u.shape[1])] for i in range(n)])
    wv = np.array([[w[i] * v[i, q] for q in range(v.shape[1])] for i in range(n)])
    return loop_cov(wu, wv)


def loop_frob(c):
    return sum(c[p, q] ** 2 for p in range(c.shape[0]) for q in range(c.shape[1]))


def loop_objective(r, w, k):
    m = r.shape[1] // k
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            total += loop_frob(loop_weighted_cov(r[:, i * k:(i + 1) * k], r[:, j * k:(j + 1) * k], w))
    return total


def loop_infonce(local, glob, w, b):
    n = local.shape[0]
    proj = local @ w + b
    total = 0.0
    for i in range(n):
        s = [float(proj[i] @ glob[j]) for j in range(n)]
        total += s[i] - math.log(sum(math.exp(v) for v in s) / n)
    return total / n


def check_op(build, arrays, seed=0, h=1e-5):
    """Max relative FD error per input for ``sum(r * build(tape, leaves))`` with a fixed random ``r``."""
    proj = {}

    def run():
        tape = Tape()
        leaves = {k: tape.leaf(v, name=k) for k, v in arrays.items()}
        out = build(tape, leaves)
        if "r" not in proj:
            proj["r"] = np.random.default_rng(seed).normal(size=np.shape(out.value))
        if np.ndim(out.value):
            root = tape.dot(tape.reshape(out, (-1,)), np.ravel(proj["r"]))
        else:
            root = tape.scale(out, float(proj["r"]))
        return tape, root

    tape, root = run()
    grads = tape.backward(root)
    return gradcheck(lambda: float(run()[1].value), arrays, grads, h)


OPS = {
    "add": (lambda t, l: t.add(l["a"], l["b"]), {"a": (3, 4), "b": (3, 4)}),
    "add_broadcast": (lambda t, l: t.add(l["a"], l["b"]), {"a": (3, 4), "b": (4,)}),
    "sub": (lambda t, l: t.sub(l["a"], l["b"]), {"a": (3, 4), "b": (1, 4)}),
    "mul": (lambda t, l: t.mul(l["a"], l["b"]), {"a": (3, 4), "b": (3, 4)}),
    "mul_broadcast": (lambda t, l: t.mul(l["a"], l["b"]), {"a": (3, 4), "b": (3, 1)}),
    "scale": (lambda t, l: t.scale(l["a"], -2.5), {"a": (2, 5)}),
    "matmul": (lambda t, l: t.matmul(l["a"], l["b"]), {"a": (3, 4), "b": (4, 2)}),
    "transpose": (lambda t, l: t.transpose(l["a"]), {"a": (3, 4)}),
    "affine": (lambda t, l: t.affine(l["x"], l["w"], l["b"]), {"x": (5, 3), "w": (3, 2), "b": (2,)}),
    "tanh": (lambda t, l: t.tanh(l["a"]), {"a": (4, 3)}),
    "reshape": (lambda t, l: t.reshape(l["a"], (2, 6)), {"a": (3, 4)}),
    "select": (lambda t, l: t.select(l["a"], 1, axis=1), {"a": (3, 4, 2)}),
    "diag": (lambda t, l: t.diag(l["a"]), {"a": (4, 4)}),
    "sum_all": (lambda t, l: t.sum(l["a"]), {"a": (3, 4)}),
    "sum_axis": (lambda t, l: t.sum(l["a"], axis=0), {"a": (3, 4)}),
    "mean": (lambda t, l: t.mean(l["a"], axis=1), {"a": (3, 4)}),
    "dot": (lambda t, l: t.dot(l["a"], np.array([0.5, -1.0, 2.0])), {"a": (3,)}),
    "logmeanexp": (lambda t, l: t.logmeanexp(l["a"], axis=1), {"a": (4, 5)}),
    "logmeanexp_axis0": (lambda t, l: t.logmeanexp(l["a"], axis=0), {"a": (4, 5)}),
    "gather": (lambda t, l: t.gather(l["table"], np.array([[0, 5, 2], [2, 2, 1], [4, 0, 3]])),
               {"table": (6, 2)}),
    "softmax_cross_entropy": (
        lambda t, l: t.softmax_cross_entropy(l["z"], np.array([0, 2, 1, 1, 0]),
                                             np.array([0.5, 1.0, 0.0, 2.0, 1.5])),
        {"z": (5, 3)}),
}


def op_arrays(shapes, seed):
    rng = np.random.default_rng(seed)
    return {k: rng.normal(size=s) * 1.5 for k, s in shapes.items()}
