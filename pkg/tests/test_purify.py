import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reference import loop_infonce

from depro.model import DeproModel, ModelDims, forward
from depro.netcore import Tape, gradcheck
from depro.purify import infonce, infonce_terms, n_kept, saliency, selection_frequency


# -- saliency -----------------------------------------------------------------

def test_default_ratio_keeps_six_of_eight():
    assert n_kept(8, 0.7) == 6
    assert n_kept(8, 0.6) == 5
    assert n_kept(8, 1.0) == 8
    assert n_kept(10, 0.7) == 7
    assert n_kept(8, 0.01) == 1


@pytest.mark.parametrize("ratio", [0.0, -0.2, 1.01, float("nan")])
def test_ratio_out_of_range(ratio):
    with pytest.raises(ValueError):
        saliency(np.ones((2, 8, 3)), ratio)


def test_zero_gradient_slot_ranked_last():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(5, 8, 4))
    g[:, 3] = 0.0
    rep = saliency(g, 0.7)
    assert rep.m == 6
    assert not np.any(rep.selected == 3)
    assert np.all(rep.per_slot_norm[:, 3] == 0)


def test_ties_go_to_lower_slot():
    rep = saliency(np.ones((1, 4, 2)), 0.5)
    assert rep.selected.tolist() == [[0, 1]]


def test_mask_and_frequency():
    g = np.zeros((2, 4, 1))
    g[0, :, 0] = [4, 3, 2, 1]
    g[1, :, 0] = [1, 2, 3, 4]
    rep = saliency(g, 0.5)
    assert rep.selected.tolist() == [[0, 1], [3, 2]]
    np.testing.assert_array_equal(rep.mask(), [[1, 1, 0, 0], [0, 0, 1, 1]])
    np.testing.assert_array_equal(selection_frequency([rep, rep]), [0.5, 0.5, 0.5, 0.5])


def straight_line_ce(model, t, labels, weights):
    p = model.params
    h = np.tanh(t.reshape(t.shape[0], -1) @ p["enc.W1"] + p["enc.b1"])
    z = np.tanh(h @ p["enc.W2"] + p["enc.b2"])
    logits = z @ p["cls.W"] + p["cls.b"]
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    return float(np.mean(weights * (lse - logits[np.arange(len(labels)), labels])))


def test_slot_norms_match_finite_differences():
    dims = ModelDims(vocab=20, kslots=5, d_emb=3, d_hidden=6, m_z=4)
    model = DeproModel.init(dims, seed=3)
    rng = np.random.default_rng(3)
    ids, labels, w = rng.integers(0, 20, size=(4, 5)), rng.integers(0, 2, size=4), rng.uniform(0.5, 1.5, size=4)
    tape = Tape()
    leaves = model.params.leaves(tape)
    t, z = forward(tape, leaves, model, ids)
    ce = tape.softmax_cross_entropy(tape.affine(z, leaves["cls.W"], leaves["cls.b"]), labels, w)
    rep = saliency(tape.backward(ce)["T"], 0.6)

    tv = t.value.copy()
    h = 1e-5
    for i in range(4):
        for j in range(5):
            g = np.zeros(3)
            for d in range(3):
                tp, tm = tv.copy(), tv.copy()
                tp[i, j, d] += h
                tm[i, j, d] -= h
                g[d] = (straight_line_ce(model, tp, labels, w) - straight_line_ce(model, tm, labels, w)) / (2 * h)
            assert rep.per_slot_norm[i, j] == pytest.approx(np.linalg.norm(g), rel=1e-3)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.sampled_from([2.0, 0.5, 1024.0]),
       ratio=st.sampled_from([0.3, 0.5, 0.7, 1.0]))
def test_selection_is_scale_invariant(seed, scale, ratio):
    g = np.random.default_rng(seed).normal(size=(6, 8, 3))
    a, b = saliency(g, ratio), saliency(scale * g, ratio)
    assert np.array_equal(a.selected, b.selected)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), ratio=st.floats(0.05, 1.0))
def test_selected_dominate_unselected(seed, ratio):
    g = np.random.default_rng(seed).normal(size=(4, 8, 2))
    rep = saliency(g, ratio)
    mask = rep.mask().astype(bool)
    for i in range(4):
        if (~mask[i]).any():
            assert rep.per_slot_norm[i, mask[i]].min() >= rep.per_slot_norm[i, ~mask[i]].max()


# -- InfoNCE ----------------------------------------------------------------------

def critic(rng, d, m):
    return rng.normal(size=(d, m)), rng.normal(size=m)


def test_single_sample_is_exactly_zero():
    rng = np.random.default_rng(0)
    est = infonce(rng.normal(size=(1, 3)) * 50, rng.normal(size=(1, 4)) * 50, critic(rng, 3, 4))
    assert est.value == 0.0 and est.batch_size == 1


def test_constant_global_is_exactly_zero():
    rng = np.random.default_rng(1)
    glob = np.tile(rng.normal(size=(1, 4)) * 7, (9, 1))
    assert infonce(rng.normal(size=(9, 3)) * 7, glob, critic(rng, 3, 4)).value == 0.0


def test_dominant_diagonal_approaches_log_n():
    eye = np.eye(4)
    est = infonce(eye, eye, (10.0 * eye, np.zeros(4)))
    assert est.value == pytest.approx(math.log(4), abs=1e-3)


def test_matches_loop_oracle():
    rng = np.random.default_rng(2)
    local, glob = rng.normal(size=(6, 3)), rng.normal(size=(6, 5))
    w, b = critic(rng, 3, 5)
    assert abs(infonce(local, glob, (w, b)).value - loop_infonce(local, glob, w, b)) < 1e-12


def test_mismatched_rows_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        infonce(np.zeros((3, 2)), np.zeros((4, 2)), critic(rng, 2, 2))


@pytest.mark.parametrize("seed", range(5))
def test_infonce_gradients(seed):
    rng = np.random.default_rng(seed)
    arrays = {"local": rng.normal(size=(5, 3)), "glob": rng.normal(size=(5, 4)),
              "W": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}

    def build():
        tape = Tape()
        lv = {k: tape.leaf(v, name=k) for k, v in arrays.items()}
        return tape, tape.mean(infonce_terms(tape, lv["local"], lv["glob"], lv["W"], lv["b"]))

    tape, root = build()
    errs = gradcheck(lambda: float(build()[1].value), arrays, tape.backward(root))
    assert max(errs.values()) < 1e-4, errs


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), scale=st.floats(0.01, 30.0))
def test_estimate_bounded_by_log_batch(seed, n, scale):
    rng = np.random.default_rng(seed)
    local = rng.normal(size=(n, 3)) * scale
    est = infonce(local, local @ rng.normal(size=(3, 4)), critic(rng, 3, 4))
    assert est.value <= math.log(n) + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 20))
def test_joint_permutation_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    local, glob = rng.normal(size=(n, 3)), rng.normal(size=(n, 4))
    c = critic(rng, 3, 4)
    perm = rng.permutation(n)
    assert abs(infonce(local, glob, c).value - infonce(local[perm], glob[perm], c).value) < 1e-10


def test_maximising_estimate_beats_independent_pairs():
    d, m, n = 4, 6, 64
    mixing = np.random.default_rng(0).normal(size=(d, m))

    def pairs(dependent, rng):
        x = rng.normal(size=(n, d))
        g = x @ mixing + 0.3 * rng.normal(size=(n, m)) if dependent else 1.5 * rng.normal(size=(n, m))
        return x, g

    def fit_and_score(dependent):
        rng = np.random.default_rng(1)
        w, b = 0.01 * rng.normal(size=(d, m)), np.zeros(m)
        for _ in range(300):
            x, g = pairs(dependent, rng)
            tape = Tape()
            wl, bl = tape.leaf(w, name="W"), tape.leaf(b, name="b")
            grads = tape.backward(tape.mean(infonce_terms(tape, tape.leaf(x), tape.leaf(g), wl, bl)))
            w, b = w + 0.05 * grads["W"], b + 0.05 * grads["b"]
        held_out = np.random.default_rng(99)
        return np.mean([infonce(*pairs(dependent, held_out), (w, b)).value for _ in range(20)])

    assert fit_and_score(True) >= fit_and_score(False) + 1.0

