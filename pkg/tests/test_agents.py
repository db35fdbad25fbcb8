import numpy as np
import pytest

from dualwalk import nn
from dualwalk.agents import (check_shapes, dwarf_attention, dwarf_step, expected_shapes, giant_step, init_params,
                             lambda_value)
from dualwalk.nn import ParamStore, ShapeError, Tensor


def _sig(x):
    return 1 / (1 + np.exp(-x))


def _ref_stack(params, prefix, x, override):
    """Plain numpy three-layer LSTM step from a zero state; gates ordered input, forget, output, candidate."""
    inp, h_prev = x, override
    H = len(override)
    for k in range(3):
        W, b = params[f"{prefix}.lstm{k}.W"], params[f"{prefix}.lstm{k}.b"]
        z = W @ np.concatenate([inp, h_prev]) + b
        i, o, g = _sig(z[:H]), _sig(z[2 * H:3 * H]), np.tanh(z[3 * H:])
        inp = o * np.tanh(i * g)  # previous cell is zero
        h_prev = np.zeros(H)
    return inp


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _store(d=1, seed=0):
    s = ParamStore(seed)
    init_params(s, d, n_relations=3, n_clusters=2)
    return s


def _giant(store, d, cand, cluster_emb=None, prev=None, mask=None):
    B = 1
    H = 2 * d
    rng = np.random.default_rng(5)
    prev = prev or {k: Tensor(rng.normal(size=(B, H))) for k in ("a", "hc", "he")}
    cluster_emb = Tensor(np.ones((B, 2 * d))) if cluster_emb is None else cluster_emb
    cand = np.asarray(cand, float)[None]
    mask = np.ones(cand.shape[:2], bool) if mask is None else mask
    return giant_step(store, nn.zero_stack_state(B, H), prev["a"], prev["hc"], prev["he"], cluster_emb,
                      Tensor(cand), mask), prev


def test_giant_single_candidate():
    r, _ = _giant(_store(2), 2, [[0.3, -1, 2, 0.1]])
    assert r.probs.value.tolist() == [[1.0]]


def test_giant_identical_candidates():
    r, _ = _giant(_store(2), 2, [[0.3, -1, 2, 0.1]] * 2)
    assert np.allclose(r.probs.value, 0.5, atol=1e-15)


def test_giant_hand_computed_d1():
    store = _store(1, seed=11)
    P = store.state()
    cand = [[0.5, -1.0], [2.0, 0.25], [-0.3, 0.7]]
    r, prev = _giant(store, 1, cand, cluster_emb=Tensor([[0.4, -0.2]]))
    override = P["giant.W_mix"] @ np.concatenate([prev["hc"].value[0], prev["he"].value[0]])
    h_c = _ref_stack(P, "giant", prev["a"].value[0], override)
    s = P["giant.W2"] @ np.maximum(P["giant.W1"] @ np.concatenate([[0.4, -0.2], h_c]), 0)
    logits = np.array([np.concatenate([c, c]) @ s for c in cand])
    assert np.allclose(r.probs.value[0], _softmax(logits), atol=1e-12)


def test_giant_empty_candidates_rejected():
    with pytest.raises(ValueError):
        _giant(_store(1), 1, [[0.1, 0.2]], mask=np.zeros((1, 1), bool))


def test_giant_permutation_equivariant(rng):
    store = _store(2, seed=3)
    cand = rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    p, _ = _giant(store, 2, cand)
    q, _ = _giant(store, 2, cand[perm])
    assert np.allclose(q.probs.value[0], p.probs.value[0][perm], atol=1e-14)
    assert abs(p.probs.value.sum() - 1) < 1e-12


def test_giant_deterministic():
    store = _store(2, seed=3)
    a, _ = _giant(store, 2, [[1, 2, 3, 4], [0, 1, 0, 1]])
    b, _ = _giant(store, 2, [[1, 2, 3, 4], [0, 1, 0, 1]])
    assert a.logits.value.tobytes() == b.logits.value.tobytes()


# ------------------------------------------------------------- attention

def _att_store(W, a):
    s = _store(1)
    s.set_value("dwarf.att_W", np.array([[W]]))
    s.set_value("dwarf.att_a", np.array(a, float))
    return s


def test_attention_self_only():
    s = _att_store(2.0, [0.3, -0.4])
    atn = dwarf_attention(s, np.array([[1.5]]), np.array([[[1.5]]]), np.array([[True]]))
    assert atn.value.tolist() == [[3.0]]


def test_attention_shared_embedding(rng):
    s = _store(3, seed=9)
    v = rng.normal(size=3)
    nb = np.tile(v, (1, 4, 1))
    atn = dwarf_attention(s, rng.normal(size=(1, 3)), nb, np.ones((1, 4), bool))
    assert np.allclose(atn.value[0], s["dwarf.att_W"].value @ v, atol=1e-14)


def test_attention_hand_computed_d1():
    s = _att_store(2.0, [-1.0, 1.0])
    atn = dwarf_attention(s, np.array([[1.0]]), np.array([[[1.0], [-0.5]]]), np.array([[True, True]]))
    # W e = 2, W n = [2, -1]; a . [W e; W n] = -2 + [2, -1] = [0, -3]; leaky -> [0, -0.6]
    w = _softmax(np.array([0.0, -0.6]))
    assert atn.value[0, 0] == pytest.approx(w[0] * 2 - w[1] * 1, abs=1e-14)


def test_attention_masks_padding():
    s = _att_store(1.0, [0.5, 0.5])
    a = dwarf_attention(s, np.array([[1.0]]), np.array([[[1.0], [9.0]]]), np.array([[True, False]]))
    assert a.value.tolist() == [[1.0]]


# ----------------------------------------------------------------- dwarf

def _dwarf(store, d, cand, seed=5):
    rng = np.random.default_rng(seed)
    H = 2 * d
    t = lambda n: Tensor(rng.normal(size=(1, n)))
    inputs = dict(prev_action_emb=t(2 * d), prev_h_e=t(H), prev_atn=t(d), prev_h_c=t(H), e_t=t(d),
                  r_last=t(d), r_q=t(d), atn_t=t(d))
    cand = np.asarray(cand, float)[None]
    r = dwarf_step(store, nn.zero_stack_state(1, H), cand_emb=Tensor(cand), mask=np.ones(cand.shape[:2], bool),
                   **inputs)
    return r, {k: v.value[0] for k, v in inputs.items()}


def test_dwarf_single_and_duplicate():
    s = _store(2, seed=1)
    one, _ = _dwarf(s, 2, [[1, 2, 3, 4]])
    assert one.probs.value.tolist() == [[1.0]]
    dup, _ = _dwarf(s, 2, [[1, 2, 3, 4], [0, 0, 1, 1], [1, 2, 3, 4]])
    p = dup.probs.value[0]
    assert p[0] == p[2]


def test_dwarf_hand_computed_d1():
    store = _store(1, seed=21)
    P = store.state()
    cand = [[0.5, -1.0], [2.0, 0.25]]
    r, x = _dwarf(store, 1, cand)
    override = P["dwarf.W_mix"] @ np.concatenate([x["prev_h_e"], x["prev_atn"], x["prev_h_c"]])
    h_e = _ref_stack(P, "dwarf", x["prev_action_emb"], override)
    head = np.concatenate([x["e_t"], x["r_last"], x["r_q"], x["atn_t"], h_e])
    s = P["dwarf.W2"] @ np.maximum(P["dwarf.W1"] @ head, 0)
    logits = np.array([np.tile(c, 3) @ s for c in cand])
    assert np.allclose(r.probs.value[0], _softmax(logits), atol=1e-12)


def test_dwarf_permutation_equivariant(rng):
    store = _store(2, seed=4)
    cand = rng.normal(size=(4, 4))
    perm = np.array([2, 0, 3, 1])
    p, _ = _dwarf(store, 2, cand)
    q, _ = _dwarf(store, 2, cand[perm])
    assert np.allclose(q.probs.value[0], p.probs.value[0][perm], atol=1e-14)


# ---------------------------------------------------------------- lambda

def test_lambda_zero_weights():
    s = _store(2)
    for n in ("lambda.W1", "lambda.b1", "lambda.W2", "lambda.b2"):
        s.set_value(n, np.zeros_like(s[n].value))
    assert lambda_value(s, np.ones((3, 8))).value.tolist() == [0.5] * 3


def test_lambda_large_bias_stays_below_one():
    s = _store(2)
    s.set_value("lambda.b2", np.array([80.0]))
    v = lambda_value(s, np.ones((1, 8))).value[0]
    assert 0.999 < v < 1.0


def test_lambda_grad_check(rng):
    s = _store(2, seed=6)
    feats = rng.normal(size=(4, 8))
    names = ["lambda.W1", "lambda.b1", "lambda.W2", "lambda.b2"]
    assert nn.grad_check(lambda: nn.sum_(lambda_value(s, feats)), s, names=names) < 1e-4


# ---------------------------------------------------------------- shapes

def test_stated_shapes_hold():
    for d in (1, 3, 50):
        s = ParamStore(0)
        init_params(s, d, 5, 4)
        check_shapes(s.state(), d)
    shapes = expected_shapes(2)
    assert shapes["giant.W_mix"] == (4, 8) and shapes["dwarf.W_mix"] == (4, 10)
    assert shapes["giant.W1"] == (8, 8) and shapes["dwarf.W2"] == (12, 12)


def test_wrong_shape_rejected():
    s = ParamStore(0)
    init_params(s, 2, 5, 4)
    params = s.state()
    params["dwarf.W1"] = np.zeros((8, 8))
    with pytest.raises(ShapeError, match="dwarf.W1"):
        check_shapes(params, 2)
