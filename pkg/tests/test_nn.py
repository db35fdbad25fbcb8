import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dualwalk import nn
from dualwalk.nn import NumericError, ParamStore, ShapeError, Tensor


def _away_from_kinks(x, eps=1e-3):
    # push entries off zero so relu-type kinks are not straddled by finite differences
    return np.where(np.abs(x) < eps, np.sign(x + 1e-12) * eps * 10, x)


# scalar objectives over each primitive; every fn rebuilds its graph from the store
OPS = {
    "add": lambda s: nn.sum_(s["a"] + s["b"]),
    "sub": lambda s: nn.sum_(nn.mul(s["a"] - s["b"], s["a"])),
    "mul": lambda s: nn.sum_(nn.mul(s["a"], s["b"])),
    "relu": lambda s: nn.sum_(nn.mul(nn.relu(s["a"]), s["b"])),
    "leaky_relu": lambda s: nn.sum_(nn.mul(nn.leaky_relu(s["a"], 0.2), s["b"])),
    "sigmoid": lambda s: nn.sum_(nn.mul(nn.sigmoid(s["a"]), s["b"])),
    "tanh": lambda s: nn.sum_(nn.mul(nn.tanh(s["a"]), s["b"])),
    "log": lambda s: nn.sum_(nn.log(nn.sigmoid(s["a"]))),
    "mean": lambda s: nn.mean(nn.mul(s["a"], s["b"])),
    "concat": lambda s: nn.sum_(nn.mul(nn.concat([s["a"], s["b"]]), nn.concat([s["b"], s["a"]]))),
    "reshape": lambda s: nn.sum_(nn.mul(nn.reshape(s["a"], (6,)), nn.reshape(s["b"], (6,)))),
    "slice_last": lambda s: nn.sum_(nn.mul(nn.slice_last(s["a"], 1, 3), nn.slice_last(s["b"], 0, 2))),
    "take_rows": lambda s: nn.sum_(nn.mul(nn.take_rows(s["a"], np.array([1, 0, 1])), s["c"])),
    "pick": lambda s: nn.sum_(nn.mul(nn.pick(s["a"], np.array([2, 0])), nn.sum_(s["b"], axis=-1))),
    "linear": lambda s: nn.sum_(nn.mul(nn.linear(s["W"], s["a"], s["bias"]), s["a"])),
    "batched_dot": lambda s: nn.sum_(nn.mul(nn.batched_dot(s["A"], s["a"]), nn.batched_dot(s["A"], s["b"]))),
    "weighted_sum": lambda s: nn.sum_(nn.mul(nn.weighted_sum(nn.sigmoid(nn.batched_dot(s["A"], s["b"])), s["A"]),
                                                 s["a"])),
    "softmax": lambda s: nn.sum_(nn.mul(nn.softmax(s["a"], np.array([[1, 1, 0], [1, 1, 1]], bool)), s["b"])),
    "log_softmax": lambda s: nn.sum_(nn.mul(nn.log_softmax(s["a"]), s["b"])),
    "cosine_similarity": lambda s: nn.sum_(nn.cosine_similarity(s["a"], s["b"])),
    "cross_entropy_bernoulli": lambda s: nn.sum_(nn.cross_entropy_bernoulli(nn.sigmoid(s["a"]),
                                                                            np.array([[0, 1, 1], [1, 0, 0]]))),
    "lstm_cell": lambda s: nn.sum_(nn.mul(nn.concat(list(nn.lstm_cell(s["a"], s["b"], s["b"], s["Wl"],
                                                                       s["bl"]))), nn.concat([s["a"], s["a"]]))),
}


def _store(seed):
    rng = np.random.default_rng(seed)
    s = ParamStore(seed)
    s.add("a", _away_from_kinks(rng.normal(size=(2, 3))))
    s.add("b", rng.normal(size=(2, 3)))
    s.add("c", rng.normal(size=(3, 3)))
    s.add("W", rng.normal(size=(3, 3)))
    s.add("bias", rng.normal(size=(3,)))
    s.add("A", rng.normal(size=(2, 4, 3)))
    s.add("Wl", rng.normal(size=(12, 6)) * 0.5)
    s.add("bl", rng.normal(size=(12,)) * 0.5)
    return s


@pytest.mark.parametrize("op", sorted(OPS))
def test_grad_check_every_op(op):
    worst = 0.0
    for point in range(10):
        store = _store(100 * point + 7)
        worst = max(worst, nn.grad_check(lambda: OPS[op](store), store))
    assert worst < 1e-4, f"{op}: relative error {worst:.2e}"


def test_grad_check_quadratic():
    s = ParamStore(0)
    s.add("W", np.random.default_rng(0).normal(size=(3, 4)))
    x = np.random.default_rng(1).normal(size=(4,))
    f = lambda: nn.mul(nn.sum_(nn.mul(nn.linear(s["W"], x), nn.linear(s["W"], x))), 0.5)
    assert nn.grad_check(f, s) < 1e-7


def test_grad_check_constant():
    s = ParamStore(0)
    s.add("W", np.ones((2, 2)))
    f = lambda: nn.sum_(Tensor(np.ones(3)))
    assert nn.backward(f(), [s["W"]])[0].tolist() == [[0, 0], [0, 0]]
    assert nn.grad_check(f, s) == 0.0


def test_softmax_closed_form():
    p = nn.softmax(Tensor([0.0, math.log(2)])).value
    assert np.allclose(p, [1 / 3, 2 / 3], atol=1e-15)


@given(arrays(np.float64, (5,), elements=st.floats(-50, 50)))
def test_softmax_sums_to_one(x):
    p = nn.softmax(Tensor(x)).value
    assert abs(p.sum() - 1) < 1e-12
    assert np.all(p > 0) or np.ptp(x) > 30  # underflow only for very spread inputs


@given(arrays(np.float64, (4,), elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_cosine_self_is_one(v):
    assert nn.cosine_similarity(Tensor(v), Tensor(v)).value == pytest.approx(1.0, abs=1e-12)


def test_cosine_example():
    assert nn.cosine_similarity(Tensor([1.0, 0.0]), Tensor([1.0, 1.0])).value == pytest.approx(0.70710678, abs=1e-8)


def test_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5,\)"):
        nn.linear(Tensor(np.zeros((3, 4))), Tensor(np.zeros(5)))


def test_non_finite_raises():
    with pytest.raises(NumericError):
        nn.log(Tensor([0.0]))


def test_backward_is_additive(rng):
    s = ParamStore(0)
    s.add("x", rng.normal(size=(3,)))
    f = nn.sum_(nn.mul(s["x"], s["x"]))
    g = nn.sum_(nn.sigmoid(s["x"]))
    gf, = nn.backward(f, [s["x"]])
    gg, = nn.backward(g, [s["x"]])
    gfg, = nn.backward(f + g, [s["x"]])
    assert np.array_equal(gfg, gf + gg)


def test_zero_grad_exact(rng):
    s = ParamStore(0)
    s.add("x", rng.normal(size=(3,)))
    s.accumulate(nn.sum_(nn.mul(s["x"], s["x"])))
    assert np.any(s.grads["x"] != 0)
    s.zero_grad()
    assert np.all(s.grads["x"] == 0.0)


# ------------------------------------------------------------------ LSTM

def test_lstm_zero_weights_give_zero_hidden():
    s = ParamStore(0)
    nn.init_lstm_stack(s, "m", 4, 4)
    for n in s.names():
        s.set_value(n, np.zeros_like(s[n].value))
    state = nn.zero_stack_state(2, 4)
    _, h = nn.lstm_stack_step(s, "m", state, Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))))
    assert np.all(h.value == 0)


def test_lstm_stack_matches_manual_composition(rng):
    H = 3
    s = ParamStore(5)
    nn.init_lstm_stack(s, "m", 2, H)
    state = [(Tensor(rng.normal(size=(1, H))), Tensor(rng.normal(size=(1, H)))) for _ in range(3)]
    x = Tensor(rng.normal(size=(1, 2)))
    override = Tensor(rng.normal(size=(1, H)))
    new, top = nn.lstm_stack_step(s, "m", state, x, override)
    h1, c1 = nn.lstm_cell(x, override, state[0][1], s["m.lstm0.W"], s["m.lstm0.b"])
    h2, c2 = nn.lstm_cell(h1, state[1][0], state[1][1], s["m.lstm1.W"], s["m.lstm1.b"])
    h3, c3 = nn.lstm_cell(h2, state[2][0], state[2][1], s["m.lstm2.W"], s["m.lstm2.b"])
    assert np.array_equal(top.value, h3.value)
    assert np.array_equal(new[0][1].value, c1.value)


def test_lstm_identity_passing_layers(rng):
    """Upper layers wired to pass their input through reproduce the layer-1 output."""
    H = 3
    s = ParamStore(5)
    nn.init_lstm_stack(s, "m", 2, H)
    big = 40.0
    for k in (1, 2):
        W = np.zeros((4 * H, 2 * H))
        b = np.zeros(4 * H)
        b[:H] = big            # input gate open
        b[H:2 * H] = -big      # forget gate shut
        b[2 * H:3 * H] = big   # output gate open
        W[3 * H:, :H] = np.eye(H) * 1e-3  # candidate in the near-linear range of tanh
        s.set_value(f"m.lstm{k}.W", W)
        s.set_value(f"m.lstm{k}.b", b)
    state = nn.zero_stack_state(1, H)
    x = Tensor(rng.normal(size=(1, 2)))
    override = Tensor(rng.normal(size=(1, H)))
    _, top = nn.lstm_stack_step(s, "m", state, x, override)
    h1, _ = nn.lstm_cell(x, override, state[0][1], s["m.lstm0.W"], s["m.lstm0.b"])
    # each passing layer maps h to tanh(tanh(1e-3 h)) ~ 1e-3 h; undo the two scalings
    assert np.allclose(top.value / 1e-6, h1.value, rtol=1e-5)


def test_lstm_deterministic(rng):
    s = ParamStore(1)
    nn.init_lstm_stack(s, "m", 2, 3)
    x, o = Tensor(rng.normal(size=(1, 2))), Tensor(rng.normal(size=(1, 3)))
    a = nn.lstm_stack_step(s, "m", nn.zero_stack_state(1, 3), x, o)[1].value
    b = nn.lstm_stack_step(s, "m", nn.zero_stack_state(1, 3), x, o)[1].value
    assert a.tobytes() == b.tobytes()


def test_forget_bias_initialised_to_one():
    s = ParamStore(0)
    nn.init_lstm_stack(s, "m", 2, 3)
    b = s["m.lstm0.b"].value
    assert b[3:6].tolist() == [1, 1, 1] and not b[:3].any() and not b[6:].any()


# -------------------------------------------------------------- sampling

def test_categorical_single():
    rng = np.random.default_rng(0)
    assert all(nn.categorical_sample([1.0], rng) == 0 for _ in range(20))


def test_categorical_frequency():
    rng = np.random.default_rng(42)
    draws = [nn.categorical_sample([0.5, 0.5], rng) for _ in range(100_000)]
    assert abs(np.mean(np.array(draws) == 0) - 0.5) < 0.01


def test_log_prob():
    assert nn.log_prob([0.25, 0.75], 0) == pytest.approx(-1.3862944, abs=1e-7)
    with pytest.raises(NumericError):
        nn.log_prob([0.0, 1.0], 0)


def test_batch_sampler_matches_scalar(rng):
    probs = rng.dirichlet(np.ones(5), size=50)
    probs[:, 2] = 0
    probs /= probs.sum(1, keepdims=True)
    u = rng.random(50)
    batch = nn.categorical_sample_batch(probs, u)
    assert [nn.categorical_sample(p, u=x) for p, x in zip(probs, u)] == batch.tolist()
    assert not np.any(batch == 2)


def test_adam_direction():
    s = ParamStore(0)
    s.add("x", np.array([1.0]))
    opt = nn.Adam(s, lr=0.1)
    s.grads["x"][:] = 2.0
    opt.step(sign=-1.0)
    assert s["x"].value[0] == pytest.approx(0.9)
