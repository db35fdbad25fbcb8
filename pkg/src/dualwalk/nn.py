"""Small reverse-mode autodiff over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients.  Arrays carry an optional
leading batch dimension; broadcasting is limited to what numpy does for
elementwise ops, and gradients are summed back to the operand shape.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(ArithmeticError):
    """Raised when an op produces NaN or Inf."""


class ShapeError(ValueError):
    pass


_TAPE = threading.local()


def _recording() -> bool:
    return getattr(_TAPE, "on", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording parents (inference only); per thread."""
    prev = _recording()
    _TAPE.on = False
    try:
        yield
    finally:
        _TAPE.on = prev


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced by {name or 'op'}")
        self.value = value
        self.requires_grad = requires_grad
        self.parents = parents if requires_grad else ()
        self.backward_fn = backward_fn if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents: Sequence[Tensor], fn, name):
    req = _recording() and any(p.requires_grad for p in parents)
    return Tensor(value, tuple(parents), fn, requires_grad=req, name=name)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.value > 0
    scale = np.where(mask, 1.0, slope)
    return _make(x.value * scale, (x,), lambda g: (g * scale,), "leaky_relu")


_TINY = np.finfo(np.float64).tiny
_ONE_MINUS = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    # keep the output strictly inside (0, 1) even when exp saturates
    np.clip(out, _TINY, _ONE_MINUS, out=out)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def log(x: Tensor) -> Tensor:
    v = x.value
    if np.any(v <= 0):
        raise NumericError("log of non-positive value")
    return _make(np.log(v), (x,), lambda g: (g / v,), "log")


# ----------------------------------------------------------------- reductions

def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(x.value.sum(axis=axis), (x,), back, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.value.size
    return mul(sum_(x), 1.0 / n)


# ------------------------------------------------------------ shape handling

def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _make(value, parts, back, "concat")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _make(x.value[..., start:stop], (x,), back, "slice")


def take_rows(table: Tensor, index) -> Tensor:
    """Gather ``table[index]`` for an integer index array of any shape."""
    index = np.asarray(index, dtype=np.int64)
    shape = table.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index.reshape(-1), g.reshape(-1, shape[-1]))
        return (out,)

    return _make(table.value[index], (table,), back, "take_rows")


def pick(x: Tensor, index) -> Tensor:
    """Row-wise gather: ``out[b] = x[b, index[b]]`` for a (B, n) input."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return _make(x.value[rows, index], (x,), back, "pick")


# ------------------------------------------------------------ linear algebra

def linear(W: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` with W of shape (out, in) and x of shape (..., in)."""
    W, x = as_tensor(W), as_tensor(x)
    if W.value.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: weight {W.shape} incompatible with input {x.shape}")
    Wv, xv = W.value, x.value
    out = xv @ Wv.T
    parents = [W, x]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
        out = out + b.value
        parents.append(b)

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        grads = [g2.T @ x2, g @ Wv]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, back, "linear")


def batched_dot(A: Tensor, s: Tensor) -> Tensor:
    """Score rows of A (B, n, k) against s (B, k), giving (B, n)."""
    A, s = as_tensor(A), as_tensor(s)
    if A.value.ndim != 3 or s.value.ndim != 2 or A.shape[0] != s.shape[0] or A.shape[2] != s.shape[1]:
        raise ShapeError(f"batched_dot: shapes {A.shape} and {s.shape} incompatible")
    Av, sv = A.value, s.value
    out = np.einsum("bnk,bk->bn", Av, sv)

    def back(g):
        return (g[:, :, None] * sv[:, None, :], np.einsum("bn,bnk->bk", g, Av))

    return _make(out, (A, s), back, "batched_dot")


def weighted_sum(weights: Tensor, V: Tensor) -> Tensor:
    """``out[b] = sum_n weights[b, n] * V[b, n, :]``."""
    wv, Vv = weights.value, V.value
    out = np.einsum("bn,bnk->bk", wv, Vv)

    def back(g):
        return (np.einsum("bk,bnk->bn", g, Vv), g[:, None, :] * wv[:, :, None])

    return _make(out, (weights, V), back, "weighted_sum")


# ----------------------------------------------------------- probabilities

_MASKED = -1e30


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; entries with ``mask == False`` get probability 0."""
    v = x.value if mask is None else np.where(mask, x.value, _MASKED)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), back, "softmax")


def log_softmax(x: Tensor, mask=None) -> Tensor:
    v = x.value if mask is None else np.where(mask, x.value, _MASKED)
    z = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    if mask is not None:
        # keep the stored value finite; masked slots are never read
        out = np.where(mask, out, 0.0)

    def back(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), back, "log_softmax")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"cosine_similarity: shapes {a.shape} and {b.shape} incompatible")
    av, bv = a.value, b.value
    na = np.linalg.norm(av, axis=-1, keepdims=True)
    nb = np.linalg.norm(bv, axis=-1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise NumericError("cosine_similarity of a zero vector")
    dot = (av * bv).sum(axis=-1, keepdims=True)
    cos = dot / (na * nb)

    def back(g):
        g = np.expand_dims(g, -1)
        ga = g * (bv / (na * nb) - cos * av / (na * na))
        gb = g * (av / (na * nb) - cos * bv / (nb * nb))
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(cos[..., 0], (a, b), back, "cosine_similarity")


def cross_entropy_bernoulli(lam: Tensor, y) -> Tensor:
    """Elementwise ``-(1 - y) ln(1 - lam) - y ln(lam)``."""
    y = np.asarray(y, dtype=np.float64)
    v = lam.value
    if np.any(v <= 0) or np.any(v >= 1):
        raise NumericError("cross_entropy_bernoulli needs 0 < lam < 1")
    out = -(1.0 - y) * np.log1p(-v) - y * np.log(v)
    return _make(out, (lam,), lambda g: (g * ((1.0 - y) / (1.0 - v) - y / v),), "bce")


# ------------------------------------------------------------------ backward

def backward(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors the loss does not depend on get a zero gradient.
    """
    wrt = list(wrt)
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node.backward_fn is not None else grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(t), np.zeros_like(t.value)) for t in wrt]


# ----------------------------------------------------------------- parameters

class ParamStore:
    """Named trainable tensors with matching gradient slots."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.grads[name] = np.zeros_like(t.value)
        return t

    def uniform(self, name: str, shape, fan_in: int | None = None) -> Tensor:
        fan_in = fan_in if fan_in is not None else shape[-1]
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def accumulate(self, loss: Tensor, prefix: str = "") -> None:
        names = self.names(prefix)
        for n, g in zip(names, backward(loss, [self.params[n] for n in names])):
            self.grads[n] += g

    def set_value(self, name: str, value) -> None:
        t = self.params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != t.value.shape:
            raise ShapeError(f"{name}: expected shape {t.value.shape}, got {value.shape}")
        t.value = value.copy()

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self.params.items()}


class Adam:
    def __init__(self, store: ParamStore, lr: float, names: Sequence[str] | None = None,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.names = list(names) if names is not None else store.names()
        self.m = {n: np.zeros_like(store[n].value) for n in self.names}
        self.v = {n: np.zeros_like(store[n].value) for n in self.names}
        self.t = 0

    def step(self, sign: float = -1.0) -> None:
        """Apply one update. ``sign=-1`` descends the gradient, ``+1`` ascends."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for n in self.names:
            g = self.store.grads[n]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {n}")
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            mhat = self.m[n] / (1 - b1 ** self.t)
            vhat = self.v[n] / (1 - b2 ** self.t)
            p = self.store[n]
            p.value = p.value + sign * self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ----------------------------------------------------------------------- LSTM

N_LAYERS = 3


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM update with gate order (input, forget, output, candidate)."""
    H = h.shape[-1]
    z = linear(W, concat([x, h]), b)
    i = sigmoid(slice_last(z, 0, H))
    f = sigmoid(slice_last(z, H, 2 * H))
    o = sigmoid(slice_last(z, 2 * H, 3 * H))
    g = tanh(slice_last(z, 3 * H, 4 * H))
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def init_lstm_stack(store: ParamStore, prefix: str, input_size: int, hidden: int,
                    layers: int = N_LAYERS) -> None:
    for k in range(layers):
        in_k = input_size if k == 0 else hidden
        store.uniform(f"{prefix}.lstm{k}.W", (4 * hidden, in_k + hidden), fan_in=in_k + hidden)
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        store.add(f"{prefix}.lstm{k}.b", bias)


def zero_stack_state(batch: int, hidden: int, layers: int = N_LAYERS):
    z = np.zeros((batch, hidden))
    return [(Tensor(z), Tensor(z)) for _ in range(layers)]


def lstm_stack_step(store: ParamStore, prefix: str, state, x: Tensor, override: Tensor):
    """Advance a stacked LSTM one step.

    ``override`` replaces the first layer's previous hidden state; its cell is
    kept.  Upper layers read the new hidden of the layer below.  Returns the
    new per-layer ``(hidden, cell)`` list and the top hidden.
    """
    new_state = []
    inp = x
    for k, (h, c) in enumerate(state):
        h_in = override if k == 0 else h
        if h_in.shape != c.shape:
            raise ShapeError(f"{prefix}: hidden {h_in.shape} vs cell {c.shape}")
        h_new, c_new = lstm_cell(inp, h_in, c, store[f"{prefix}.lstm{k}.W"], store[f"{prefix}.lstm{k}.b"])
        new_state.append((h_new, c_new))
        inp = h_new
    return new_state, inp


# ---------------------------------------------------------------- sampling

def categorical_sample(probs, rng=None, u: float | None = None) -> int:
    """Inverse-CDF draw from ``probs`` in the given order."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    if u is None:
        u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    idx = min(idx, len(probs) - 1)
    # never land on a zero-probability slot because of rounding at the top end
    while probs[idx] == 0 and idx > 0:
        idx -= 1
    return idx


def categorical_sample_batch(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF sampling with pre-drawn uniforms ``u`` of shape (B,)."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= u[:, None]).sum(axis=-1)
    idx = np.minimum(idx, probs.shape[-1] - 1)
    # rounding can leave the last cdf entry below u; step back to a live slot
    rows = np.arange(len(idx))
    bad = probs[rows, idx] == 0
    while np.any(bad):
        idx[bad] -= 1
        bad = probs[rows, idx] == 0
    return idx


def log_prob(probs, index: int) -> float:
    p = float(np.asarray(probs)[index])
    if p <= 0:
        raise NumericError(f"log_prob of zero-probability index {index}")
    return math.log(p)


# ------------------------------------------------------------- gradient check

def grad_check(fn: Callable[[], Tensor], store: ParamStore, eps: float = 1e-4,
               names: Sequence[str] | None = None, floor: float = 1e-6) -> float:
    """Max relative error between reverse-mode and finite-difference gradients.

    ``fn`` must rebuild its graph from ``store`` on every call and return a
    scalar tensor.  Uses the fourth-order stencil
    ``(-f(+2h) + 8 f(+h) - 8 f(-h) + f(-2h)) / 12h``, whose truncation error is
    negligible next to rounding.  The denominator ``|g_ad| + |g_fd|`` is
    floored at ``floor`` so that ~1e-12 of rounding noise does not dominate
    entries whose true gradient is tiny.
    """
    names = list(names) if names is not None else store.names()
    loss = fn()
    analytic = backward(loss, [store[n] for n in names])
    worst = 0.0
    for n, g_ad in zip(names, analytic):
        p = store[n]
        base = p.value.copy()
        flat = base.reshape(-1)
        for j in range(flat.size):
            f = {}
            for k in (-2, -1, 1, 2):
                bumped = flat.copy()
                bumped[j] += k * eps
                p.value = bumped.reshape(base.shape)
                f[k] = float(fn().value)
            p.value = base
            g_fd = (-f[2] + 8 * f[1] - 8 * f[-1] + f[-2]) / (12 * eps)
            ga = float(g_ad.reshape(-1)[j])
            err = abs(ga - g_fd) / max(floor, abs(ga) + abs(g_fd))
            worst = max(worst, err)
        p.value = base
    return worst
