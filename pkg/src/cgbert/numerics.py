"""Dense tensors with reverse-mode differentiation, plus Adam and a gradient checker.

Every op records its parents and a closure mapping the output gradient to
parent gradients.  ``backward`` replays the recorded graph once in reverse
topological order.  Data lives in numpy arrays of the active precision
(float32 by default, float64 for gradient checking).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import erf

# Additive sentinel standing in for -inf in attention masks.
NEG_INF = -1e9

_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


def get_dtype() -> np.dtype:
    return _DTYPE


def set_precision(dtype) -> None:
    """Select float32 or float64 for every tensor created afterwards."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dt}; use float32 or float64")
    _DTYPE = dt


@contextlib.contextmanager
def precision(dtype):
    previous = _DTYPE
    set_precision(dtype)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        if isinstance(data, np.ndarray) and data.dtype == _DTYPE:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{label})"

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return mul(self, 1.0 / other) if np.isscalar(other) else div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=True, name=name)


def _make(data, parents, backward_fn):
    """Wrap an op result, recording it only if some parent needs a gradient."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, 0.5 x (1 + erf(x / sqrt 2))."""
    cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))
    out = x.data * cdf

    def backward_fn(g):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x.data * pdf),)

    return _make(out.astype(x.data.dtype, copy=False), (x,), backward_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions / shape


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward_fn)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def getitem(x: Tensor, index) -> Tensor:
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), backward_fn)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward_fn)


def broadcast_to(x: Tensor, shape) -> Tensor:
    return _make(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, x.shape),))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"id out of range for table with {table.shape[0]} rows")

    def backward_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(table.data[ids], (table,), backward_fn)


# ---------------------------------------------------------------- fused ops


def additive_mask(allow: np.ndarray) -> np.ndarray:
    """Boolean allow-matrix to the 0 / NEG_INF additive form."""
    return np.where(allow, 0.0, NEG_INF).astype(_DTYPE)


def masked_softmax(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax of ``scores + mask`` over the last axis.

    ``mask`` holds 0 (allow) or NEG_INF (prevent) and broadcasts against
    ``scores``.  Masked entries come out as exact zeros.
    """
    z = scores.data
    if mask is not None:
        mask = np.asarray(mask)
        if np.any(np.all(mask <= NEG_INF / 2, axis=-1)):
            raise ValueError("fully masked row")
        z = z + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (scores,), backward_fn)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward_fn(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise over the last axis with population variance, then scale and shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward_fn(g):
        d = x.shape[-1]
        gxhat = g * gain.data
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True) - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), backward_fn)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Weighted sum of negative log-likelihoods, rows of ``logits`` [N, V] vs ``targets`` [N].

    Rows with weight zero contribute neither value nor gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n = targets.shape[0]
    w = np.ones(n, dtype=_DTYPE) if weights is None else np.asarray(weights, dtype=_DTYPE)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -logp[np.arange(n), targets]
    out = np.asarray((w * nll).sum(), dtype=logits.data.dtype)

    def backward_fn(g):
        grad = np.exp(logp)
        grad[np.arange(n), targets] -= 1.0
        return (grad * (w * g)[:, None],)

    return _make(out, (logits,), backward_fn)


# ---------------------------------------------------------------- graph replay


def _topological_order(root: Tensor) -> list[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None):
    """Populate ``.grad`` on every tensor reachable from the scalar ``loss``.

    With ``params`` given, also return ``{name: grad}`` where unreachable
    parameters receive zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()
    }


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------- optimisation


class Adam:
    """Bias-corrected Adam over a named parameter dict; updates in place."""

    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        for k, g in grads.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if g.shape != self.params[k].shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {k!r} {self.params[k].shape}")
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            self.params[k].data -= update.astype(self.params[k].data.dtype, copy=False)


# ---------------------------------------------------------------- verification


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    n_coords: int | None = 100,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between backward() and central differences.

    ``f`` recomputes the scalar loss from the current parameter values.
    ``n_coords`` random coordinates are probed (all of them when None).
    Relative error uses ``max(|a|, |n|, floor * max(1, |f|))`` as the
    denominator: central-difference roundoff grows with ``|f|``, so gradients
    that vanish analytically are compared on that absolute scale.
    """
    if _DTYPE != np.float64:
        raise RuntimeError("grad_check requires float64 precision")
    rng = np.random.default_rng(0) if rng is None else rng
    zero_grad(params)
    loss = f()
    analytic = backward(loss, params)
    floor = floor * max(1.0, abs(float(loss.data)))

    coords = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    if n_coords is not None and n_coords < len(coords):
        picks = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    worst = 0.0
    with no_grad():
        for name, i in coords:
            flat = params[name].data.reshape(-1)
            saved = flat[i]
            flat[i] = saved + h
            up = float(f().data)
            flat[i] = saved - h
            down = float(f().data)
            flat[i] = saved
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[i]), numeric, floor))
    return worst
