"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every differentiable op attaches a backward
closure to its output and records its parents. Node ids are a global
insertion counter, so sorting reachable nodes by id gives a topological
order for free; ``backward`` walks it in reverse exactly once.

The op set is deliberately fixed (no general broadcasting). The only
implicit broadcasts are the two everything here actually needs: a
size-1 operand in ``add``/``mul``, and the explicit row-vector bias in
``add_bias``. Anything else is spelled out with reshape/transpose.
"""

from __future__ import annotations

import itertools
import warnings

import numpy as np

from .errors import ShapeMismatchError

_node_counter = itertools.count()


class Tensor:
    """A dense float64 array plus an optional gradient slot.

    ``grad`` is populated by ``backward`` and accumulates additively
    across uses. Leaf tensors created with ``requires_grad=True`` are
    parameters; interior nodes carry a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents",
                 "_backward", "_backward_done")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_counter)
        self._parents = _parents
        self._backward = _backward
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the real ops are module functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _make(data, parents, backward_fn):
    """Build an op output; drops the tape entry when no parent needs grads."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents),
                      _backward=backward_fn)
    return Tensor(data)


def add(a, b):
    """Elementwise sum. Shapes must match, or one operand is size-1."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} differ")
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, g if a.shape == out_data.shape else np.sum(g).reshape(a.shape))
        _accumulate(b, g if b.shape == out_data.shape else np.sum(g).reshape(b.shape))

    return _make(out_data, (a, b), backward)


def neg(a):
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def sub(a, b):
    return add(a, neg(_as_tensor(b)))


def mul(a, b):
    """Elementwise product; same shape or one size-1 operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} differ")
    out_data = a.data * b.data

    def backward(g):
        ga = g * b.data
        gb = g * a.data
        _accumulate(a, ga if a.shape == out_data.shape else np.sum(ga).reshape(a.shape))
        _accumulate(b, gb if b.shape == out_data.shape else np.sum(gb).reshape(b.shape))

    return _make(out_data, (a, b), backward)


def matmul(a, b):
    """2D matrix product (m,k)@(k,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def add_bias(x, b):
    """Row-broadcast add: (n,c) + (c,)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeMismatchError(f"add_bias: shapes {x.shape} and {b.shape}")
    out_data = x.data + b.data

    def backward(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=0))

    return _make(out_data, (x, b), backward)


def relu(a):
    a = _as_tensor(a)
    gate = a.data > 0.0  # derivative 0 at exactly 0

    def backward(g):
        _accumulate(a, g * gate)

    return _make(np.maximum(a.data, 0.0), (a,), backward)


def softmax(a, axis=-1):
    """Exp-normalize along ``axis`` with max subtraction for stability."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        _accumulate(a, (g - dot) * y)

    return _make(y, (a,), backward)


_LN_EPS = 1e-5


def layer_norm(x, gamma, beta):
    """Per-row normalization of (n,c) to mean 0 / var 1, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 2:
        raise ShapeMismatchError(f"layer_norm: expected 2D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(
            f"layer_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv_std
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        # standard layernorm backward, fused form
        dx = inv_std / c * (c * dxhat
                            - dxhat.sum(axis=1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
        _accumulate(x, dx)
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))

    return _make(out_data, (x, gamma, beta), backward)


def cross_entropy(logits, labels, ignore_index=-1):
    """Mean of -log softmax(logits)[label] over non-ignored positions.

    ``labels`` is an int array of shape (p,); positions equal to
    ``ignore_index`` contribute nothing. An all-ignored batch yields 0
    with a warning.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(
            f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    valid = labels != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("cross_entropy: every position ignored, loss defined as 0")
        return _make(np.float64(0.0), (logits,), lambda g: _accumulate(
            logits, np.zeros_like(logits.data)))

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    rows = np.nonzero(valid)[0]
    picked = log_probs[rows, labels[rows]]
    loss = -picked.sum() / n_valid

    def backward(g):
        grad = np.exp(log_probs)  # softmax
        grad[rows, labels[rows]] -= 1.0
        grad[~valid] = 0.0
        _accumulate(logits, grad * (g / n_valid))

    return _make(np.float64(loss), (logits,), backward)


def reshape(a, shape):
    a = _as_tensor(a)
    old_shape = a.shape

    def backward(g):
        _accumulate(a, g.reshape(old_shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None):
    a = _as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), backward)


def getitem(a, idx):
    """Basic slicing; gradient scatters back into the sliced region."""
    a = _as_tensor(a)
    out_data = a.data[idx]
    in_shape = a.shape

    def backward(g):
        full = np.zeros(in_shape)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(out_data.copy(), (a,), backward)


def gather_rows(a, row_index):
    """out[i] = a[row_index[i]]; used for nearest-neighbor token upsampling."""
    a = _as_tensor(a)
    row_index = np.asarray(row_index, dtype=np.intp)
    in_shape = a.shape

    def backward(g):
        full = np.zeros(in_shape)
        np.add.at(full, row_index, g)
        _accumulate(a, full)

    return _make(a.data[row_index], (a,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def tsum(a, axis=None):
    a = _as_tensor(a)
    in_shape = a.shape

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, in_shape).astype(np.float64))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), in_shape).copy())

    return _make(a.data.sum(axis=axis), (a,), backward)


def tmean(a, axis=None):
    a = _as_tensor(a)
    in_shape = a.shape
    n = a.size if axis is None else in_shape[axis]

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / n, in_shape).astype(np.float64))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis) / n, in_shape).copy())

    return _make(a.data.mean(axis=axis), (a,), backward)


def backward(loss):
    """Populate ``grad`` on every requires-grad tensor feeding ``loss``.

    Gradients accumulate additively across paths. Calling this twice on
    the same loss without rebuilding the graph is an error.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ShapeMismatchError(f"backward: loss must be scalar, got {loss.shape}")
    if loss._backward_done:
        raise RuntimeError("backward already ran on this graph; rebuild it first")
    loss._backward_done = True

    # collect reachable grad-requiring nodes; insertion id = topological order
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t.node_id, reverse=True)

    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
