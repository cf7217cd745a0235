"""Double-precision tensors with a define-by-run reverse-mode tape.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the upstream gradient to one gradient per parent.
:func:`backward` walks the recorded graph in reverse topological order. The
graph is rebuilt on every forward pass, so swapping loss functions or padding
modes between runs needs no bookkeeping.
"""

from __future__ import annotations

import builtins
import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

LOG_FLOOR = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A node in the differentiation graph holding a float64 ndarray."""

    __slots__ = ("data", "op", "parents", "requires_grad", "_backward", "_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward_fn: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward_fn
        self._grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def backward(self):
        return backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                raise DomainError("division by zero")
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, op=op, parents=tuple(parents), backward_fn=backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.data, b.data
    return _node(av * bv, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    """Elementwise quotient; the denominator may be a scalar node."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError(f"div: zero in denominator of shape {b.shape}")
    av, bv = a.data, b.data
    out = av / bv

    def back(g):
        return (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape))

    return _node(out, "div", (a, b), back)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return _node(a.data * factor, "scale", (a,), lambda g: (g * factor,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.maximum(a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise DomainError(f"exp overflow (max input {a.data.max():.6g})")
    return _node(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < LOG_FLOOR) or not np.all(np.isfinite(a.data)):
        raise DomainError(f"log: input below {LOG_FLOOR} (min {np.nanmin(a.data):.6g})")
    av = a.data
    return _node(np.log(av), "log", (a,), lambda g: (g / av,))


# ---------------------------------------------------------------------------
# reductions and shape ops

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def back(g):
        return (np.broadcast_to(np.reshape(g, kept), shape).copy(),)

    return _node(a.data.sum(axis=axes, keepdims=keepdims), "sum", (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def back(g):
        return (np.broadcast_to(np.reshape(g, kept) / count, shape).copy(),)

    return _node(a.data.mean(axis=axes, keepdims=keepdims), "mean", (a,), back)


def max(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max reduction. Tied maxima share the gradient equally."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(shape))
    m = a.data.max(axis=axes, keepdims=True)
    mask = (a.data == m).astype(np.float64)
    mask /= mask.sum(axis=axes, keepdims=True)
    out = m if keepdims else m.reshape([n for i, n in enumerate(shape) if i not in axes])

    def back(g):
        return (np.reshape(g, kept_shape) * mask,)

    return _node(out, "max", (a,), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _node(out, "reshape", (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot expand {old} to {tuple(shape)}") from None
    return _node(out, "broadcast", (a,), lambda g: (_unbroadcast(g, old),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: operand shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.data, b.data
    return _node(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


# ---------------------------------------------------------------------------
# convolution core (zero padding, no bias)

def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with OIHW weights, zero padded.

    Internally the im2col matrix is built channel-major, shape
    (C*kh*kw, B*Ho*Wo), and the result is returned as an NCHW view of a
    (O, B, Ho, Wo) buffer. Elementwise ops keep that memory order, so the next
    convolution gets its channel-major input without a copy.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected NCHW input and OIHW weights, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input has {C} channels but weights {w.shape} expect {Cw}")
    Ho, Wo = conv_output_size(H, kh, stride, pad), conv_output_size(W, kw, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} with pad {pad} does not fit input {(H, W)}")
    xc = x.data.transpose(1, 0, 2, 3)
    if pad:
        xp = np.zeros((C, B, H + 2 * pad, W + 2 * pad))
        xp[:, :, pad : pad + H, pad : pad + W] = xc
    else:
        xp = xc
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    cols = np.empty((C, kh, kw, B, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + hs : stride, j : j + ws : stride]
    cols = cols.reshape(C * kh * kw, B * Ho * Wo)
    wmat = w.data.reshape(O, C * kh * kw)
    # one product per sample: a single wide gemm may round edge columns
    # differently, and then identical samples would not give identical outputs
    per_sample = cols.reshape(C * kh * kw, B, Ho * Wo)
    out = np.empty((O, B, Ho * Wo))
    for b in range(B):
        np.matmul(wmat, per_sample[:, b], out=out[:, b])
    out = out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    need_dx = x.requires_grad

    def back(g):
        g_cm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, B * Ho * Wo)
        dw = (g_cm @ cols.T).reshape(w.shape)
        if not need_dx:
            return None, dw
        dcols = (wmat.T @ g_cm).reshape(C, kh, kw, B, Ho, Wo)
        if kh == kw == 1 and stride == 1 and not pad:
            return dcols.reshape(C, B, H, W).transpose(1, 0, 2, 3), dw
        dxp = np.zeros((C, B, H + 2 * pad, W + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + hs : stride, j : j + ws : stride] += dcols[:, i, j]
        return dxp[:, :, pad : pad + H, pad : pad + W].transpose(1, 0, 2, 3), dw

    return _node(out, "conv2d", (x, w), back)


# ---------------------------------------------------------------------------
# composites

def log_softmax(logits, axis: int = -1) -> Tensor:
    """Stable log-softmax: the row max is subtracted as a constant."""
    logits = as_tensor(logits)
    if logits.ndim == 0 or logits.shape[axis] < 1:
        raise ShapeError(f"softmax: empty class axis in shape {logits.shape}")
    shifted = sub(logits, Tensor(logits.data.max(axis=axis, keepdims=True)))
    return sub(shifted, log(sum(exp(shifted), axis=axis, keepdims=True)))


def softmax(logits, axis: int = -1) -> Tensor:
    return exp(log_softmax(logits, axis=axis))


# ---------------------------------------------------------------------------
# reverse pass

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar root.

    Gradients on every node reachable from ``root`` are reset, then accumulated
    additively over fan-out. Returns a mapping node -> gradient array.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topo_order(root)
    for node in order:
        node._grad = None
    root._grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node._grad is None:
            continue
        for parent, g in zip(node.parents, node._backward(node._grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent._grad is None:
                # first contribution: take ownership unless it aliases another buffer
                parent._grad = g if g.base is None and g is not node._grad else g.copy()
            else:
                parent._grad = parent._grad + g
    for node in order:
        if node._grad is None:
            node._grad = np.zeros_like(node.data)
    return {node: node._grad for node in order}


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-4, *,
               coords=None) -> float:
    """Largest relative disagreement between backward() and central differences.

    ``coords`` optionally restricts the comparison to a subset of flat indices.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise DomainError("grad_check: f is not finite at x")
    backward(out)
    analytic = leaf.grad.ravel()

    idx = np.arange(x0.size) if coords is None else np.asarray(coords, dtype=np.int64)
    flat = x0.ravel()
    worst = 0.0
    for i in idx:
        vals = []
        for sign in (1.0, -1.0):
            probe = flat.copy()
            probe[i] += sign * step
            with no_grad():
                v = f(Tensor(probe.reshape(x0.shape))).item()
            if not np.isfinite(v):
                raise DomainError(f"grad_check: f is not finite at coordinate {i} {'+' if sign > 0 else '-'} step")
            vals.append(v)
        numeric = (vals[0] - vals[1]) / (2.0 * step)
        err = abs(analytic[i] - numeric) / np.maximum(1e-8, abs(analytic[i]) + abs(numeric))
        worst = builtins.max(worst, float(err))
    return worst
