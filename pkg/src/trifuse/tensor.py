"""Reverse-mode autodiff on numpy arrays, sized for desk-scale experiments.

The design is a dynamically recorded tape: every differentiable operation
returns a tensor holding references to its parent tensors and a closure that
maps the upstream gradient to parent gradients. ``backward`` walks the
recorded graph once in reverse topological order. There is no compilation,
no fusion, no GPU path; the point is a core small enough to verify against
central finite differences and fast enough for toy models.

Conventions used throughout the package:

* features live on axis 0, tokens on axis 1: a sequence is ``[D, N]``
* arrays are float32 or float64, selected by :func:`set_default_dtype`
* wrapped arrays are treated as immutable; mutating ``.data`` of a tensor
  that sits inside a recorded graph voids the gradient warranty
* every op checks its output for NaN/Inf unless finite checks are disabled
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special as _special

__all__ = [
    "Tensor", "Param", "NonFiniteError", "no_grad", "is_grad_enabled",
    "set_default_dtype", "default_dtype", "set_finite_checks",
    "register_differentiable", "DIFFERENTIABLE_OPS",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "log", "sqrt",
    "power", "tanh", "sigmoid", "softplus", "erf", "relu", "gelu", "silu",
    "tsum", "tmean", "tmax", "tmin", "reshape", "swapaxes", "transpose",
    "concat", "narrow", "where_mask", "softmax", "norm_affine", "dwconv1d",
    "linear_recurrence", "stop_gradient",
]


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf, which the numeric contract forbids."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_FINITE_CHECKS = True

#: Names of every op that claims differentiability. The gradient-check suite
#: enumerates this registry and refuses to pass unless it has a case for each
#: entry, so adding an op here without a check is a loud failure, not a gap.
DIFFERENTIABLE_OPS: set[str] = set()


def register_differentiable(name: str) -> None:
    DIFFERENTIABLE_OPS.add(name)


def _diffop(name: str):
    """Decorator flavor of :func:`register_differentiable` for ops here."""
    def deco(fn):
        register_differentiable(name)
        return fn
    return deco


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class no_grad:
    """Context manager that pauses tape recording (forward-only evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


class Tensor:
    """A dense array plus the bookkeeping reverse mode needs.

    Attributes:
        data: the underlying numpy array (row-major).
        grad: accumulated gradient, same shape as ``data``, or None.
        requires_grad: whether backward should reach this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        _check_finite(self.data, "tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, vjp, op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # ---- introspection ----

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._vjp = None
        return t

    # ---- autodiff ----

    def backward(self, grad=None) -> None:
        """Accumulate dSelf/dLeaf into every reachable tensor's ``.grad``.

        Without an explicit ``grad`` seed, self must be a one-element tensor
        (the usual scalar loss).
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar needs an explicit gradient")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError("gradient seed shape mismatch")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = grad.copy() if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg.copy()
                else:
                    parent.grad += pg

    def zero_grad(self) -> None:
        self.grad = None

    # ---- operator sugar ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Param(Tensor):
    """A leaf tensor with a persistent gradient buffer and a freeze flag.

    Frozen params opt out of the graph entirely: ops treat them as constants,
    backward never touches them, and their gradient stays exactly zero.
    """

    __slots__ = ("frozen",)

    def __init__(self, data, frozen: bool = False, dtype=None):
        super().__init__(data, requires_grad=not frozen, dtype=dtype)
        self.frozen = bool(frozen)
        self.grad = np.zeros_like(self.data)

    def freeze(self) -> "Param":
        self.frozen = True
        self.requires_grad = False
        self.grad = np.zeros_like(self.data)
        return self

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param(shape={self.data.shape}, frozen={self.frozen})"


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _needs(parents: Sequence[Tensor]) -> tuple[bool, ...]:
    return tuple(p.requires_grad for p in parents)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

@_diffop("add")
def add(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    out = a.data + b.data
    na, nb = _needs((a, b))

    def vjp(g):
        return (_unbroadcast(g, a.data.shape) if na else None,
                _unbroadcast(g, b.data.shape) if nb else None)

    return Tensor._from_op(out, (a, b), vjp, "add")


@_diffop("sub")
def sub(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    out = a.data - b.data
    na, nb = _needs((a, b))

    def vjp(g):
        return (_unbroadcast(g, a.data.shape) if na else None,
                _unbroadcast(-g, b.data.shape) if nb else None)

    return Tensor._from_op(out, (a, b), vjp, "sub")


@_diffop("mul")
def mul(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    out = a.data * b.data
    na, nb = _needs((a, b))
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape) if na else None,
                _unbroadcast(g * ad, bd.shape) if nb else None)

    return Tensor._from_op(out, (a, b), vjp, "mul")


@_diffop("div")
def div(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    out = a.data / b.data
    na, nb = _needs((a, b))
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape) if na else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if nb else None
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp, "div")


@_diffop("neg")
def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)
    return Tensor._from_op(-a.data, (a,), vjp, "neg")


@_diffop("matmul")
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy semantics for stacked (batched) operands."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2")
    out = a.data @ b.data
    na, nb = _needs((a, b))
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if na else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if nb else None
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp, "matmul")


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

@_diffop("exp")
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor._from_op(out, (a,), vjp, "exp")


@_diffop("log")
def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return Tensor._from_op(out, (a,), vjp, "log")


@_diffop("sqrt")
def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return Tensor._from_op(out, (a,), vjp, "sqrt")


@_diffop("pow")
def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out = a.data ** p
    ad = a.data

    def vjp(g):
        return (g * p * ad ** (p - 1.0),)

    return Tensor._from_op(out, (a,), vjp, "pow")


@_diffop("tanh")
def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op(out, (a,), vjp, "tanh")


@_diffop("sigmoid")
def sigmoid(a: Tensor) -> Tensor:
    # guarded against overflow for large negative inputs
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (a,), vjp, "sigmoid")


@_diffop("softplus")
def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)
    ad = a.data

    def vjp(g):
        s = np.empty_like(ad)
        pos = ad >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
        e = np.exp(ad[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * s,)

    return Tensor._from_op(out, (a,), vjp, "softplus")


@_diffop("erf")
def erf(a: Tensor) -> Tensor:
    out = _special.erf(a.data)
    ad = a.data
    two_over_sqrt_pi = 2.0 / math.sqrt(math.pi)

    def vjp(g):
        return (g * two_over_sqrt_pi * np.exp(-ad * ad),)

    return Tensor._from_op(out, (a,), vjp, "erf")


@_diffop("relu")
def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return Tensor._from_op(out, (a,), vjp, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


@_diffop("gelu")
def gelu(a: Tensor, exact: bool = False) -> Tensor:
    """GELU activation. Default is the tanh approximation; ``exact=True``
    evaluates the erf form (slower, rarely needed)."""
    if exact:
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        return mul(mul(a, add(erf(mul(a, inv_sqrt2)), 1.0)), 0.5)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return Tensor._from_op(out, (a,), vjp, "gelu")


@_diffop("silu")
def silu(a: Tensor) -> Tensor:
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    s[~pos] = e / (1.0 + e)
    out = x * s

    def vjp(g):
        return (g * (s + x * s * (1.0 - s)),)

    return Tensor._from_op(out, (a,), vjp, "silu")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


@_diffop("sum")
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        return (_expand_reduced(g, shape, axis, keepdims).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), vjp, "sum")


@_diffop("mean")
def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    count = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g):
        return (_expand_reduced(g, shape, axis, keepdims) / count,)

    return Tensor._from_op(np.asarray(out), (a,), vjp, "mean")


def _extreme(a: Tensor, axis: int, keepdims: bool, kind: str) -> Tensor:
    data = a.data
    if kind == "max":
        out = data.max(axis=axis, keepdims=keepdims)
        idx = np.argmax(data, axis=axis)
    else:
        out = data.min(axis=axis, keepdims=keepdims)
        idx = np.argmin(data, axis=axis)
    shape = data.shape

    def vjp(g):
        # route the gradient to the first extremal element along the axis
        gx = np.zeros(shape, dtype=g.dtype)
        gsel = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gsel, axis=axis)
        return (gx,)

    return Tensor._from_op(np.asarray(out), (a,), vjp, kind)


@_diffop("max")
def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, "max")


@_diffop("min")
def tmin(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, "min")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

@_diffop("reshape")
def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    src = a.data.shape

    def vjp(g):
        return (g.reshape(src),)

    return Tensor._from_op(out, (a,), vjp, "reshape")


@_diffop("swapaxes")
def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2))

    def vjp(g):
        return (np.swapaxes(g, ax1, ax2),)

    return Tensor._from_op(out, (a,), vjp, "swapaxes")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose() is 2-D sugar; use swapaxes for higher ranks")
    return swapaxes(a, 0, 1)


@_diffop("concat")
def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return Tensor._from_op(out, tuple(tensors), vjp, "concat")


@_diffop("narrow")
def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(a.data[sl])
    shape = a.data.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[sl] = g
        return (gx,)

    return Tensor._from_op(out, (a,), vjp, "narrow")


@_diffop("where")
def where_mask(mask: np.ndarray, a: Tensor, b) -> Tensor:
    """Select ``a`` where the (constant, boolean) mask holds, else ``b``."""
    b = _coerce(b, a)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)
    na, nb = _needs((a, b))
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g):
        ga = _unbroadcast(np.where(mask, g, 0.0), ash) if na else None
        gb = _unbroadcast(np.where(mask, 0.0, g), bsh) if nb else None
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp, "where")


def stop_gradient(a: Tensor) -> Tensor:
    return a.detach()


# ---------------------------------------------------------------------------
# normalization and attention building blocks
# ---------------------------------------------------------------------------

@_diffop("softmax")
def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (a,), vjp, "softmax")


@_diffop("norm_affine")
def norm_affine(x: Tensor, gain: Tensor, shift: Tensor, eps: float, axis: int) -> Tensor:
    """Normalize ``x`` to zero mean and unit variance along ``axis``, then
    apply a per-feature affine (gain and shift indexed by axis 0).

    ``axis=0`` is layer norm over the feature axis (per token/column);
    ``axis=1`` is batch norm over the token axis (per channel/row).
    """
    if x.data.ndim != 2:
        raise ValueError("norm_affine expects a 2-D [D, N] tensor")
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gcol = gain.data[:, None]
    out = gcol * xhat + shift.data[:, None]
    m = x.data.shape[axis]
    nx, ng, ns = _needs((x, gain, shift))

    def vjp(g):
        gx = None
        if nx:
            dxhat = g * gcol
            gx = inv * (dxhat - dxhat.mean(axis=axis, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
        gg = (g * xhat).sum(axis=1) if ng else None
        gs = g.sum(axis=1) if ns else None
        return gx, gg, gs

    return Tensor._from_op(out, (x, gain, shift), vjp, "norm_affine")


@_diffop("dwconv1d")
def dwconv1d(x: Tensor, kernels: Tensor, causal: bool = False) -> Tensor:
    """Depthwise 1-D convolution along the token axis, one kernel per channel.

    Same-padding by default (output length N); ``causal=True`` pads only on
    the left so position n sees positions <= n.
    """
    D, N = x.data.shape
    Dk, k = kernels.data.shape
    if Dk != D:
        raise ValueError("kernel channel count must match input channels")
    if k % 2 == 0:
        raise ValueError("dwconv1d requires an odd kernel size")
    left = k - 1 if causal else k // 2
    right = 0 if causal else k // 2
    xp = np.pad(x.data, ((0, 0), (left, right)))
    out = np.zeros_like(x.data)
    for j in range(k):
        out += kernels.data[:, j:j + 1] * xp[:, j:j + N]
    nx, nk = _needs((x, kernels))
    kd = kernels.data

    def vjp(g):
        gx = None
        if nx:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + N] += kd[:, j:j + 1] * g
            gx = gxp[:, left:left + N].copy() if (left or right) else gxp
        gk = None
        if nk:
            gk = np.empty_like(kd)
            for j in range(k):
                gk[:, j] = (xp[:, j:j + N] * g).sum(axis=1)
        return gx, gk

    return Tensor._from_op(out, (x, kernels), vjp, "dwconv1d")


# ---------------------------------------------------------------------------
# linear recurrence scan
# ---------------------------------------------------------------------------

def _assoc_scan(a: np.ndarray, b: np.ndarray, chunk: int) -> np.ndarray:
    """Evaluate h_k = a_k * h_{k-1} + b_k (h_0 = 0) along the last axis.

    Blocked algorithm: a Hillis-Steele doubling pass composes the affine maps
    within each fixed-size chunk (the pair (a, b) composes associatively),
    and a scalar carry links chunks sequentially. Work per chunk is
    O(chunk * log chunk) vectorized elementwise ops, so total work is linear
    in K with a constant chosen by ``chunk``.
    """
    K = a.shape[-1]
    h = np.empty_like(b)
    carry = np.zeros(a.shape[:-1], dtype=a.dtype)
    for start in range(0, K, chunk):
        end = min(start + chunk, K)
        # plain copies: the doubling pass below writes into these buffers,
        # and a no-copy view of the caller's array must never be mutated
        ac = a[..., start:end].copy()
        bc = b[..., start:end].copy()
        n = end - start
        s = 1
        while s < n:
            prod = ac[..., s:] * ac[..., :-s]
            comb = ac[..., s:] * bc[..., :-s] + bc[..., s:]
            ac[..., s:] = prod
            bc[..., s:] = comb
            s *= 2
        # bc now holds the zero-initial-state prefix, ac the cumulative decay
        hc = bc + ac * carry[..., None]
        h[..., start:end] = hc
        carry = hc[..., -1].copy()
    return h


@_diffop("linear_recurrence")
def linear_recurrence(a: Tensor, b: Tensor, chunk: int = 128) -> Tensor:
    """Differentiable first-order linear recurrence along the last axis.

    Returns the full state sequence h with h_k = a_k * h_{k-1} + b_k and
    zero initial state. The backward pass is the same recurrence run in
    reverse time on the incoming gradient, so it reuses the blocked scan.
    """
    if a.data.shape != b.data.shape:
        raise ValueError("linear_recurrence operands must share a shape")
    h = _assoc_scan(a.data, b.data, chunk)
    na, nb = _needs((a, b))
    ad = a.data

    def vjp(g):
        # adjoint recurrence: ghat_k = g_k + a_{k+1} * ghat_{k+1}
        ones = np.ones_like(ad[..., :1])
        ar = np.concatenate([ones, ad[..., :0:-1]], axis=-1)
        gr = np.ascontiguousarray(g[..., ::-1])
        ghat = _assoc_scan(ar, gr, chunk)[..., ::-1]
        gb = ghat if nb else None
        ga = None
        if na:
            h_prev = np.concatenate([np.zeros_like(h[..., :1]), h[..., :-1]], axis=-1)
            ga = ghat * h_prev
        return ga, gb

    return Tensor._from_op(h, (a, b), vjp, "linear_recurrence")
