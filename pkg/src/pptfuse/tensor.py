"""Dense float tensor with tape-based reverse-mode autodiff.

Storage is a row-major numpy array (float32 unless a caller asks for
float64, which the finite-difference oracles use).  Operations only record
onto a :class:`GradTape` when one is active and at least one input requires
a gradient, so plain inference never holds on to activations.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Operand extents are incompatible."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=DEFAULT_DTYPE):
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_not_scalar(shape):
    raise ContractError(f"expected a single-element tensor, got shape {shape}")


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_ACTIVE_TAPES: list["GradTape"] = []


class GradTape:
    """Ordered log of differentiable operations executed while active.

    Use as a context manager around a forward pass, then call
    :meth:`backward` on a scalar result::

        with GradTape() as tape:
            loss = model.loss(x)
        tape.backward(loss)

    Nodes are appended in execution order, so the log is already
    topologically sorted.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _record(out_arr: np.ndarray, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    needs = _ACTIVE_TAPES and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_arr, requires_grad=bool(needs))
    if needs:
        _ACTIVE_TAPES[-1].nodes.append(_Node(out, tuple(inputs), fn))
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Intermediate gradients are discarded; the tape is cleared afterwards.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.out) for n in tape.nodes}
    if id(loss) not in produced:
        raise ContractError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.dtype, copy=False).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# elementwise / broadcasting helpers


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    # Only leading-axis broadcasting: the smaller operand must match the
    # trailing extents of the larger one.
    big, small = (a, b) if a.ndim >= b.ndim else (b, a)
    if small.shape != big.shape[big.ndim - small.ndim:]:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "add")
    return _record(a.data + b.data, (a, b),
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "sub")
    return _record(a.data - b.data, (a, b),
                   lambda g: (_reduce_to(g, a.shape), -_reduce_to(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "mul")
    return _record(a.data * b.data, (a, b),
                   lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * a.dtype.type(c), (a,), lambda g: (g * a.dtype.type(c),))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"maximum: incompatible shapes {a.shape} and {b.shape}")
    pick_a = a.data >= b.data
    return _record(np.maximum(a.data, b.data), (a, b),
                   lambda g: (np.where(pick_a, g, 0), np.where(pick_a, 0, g)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1 - out * out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written via erf."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * xd.dtype.type(_INV_SQRT2)))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def back(g):
        pdf = np.exp(-0.5 * xd * xd) * xd.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + xd * pdf),)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.data.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise ContractError("concat needs at least one tensor")
    ax = axis % xs[0].ndim
    for t in xs[1:]:
        if t.ndim != xs[0].ndim or any(s != r for i, (s, r) in enumerate(zip(t.shape, xs[0].shape)) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {xs[0].shape} and {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in xs])[:-1]
    return _record(np.concatenate([t.data for t in xs], axis=ax), tuple(xs),
                   lambda g: tuple(np.split(g, bounds, axis=ax)))


def repeat(x: Tensor, k: int, axis: int) -> Tensor:
    """Repeat every element ``k`` times along ``axis`` (nearest-neighbour stretch)."""
    ax = axis % x.ndim
    if k == 1:
        return x

    def back(g):
        shp = x.shape[:ax] + (x.shape[ax], k) + x.shape[ax + 1:]
        return (g.reshape(shp).sum(axis=ax + 1),)

    return _record(np.repeat(x.data, k, axis=ax), (x,), back)


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.asarray(out), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = math.prod(x.shape[a] for a in axes)
    out = np.mean(x.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    inv_n = x.dtype.type(1.0 / n)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv_n, x.shape).copy(),)

    return _record(np.asarray(out), (x,), back)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error ``(1/N) * sum((a - b)**2)`` as a scalar tensor."""
    if a.shape != b.shape:
        raise DimensionError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=a.dtype)
    k = a.dtype.type(2.0 / n)
    return _record(out, (a, b), lambda g: (g * k * diff, -g * k * diff))


# ---------------------------------------------------------------------------
# linear algebra and normalisation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return _record(ad @ bd, (a, b), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax: axis {axis} out of range for {x.ndim}-d tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), back)


LN_EPS = 1e-5


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis then apply ``gamma * xhat + beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs last axis {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def back(g):
        gx_hat = g * gamma.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, (x, gamma, beta), back)


ATTN_CHUNK_ELEMS = 1 << 24


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` over the last two axes, batched over the rest.

    Fused so that the (T x T) weight matrices are never kept on the tape: the
    backward pass recomputes them chunk by chunk over the flattened batch
    axis.  Numerically this is the same sequence of primitives as
    ``matmul -> scale -> softmax -> matmul``.
    """
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"attention: incompatible shapes {q.shape}, {k.shape}, {v.shape}")
    *batch, t, d = q.shape
    dv = v.shape[-1]
    nb = math.prod(batch)
    qd, kd, vd = (a.data.reshape(nb, t, -1) for a in (q, k, v))
    dt = q.dtype.type
    sc = dt(1.0 / math.sqrt(d))
    step = max(1, ATTN_CHUNK_ELEMS // (t * t))

    def weights(sl):
        s = qd[sl] @ np.swapaxes(kd[sl], -1, -2)
        s *= sc
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        return s

    out = np.empty((nb, t, dv), dtype=q.dtype)
    for i in range(0, nb, step):
        sl = slice(i, i + step)
        out[sl] = weights(sl) @ vd[sl]

    def back(g):
        g = g.reshape(nb, t, dv)
        gq = np.empty_like(qd)
        gk = np.empty_like(kd)
        gv = np.empty_like(vd)
        for i in range(0, nb, step):
            sl = slice(i, i + step)
            p = weights(sl)
            gv[sl] = np.swapaxes(p, -1, -2) @ g[sl]
            gp = g[sl] @ np.swapaxes(vd[sl], -1, -2)
            gp -= (gp * p).sum(axis=-1, keepdims=True)
            gp *= p
            gp *= sc
            gq[sl] = gp @ kd[sl]
            gk[sl] = np.swapaxes(gp, -1, -2) @ qd[sl]
        return gq.reshape(q.shape), gk.reshape(k.shape), gv.reshape(v.shape)

    return _record(out.reshape(*batch, t, dv), (q, k, v), back)


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """The softmax weight matrices used by :func:`scaled_dot_attention` (inspection only)."""
    sc = q.dtype.type(1.0 / math.sqrt(q.shape[-1]))
    s = (q @ np.swapaxes(k, -1, -2)) * sc
    s -= s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)
