"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations in execution order (which is a
topological order by construction); :func:`backward` sweeps the record once
in reverse and returns a gradient for every tensor that requires one. Tapes
are cheap and meant to be rebuilt per optimization step.

Every primitive validates its output for NaN/Inf and aborts the step with a
:class:`NumericError` naming the primitive — silent NaN propagation is the
dominant failure mode in flow training, so it is refused at the source.

A tape and its tensors belong to one worker; independent tapes may run
concurrently without shared state.
"""

from __future__ import annotations

import numpy as np

from . import _kernels


class DimensionError(ValueError):
    """Operand shapes incompatible with the requested primitive."""


class NumericError(ArithmeticError):
    """A primitive produced NaN/Inf, or non-finite data entered the graph."""


class ContractError(RuntimeError):
    """An operation was used outside its contract (e.g. non-scalar loss)."""


def _check_finite(kind, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by primitive '{kind}'")


def _unbroadcast(grad, shape):
    """Sum-reduce ``grad`` over axes broadcast relative to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array registered on a tape."""

    __slots__ = ("data", "requires_grad", "tape")

    def __init__(self, tape, data, requires_grad=False):
        self.tape = tape
        self.data = data
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar over the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, _as_tensor(self.tape, other))

    def __rsub__(self, other):
        return subtract(_as_tensor(self.tape, other), self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(self, other)

    def __neg__(self):
        return multiply(self, _as_tensor(self.tape, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, shape):
        return reshape(self, shape)


class _Record:
    __slots__ = ("kind", "out", "backward")

    def __init__(self, kind, out, backward):
        self.kind = kind
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of primitives; one reverse sweep yields all gradients."""

    def __init__(self):
        self._ops = []

    def tensor(self, data, requires_grad=False):
        """Admit a leaf array into the graph (copied to float64)."""
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("non-finite values admitted into the graph")
        return Tensor(self, arr, requires_grad)

    def constant(self, data):
        return self.tensor(data, requires_grad=False)

    def _record(self, kind, inputs, out_data, backward_fn):
        _check_finite(kind, out_data)
        needs = any(t.requires_grad for t in inputs)
        out = Tensor(self, out_data, needs)
        if needs:
            self._ops.append(_Record(kind, out, backward_fn))
        return out

    def backward(self, loss):
        """Gradients of scalar ``loss`` for every gradient-requiring tensor."""
        if loss.tape is not self:
            raise ContractError("loss tensor belongs to a different tape")
        if loss.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.shape}"
            )
        if not self._ops:
            raise ContractError("backward on an empty tape")
        accum = {id(loss): np.ones_like(loss.data)}
        grad_map = {}
        if loss.requires_grad:
            grad_map[loss] = accum[id(loss)]

        def sink(tensor, grad):
            if not tensor.requires_grad:
                return
            key = id(tensor)
            if key in accum:
                accum[key] = accum[key] + grad
            else:
                accum[key] = np.array(grad, dtype=np.float64)
            grad_map[tensor] = accum[key]

        for record in reversed(self._ops):
            g = accum.get(id(record.out))
            if g is None:
                continue
            record.backward(g, sink)
        return grad_map


def backward(loss):
    """Module-level alias for ``loss.tape.backward(loss)``."""
    return loss.tape.backward(loss)


def _as_tensor(tape, value):
    if isinstance(value, Tensor):
        if value.tape is not tape:
            raise ContractError("operands recorded on different tapes")
        return value
    return tape.constant(value)


def _pair(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    return a, _as_tensor(a.tape, b)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)

    def bw(g, sink):
        sink(a, _unbroadcast(g, a.shape))
        sink(b, _unbroadcast(g, b.shape))

    return a.tape._record("add", (a, b), a.data + b.data, bw)


def subtract(a, b):
    tape = a.tape if isinstance(a, Tensor) else b.tape
    a = _as_tensor(tape, a)
    b = _as_tensor(tape, b)

    def bw(g, sink):
        sink(a, _unbroadcast(g, a.shape))
        sink(b, _unbroadcast(-g, b.shape))

    return a.tape._record("subtract", (a, b), a.data - b.data, bw)


def multiply(a, b):
    a, b = _pair(a, b)

    def bw(g, sink):
        sink(a, _unbroadcast(g * b.data, a.shape))
        sink(b, _unbroadcast(g * a.data, b.shape))

    return a.tape._record("multiply", (a, b), a.data * b.data, bw)


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g, sink):
        sink(a, g @ b.data.T)
        sink(b, a.data.T @ g)

    return a.tape._record("matmul", (a, b), a.data @ b.data, bw)


def tanh(x):
    out_data = np.tanh(x.data)

    def bw(g, sink):
        sink(x, g * (1.0 - out_data * out_data))

    return x.tape._record("tanh", (x,), out_data, bw)


def exp(x):
    out_data = np.exp(x.data)

    def bw(g, sink):
        sink(x, g * out_data)

    return x.tape._record("exp", (x,), out_data, bw)


def log(x):
    out_data = np.log(x.data)

    def bw(g, sink):
        sink(x, g / x.data)

    return x.tape._record("log", (x,), out_data, bw)


def reciprocal(x):
    out_data = 1.0 / x.data

    def bw(g, sink):
        sink(x, -g * out_data * out_data)

    return x.tape._record("reciprocal", (x,), out_data, bw)


def square(x):
    def bw(g, sink):
        sink(x, g * (2.0 * x.data))

    return x.tape._record("square", (x,), x.data * x.data, bw)


def absolute(x):
    # Subgradient 0 at 0.
    sign = np.sign(x.data)

    def bw(g, sink):
        sink(x, g * sign)

    return x.tape._record("abs", (x,), np.abs(x.data), bw)


def _reduce(kind, x, axis, out_data, scale):
    shape = x.shape

    def bw(g, sink):
        if axis is None:
            sink(x, np.broadcast_to(g, shape) * scale)
        else:
            sink(x, np.broadcast_to(np.expand_dims(g, axis), shape) * scale)

    return x.tape._record(kind, (x,), out_data, bw)


def tensor_sum(x, axis=None):
    return _reduce("sum", x, axis, x.data.sum(axis=axis), 1.0)


def mean(x, axis=None):
    n = x.size if axis is None else x.shape[axis]
    return _reduce("mean", x, axis, x.data.mean(axis=axis), 1.0 / n)


def conv2d_valid(x, k):
    """True 2-D convolution (kernel flipped), valid extent."""
    k = _as_tensor(x.tape, k)
    if x.ndim != 2 or k.ndim != 2:
        raise DimensionError(
            f"conv2d-valid expects 2-D operands, got {x.shape} and {k.shape}"
        )
    if x.shape[0] < k.shape[0] or x.shape[1] < k.shape[1]:
        raise DimensionError(
            f"conv2d-valid kernel {k.shape} larger than input {x.shape}"
        )
    out_data = _kernels.conv2d_valid(x.data, k.data)

    def bw(g, sink):
        sink(x, _kernels.conv2d_valid_grad_input(g, k.data, *x.shape))
        sink(k, _kernels.conv2d_valid_grad_kernel(x.data, g, *k.shape))

    return x.tape._record("conv2d-valid", (x, k), out_data, bw)


def downsample_stride(x, stride):
    if x.ndim != 2:
        raise DimensionError(f"downsample-stride expects 2-D input, got {x.shape}")
    if stride < 1:
        raise DimensionError(f"downsample-stride needs stride >= 1, got {stride}")
    shape = x.shape

    def bw(g, sink):
        gx = np.zeros(shape)
        gx[::stride, ::stride] = g
        sink(x, gx)

    return x.tape._record(
        "downsample-stride", (x,), x.data[::stride, ::stride].copy(), bw
    )


def _getitem(x, index):
    if not isinstance(index, tuple):
        index = (index,)
    if len(index) > x.ndim:
        raise DimensionError(f"slice of {len(index)} axes on shape {x.shape}")
    drop = []
    slices = []
    for axis, part in enumerate(index):
        if isinstance(part, int):
            if part < 0:
                part += x.shape[axis]
            if not 0 <= part < x.shape[axis]:
                raise DimensionError(
                    f"slice index {part} out of range for shape {x.shape}"
                )
            slices.append(slice(part, part + 1))
            drop.append(axis)
        elif isinstance(part, slice):
            if part.step not in (None, 1):
                raise DimensionError("slice supports unit steps only")
            slices.append(part)
        else:
            raise DimensionError(f"unsupported slice component {part!r}")
    out = slice_block(x, tuple(slices))
    if drop:
        kept = [n for axis, n in enumerate(out.shape) if axis not in drop]
        out = reshape(out, tuple(kept))
    return out


def slice_block(x, slices):
    """Rectangular unit-step slice; gradients scatter back into place."""
    key = tuple(slices) + (slice(None),) * (x.ndim - len(slices))
    shape = x.shape

    def bw(g, sink):
        gx = np.zeros(shape)
        gx[key] = g
        sink(x, gx)

    return x.tape._record("slice", (x,), x.data[key].copy(), bw)


def concat(parts, axis=0):
    parts = list(parts)
    if not parts:
        raise DimensionError("concat of zero tensors")
    tape = parts[0].tape
    parts = [_as_tensor(tape, p) for p in parts]
    axis = axis % parts[0].ndim
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, sink):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            key = (slice(None),) * axis + (slice(lo, hi),)
            sink(p, g[key])

    out_data = np.concatenate([p.data for p in parts], axis=axis)
    return tape._record("concat", tuple(parts), out_data, bw)


def permute_fixed(x, perm, axis=-1):
    """Reorder entries along ``axis`` by a fixed index permutation."""
    perm = np.asarray(perm, dtype=np.intp)
    if perm.ndim != 1 or perm.shape[0] != x.shape[axis]:
        raise DimensionError(
            f"permute-fixed of length {perm.shape} on axis {axis} of {x.shape}"
        )
    inv = np.argsort(perm)

    def bw(g, sink):
        sink(x, np.take(g, inv, axis=axis))

    return x.tape._record(
        "permute-fixed", (x,), np.take(x.data, perm, axis=axis), bw
    )


def scale_shift(x, scale, shift):
    """Elementwise ``x * scale + shift`` with numpy broadcasting."""
    scale = _as_tensor(x.tape, scale)
    shift = _as_tensor(x.tape, shift)
    out_data = x.data * scale.data + shift.data

    def bw(g, sink):
        sink(x, _unbroadcast(g * scale.data, x.shape))
        sink(scale, _unbroadcast(g * x.data, scale.shape))
        sink(shift, _unbroadcast(g, shift.shape))

    return x.tape._record("scale-shift", (x, scale, shift), out_data, bw)


def reshape(x, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape

    def bw(g, sink):
        sink(x, g.reshape(old))

    return x.tape._record("reshape", (x,), x.data.reshape(shape).copy(), bw)


def neg(x):
    return multiply(x, _as_tensor(x.tape, -1.0))


# Dispatch table for the generic entry point; keys are the primitive kinds.
PRIMITIVES = {
    "add": add,
    "subtract": subtract,
    "multiply-elementwise": multiply,
    "matmul": matmul,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "reciprocal": reciprocal,
    "sum": tensor_sum,
    "mean": mean,
    "square": square,
    "abs": absolute,
    "conv2d-valid": conv2d_valid,
    "downsample-stride": downsample_stride,
    "slice": slice_block,
    "concat": concat,
    "permute-fixed": permute_fixed,
    "scale-shift": scale_shift,
    "reshape": reshape,
}


def record_op(kind, inputs, **params):
    """Apply the primitive named ``kind`` to ``inputs``, recording it."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive kind '{kind}'") from None
    if kind == "concat":
        return fn(inputs, **params)
    return fn(*inputs, **params)
