"""Reverse-mode automatic differentiation on numpy arrays.

A global tape records one closure per differentiable operation as the forward
pass runs.  ``Tensor.backward`` walks the tape once in reverse, accumulating
gradients into ``.grad`` buffers, then clears it.  The design is deliberately
minimal: float32/float64 only, no views, no second-order gradients, and a
single active computation stream per process.

Structured ops (convolution, pooling, resizing, normalization) live in
:mod:`uwsod.ops`; they plug into the same tape through :func:`record_op` and
:func:`accumulate_grad`.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from .errors import NumericError, ValidationError

_DEFAULT_DTYPE = np.float32

# The tape.  ``None`` disables recording entirely (inference mode).
_TAPE: list["_Node"] | None = []


class _Node:
    __slots__ = ("out", "backward_fn")

    def __init__(self, out: "Tensor", backward_fn):
        self.out = out
        self.backward_fn = backward_fn


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype given to newly created tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValidationError(f"unsupported dtype {dtype}; use float32 or float64")
    saved = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dtype.type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = saved


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _TAPE
    saved = _TAPE
    _TAPE = None
    try:
        yield
    finally:
        _TAPE = saved


def is_recording() -> bool:
    return _TAPE is not None


def tape_length() -> int:
    return 0 if _TAPE is None else len(_TAPE)


def clear_tape() -> None:
    if _TAPE is not None:
        _TAPE.clear()


def record_op(out: "Tensor", backward_fn) -> None:
    """Append a backward closure for ``out`` to the tape.

    ``backward_fn`` receives the upstream gradient (an ndarray shaped like
    ``out``) and must push gradients to the op's inputs via
    :func:`accumulate_grad`.  No-op when recording is off or ``out`` does not
    require grad.
    """
    if _TAPE is not None and out.requires_grad:
        _TAPE.append(_Node(out, backward_fn))


def accumulate_grad(t: "Tensor", grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if grad.shape != t.data.shape:
        raise ValidationError(
            f"gradient shape {grad.shape} does not match tensor shape {t.data.shape}"
        )
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def assert_all_finite(arr, what: str) -> None:
    """Raise NumericError if ``arr`` contains NaN or infinity."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values detected in {what}")


_FINITE_CHECKS = False


@contextmanager
def finite_checks(enabled: bool = True):
    """Make structured ops validate their outputs for NaN/Inf (slow; debug aid)."""
    global _FINITE_CHECKS
    saved = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = saved


def maybe_check_finite(arr, what: str) -> None:
    if _FINITE_CHECKS:
        assert_all_finite(arr, what)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus a gradient buffer.

    ``data`` is always a float32 or float64 ndarray.  ``grad`` stays ``None``
    until backward reaches this tensor, then holds an array of the same shape
    and dtype.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise ValidationError("wrapping a Tensor in a Tensor is not supported")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying array (not a copy); do not mutate during training."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward ------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Run reverse-mode accumulation from this tensor, then clear the tape.

        Without an explicit seed the tensor must be scalar-sized.
        """
        if _TAPE is None:
            raise ValidationError("backward() called while recording is disabled")
        if not self.requires_grad:
            raise ValidationError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValidationError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValidationError("seed gradient shape mismatch")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad
        tape = _TAPE
        for node in reversed(tape):
            if node.out.grad is not None:
                node.backward_fn(node.out.grad)
        tape.clear()

    # -- elementwise arithmetic ---------------------------------------------

    def _binary(self, other, fwd, bwd_self, bwd_other):
        if isinstance(other, Tensor):
            out = Tensor(fwd(self.data, other.data),
                         requires_grad=self.requires_grad or other.requires_grad)

            def backward(g):
                if self.requires_grad:
                    accumulate_grad(self, _unbroadcast(bwd_self(g, self.data, other.data),
                                                       self.data.shape))
                if other.requires_grad:
                    accumulate_grad(other, _unbroadcast(bwd_other(g, self.data, other.data),
                                                        other.data.shape))

            record_op(out, backward)
            return out
        scalar = float(other)
        out = Tensor(fwd(self.data, scalar), requires_grad=self.requires_grad)

        def backward_scalar(g):
            accumulate_grad(self, _unbroadcast(bwd_self(g, self.data, scalar),
                                               self.data.shape))

        record_op(out, backward_scalar)
        return out

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b,
                            lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b,
                            lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a,
                            lambda g, a, b: -g, lambda g, a, b: g)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b,
                            lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda a, b: a / b,
                            lambda g, a, b: g / b,
                            lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, other):
        return self._binary(other, lambda a, b: b / a,
                            lambda g, a, b: -g * b / (a * a),
                            lambda g, a, b: g / a)

    def __neg__(self):
        out = Tensor(-self.data, requires_grad=self.requires_grad)
        record_op(out, lambda g: accumulate_grad(self, -g))
        return out

    def __pow__(self, p):
        p = float(p)
        out = Tensor(self.data ** p, requires_grad=self.requires_grad)

        def backward(g):
            accumulate_grad(self, g * p * self.data ** (p - 1.0))

        record_op(out, backward)
        return out

    # -- elementwise functions ----------------------------------------------

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0), requires_grad=self.requires_grad)

        def backward(g):
            accumulate_grad(self, g * (self.data > 0))

        record_op(out, backward)
        return out

    def sigmoid(self) -> "Tensor":
        s = expit(self.data)
        out = Tensor(s, requires_grad=self.requires_grad)

        def backward(g):
            accumulate_grad(self, g * s * (1.0 - s))

        record_op(out, backward)
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = Tensor(e, requires_grad=self.requires_grad)

        def backward(g):
            accumulate_grad(self, g * e)

        record_op(out, backward)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), requires_grad=self.requires_grad)

        def backward(g):
            accumulate_grad(self, g / self.data)

        record_op(out, backward)
        return out

    def abs(self) -> "Tensor":
        out = Tensor(np.abs(self.data), requires_grad=self.requires_grad)

        def backward(g):
            accumulate_grad(self, g * np.sign(self.data))

        record_op(out, backward)
        return out

    # -- reductions and shape ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     requires_grad=self.requires_grad)
        src_shape = self.data.shape

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            # broadcast view is fine: accumulate_grad only ever adds it in place
            accumulate_grad(self, np.broadcast_to(gg, src_shape))

        record_op(out, backward)
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else int(np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), requires_grad=self.requires_grad)
        src_shape = self.data.shape

        def backward(g):
            accumulate_grad(self, g.reshape(src_shape))

        record_op(out, backward)
        return out
