"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape-based engine: values are wrapped in :class:`Tensor`, operations
executed while a :class:`GradTape` is active record enough state to run the
backward pass.  Non-Tensor operands (plain arrays, ints, floats) are treated
as constants and receive no gradient, so index matrices and masks stay cheap.

Everything is float64.  Softmax and log-sum-exp subtract the row max before
exponentiating; ``masked_fill`` is the only operation whose output may
contain non-finite values (by design, for -inf attention masking).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class EmptyTensorError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


class NonFiniteValueError(ValueError):
    pass


class Tensor:
    """A float64 array with identity semantics for gradient bookkeeping."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise EmptyTensorError("tensor has no elements")
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # Operator sugar; all graph logic lives in the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def _scalar_err():
    raise ShapeMismatchError("item() requires a single-element tensor")


_TAPE_STACK: list["GradTape"] = []


class GradTape:
    """Records operations (in execution order) for one reverse sweep.

    Execution order is a topological order of the graph, so the backward
    pass is a single reversed iteration over the recorded nodes.  A tape can
    be swept multiple times; each :meth:`gradients` call is independent.
    Tapes are not thread-safe; use one per training step.
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        self._nodes.append((out, parents, backward))

    def gradients(self, output: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar ``output`` with respect to ``sources``.

        Returns one array per source, shaped like the source; sources the
        output does not depend on get zeros.
        """
        if output.data.size != 1:
            raise ShapeMismatchError("backward pass requires a scalar output")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for out, parents, backward in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _active_tape() -> GradTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _val(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _record(out: Tensor, inputs: Sequence, backward: Callable) -> Tensor:
    """Register ``out`` on the active tape; constants are dropped from parents.

    ``backward(g)`` must return one gradient per *original* input (None for
    constants); this shim filters both sides consistently.
    """
    tape = _active_tape()
    if tape is not None:
        tensor_inputs = tuple(x for x in inputs if isinstance(x, Tensor))
        flags = [isinstance(x, Tensor) for x in inputs]

        def filtered(g):
            return tuple(pg for pg, keep in zip(backward(g), flags) if keep)

        tape._record(out, tensor_inputs, filtered)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and arithmetic primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = Tensor(av + bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = Tensor(av - bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = Tensor(av * bv)
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def scale(a, s: float) -> Tensor:
    av = _val(a)
    out = Tensor(av * s)
    return _record(out, (a,), lambda g: (g * s,))


def log(a) -> Tensor:
    av = _val(a)
    out = Tensor(np.log(av))
    return _record(out, (a,), lambda g: (g / av,))


def exp(a) -> Tensor:
    av = _val(a)
    ov = np.exp(av)
    out = Tensor(ov)
    return _record(out, (a,), lambda g: (g * ov,))


def relu(a) -> Tensor:
    av = _val(a)
    out = Tensor(np.maximum(av, 0.0))
    return _record(out, (a,), lambda g: (g * (av > 0.0),))


def pow_const(a, p: float) -> Tensor:
    av = _val(a)
    out = Tensor(av**p)
    return _record(out, (a,), lambda g: (g * p * av ** (p - 1.0),))


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise floor; gradient is zero where the floor is active."""
    av = _val(a)
    out = Tensor(np.maximum(av, floor))
    return _record(out, (a,), lambda g: (g * (av > floor),))


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value`` (no gradient there).

    ``value`` may be -inf; the output is then intentionally non-finite.
    """
    av = _val(a)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), av.shape)
    out = Tensor(np.where(m, value, av))
    return _record(out, (a,), lambda g: (np.where(m, 0.0, g),))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    av = _val(a)
    out = Tensor(av.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(av.shape),))


def transpose(a, axes) -> Tensor:
    av = _val(a)
    inv = np.argsort(axes)
    out = Tensor(av.transpose(axes))
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def gather_rows(table, indices) -> Tensor:
    """Select rows of a 2-D table by integer index; repeats accumulate on backward."""
    tv = _val(table)
    if tv.ndim != 2:
        raise ShapeMismatchError(f"gather_rows expects a 2-D table, got shape {tv.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(tv[idx])

    def backward(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, tv.shape[1]))
        return (gt,)

    return _record(out, (table,), backward)


# ---------------------------------------------------------------------------
# reductions and linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeMismatchError("matmul expects operands with ndim >= 2")
    out = Tensor(np.matmul(av, bv))

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return (_unbroadcast_batch(ga, av.shape), _unbroadcast_batch(gb, bv.shape))

    return _record(out, (a, b), backward)


def _unbroadcast_batch(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # matmul broadcasting only affects the leading (batch) dims
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    av = _val(a)
    out = Tensor(np.sum(av, axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return _record(out, (a,), backward)


def mean(a) -> Tensor:
    av = _val(a)
    out = Tensor(np.mean(av))
    n = av.size
    return _record(out, (a,), lambda g: (np.broadcast_to(g / n, av.shape).copy(),))


def softmax(a) -> Tensor:
    """Row-stable softmax over the last axis."""
    av = _val(a)
    shifted = av - np.max(av, axis=-1, keepdims=True)
    e = np.exp(shifted)
    sv = e / np.sum(e, axis=-1, keepdims=True)
    out = Tensor(sv)

    def backward(g):
        dot = np.sum(g * sv, axis=-1, keepdims=True)
        return (sv * (g - dot),)

    return _record(out, (a,), backward)


def logsumexp(a) -> Tensor:
    """log(sum(exp(x))) over the last axis, computed with the max trick.

    -inf entries (e.g. from masked_fill) contribute nothing, provided at
    least one entry per row is finite.
    """
    av = _val(a)
    m = np.max(av, axis=-1, keepdims=True)
    e = np.exp(av - m)
    total = np.sum(e, axis=-1, keepdims=True)
    out = Tensor((m + np.log(total)).squeeze(-1))
    soft = e / total

    def backward(g):
        return (np.expand_dims(g, -1) * soft,)

    return _record(out, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned affine map."""
    xv, gv, bv = _val(x), _val(gain), _val(bias)
    if xv.shape[-1] != gv.shape[-1] or xv.shape[-1] != bv.shape[-1]:
        raise ShapeMismatchError("layer_norm gain/bias must match the last axis")
    mu = np.mean(xv, axis=-1, keepdims=True)
    var = np.mean((xv - mu) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv_std
    out = Tensor(xhat * gv + bv)

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = np.sum(g * xhat, axis=lead)
        g_bias = np.sum(g, axis=lead)
        g_xhat = g * gv
        m1 = np.mean(g_xhat, axis=-1, keepdims=True)
        m2 = np.mean(g_xhat * xhat, axis=-1, keepdims=True)
        g_x = inv_std * (g_xhat - m1 - xhat * m2)
        return (g_x, g_gain, g_bias)

    return _record(out, (x, gain, bias), backward)


_ZERO_NORM = 1e-12


def cosine_similarity(u, v) -> Tensor:
    """Cosine of two vectors, clamped to [-1, 1].

    If either norm is below 1e-12 the result is 0 with zero gradient (the
    neutral value for a degenerate representation).
    """
    uv, vv = _val(u), _val(v)
    if uv.ndim != 1 or vv.ndim != 1:
        raise ShapeMismatchError("cosine_similarity expects 1-D vectors")
    if uv.shape[0] != vv.shape[0]:
        raise LengthMismatchError(f"vector lengths differ: {uv.shape[0]} vs {vv.shape[0]}")
    nu2 = float(np.dot(uv, uv))
    nv2 = float(np.dot(vv, vv))
    if nu2 < _ZERO_NORM**2 or nv2 < _ZERO_NORM**2:
        out = Tensor(0.0)
        return _record(out, (u, v), lambda g: (np.zeros_like(uv), np.zeros_like(vv)))
    denom = float(np.sqrt(nu2 * nv2))
    c = float(np.dot(uv, vv)) / denom
    out = Tensor(min(1.0, max(-1.0, c)))

    def backward(g):
        gu = g * (vv / denom - c * uv / nu2)
        gv = g * (uv / denom - c * vv / nv2)
        return (gu, gv)

    return _record(out, (u, v), backward)


def cosine_matrix(x) -> Tensor:
    """All-pairs cosine similarity of the rows of an (n, d) tensor.

    Rows with norm below 1e-12 yield 0 similarity against everything and
    block gradient flow, mirroring :func:`cosine_similarity`.  Entries may
    exceed 1 by a few ulps; downstream exponentials do not care.
    """
    xv = _val(x)
    if xv.ndim != 2:
        raise ShapeMismatchError(f"cosine_matrix expects an (n, d) tensor, got {xv.shape}")
    sumsq = sum(mul(x, x), axis=-1, keepdims=True)
    degenerate = _val(sumsq) < _ZERO_NORM**2
    inv = pow_const(masked_fill(sumsq, degenerate, 1.0), -0.5)
    unit = mul(x, inv)
    if degenerate.any():
        unit = masked_fill(unit, np.broadcast_to(degenerate, xv.shape), 0.0)
    return matmul(unit, transpose(unit, (1, 0)))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def finite_difference_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    The independent oracle for every tape gradient in this package: it never
    touches the tape machinery.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        f_plus = float(f(theta))
        flat[j] = orig - eps
        f_minus = float(f(theta))
        flat[j] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteValueError(f"function not finite near coordinate {j}")
        gflat[j] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, 1e-8), the gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))
