"""Reverse-mode automatic differentiation on an explicit tape.

Every primitive appends one node to the tape. Each node's vector-Jacobian
product is itself written with tape primitives, so when a gradient is
requested with ``create_graph=True`` the backward pass is recorded too and
can be differentiated again (needed for the discriminator gradient penalty).

Values are float64 numpy arrays of any rank; binary ops broadcast with
numpy rules and reduce back to operand shapes in the backward pass.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from ace.errors import TapeError

LEAKY_SLOPE = 0.01


class _Node:
    __slots__ = ("op", "inputs", "fwd", "vjp", "kind")

    def __init__(self, op, inputs, fwd, vjp, kind=None):
        self.op = op
        self.inputs = inputs
        self.fwd = fwd
        self.vjp = vjp
        self.kind = kind  # "leaf" | "const" for sources, None for computed nodes


class Var:
    """A value living on a :class:`Tape` (``id`` is None when not recorded)."""

    __slots__ = ("tape", "id", "value")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", value: np.ndarray, id: int | None = None):
        self.tape = tape
        self.value = value
        self.id = id

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def mT(self):
        return swap_last(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered record of primitive operations.

    Parameters
    ----------
    higher_order : bool
        Enables double recording: gradients taken with ``create_graph=True``
        are themselves recorded and can be differentiated again.
    """

    def __init__(self, higher_order: bool = False):
        self.higher_order = higher_order
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self.recording = True

    def __len__(self):
        return len(self.nodes)

    @contextmanager
    def paused(self):
        prev = self.recording
        self.recording = False
        try:
            yield
        finally:
            self.recording = prev

    def _source(self, value, kind) -> Var:
        value = np.array(value, dtype=np.float64)
        if not self.recording:
            return Var(self, value)
        self.nodes.append(_Node(kind, (), None, None, kind=kind))
        self.values.append(value)
        return Var(self, value, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        """A differentiable source (parameter or input)."""
        return self._source(value, "leaf")

    def constant(self, value) -> Var:
        return self._source(value, "const")

    def record(self, op: str, inputs: Sequence[Var], fwd: Callable, vjp: Callable) -> Var:
        out = np.asarray(fwd(*[v.value for v in inputs]), dtype=np.float64)
        if not self.recording:
            return Var(self, out)
        for v in inputs:
            if v.id is None or v.tape is not self:
                raise TapeError(f"operand of {op!r} is not a node of this tape")
        self.nodes.append(_Node(op, tuple(v.id for v in inputs), fwd, vjp))
        self.values.append(out)
        return Var(self, out, len(self.nodes) - 1)

    def _var(self, i: int) -> Var:
        return Var(self, self.values[i], i)

    def replay(self) -> bool:
        """Re-execute the record from its sources; True if every value matches bit-exactly."""
        vals: list[np.ndarray] = []
        for i, node in enumerate(self.nodes):
            if node.fwd is None:
                vals.append(self.values[i])
            else:
                vals.append(np.asarray(node.fwd(*[vals[j] for j in node.inputs]), dtype=np.float64))
        return all(
            a.shape == b.shape and np.array_equal(a, b, equal_nan=True) for a, b in zip(vals, self.values)
        )

    def gradient(self, output: Var, wrt: Sequence[Var], seed=None, create_graph: bool = False):
        """Vector-Jacobian product of ``output`` with respect to each of ``wrt``.

        Returns numpy arrays, or recorded :class:`Var` objects when
        ``create_graph`` is set (which requires ``higher_order``).
        """
        if output.tape is not self or output.id is None:
            raise TapeError("output node is not on this tape")
        for w in wrt:
            if w.tape is not self or w.id is None:
                raise TapeError("gradient requested for a node that is not on this tape")
        if create_graph and not self.higher_order:
            raise TapeError("create_graph requires a tape built with higher_order=True")

        n = output.id + 1
        depends = np.zeros(n, dtype=bool)
        for w in wrt:
            if w.id < n:
                depends[w.id] = True
        for i in range(n):
            ins = self.nodes[i].inputs
            if ins and not depends[i]:
                for j in ins:
                    if depends[j]:
                        depends[i] = True
                        break

        ctx = _null() if create_graph else self.paused()
        with ctx:
            if seed is None:
                if output.size != 1:
                    raise TapeError("a seed gradient is required for non-scalar outputs")
                g0 = np.ones_like(output.value)
            else:
                g0 = np.asarray(seed, dtype=np.float64)
                if g0.shape != output.shape:
                    raise TapeError(f"seed shape {g0.shape} does not match output shape {output.shape}")
            grads: dict[int, Var] = {}
            if depends[output.id]:
                grads[output.id] = self.constant(g0)
            wanted = {w.id for w in wrt}
            for i in range(output.id, -1, -1):
                if i not in grads:
                    continue
                node = self.nodes[i]
                if not node.inputs:
                    continue
                g = grads[i] if i in wanted else grads.pop(i)
                need = tuple(bool(depends[j]) for j in node.inputs)
                ins = [self._var(j) for j in node.inputs]
                contribs = node.vjp(g, ins, self._var(i), need)
                for j, gj, nj in zip(node.inputs, contribs, need):
                    if not nj or gj is None:
                        continue
                    grads[j] = grads[j] + gj if j in grads else gj

            out = []
            for w in wrt:
                g = grads.get(w.id)
                if g is None:
                    g = self.constant(np.zeros_like(w.value))
                out.append(g if create_graph else g.value)
        return out


@contextmanager
def _null():
    yield


# ---------------------------------------------------------------- helpers


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TapeError("at least one operand must be a Var")


def as_var(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise TapeError("operands live on different tapes")
        return x
    return tape.constant(x)


def _unbroadcast(g: Var, shape) -> Var:
    return g if g.shape == tuple(shape) else sum_to(g, shape)


def _sum_to_array(a: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    lead = a.ndim - len(shape)
    if lead > 0:
        a = a.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and a.shape[i] != 1)
    if axes:
        a = a.sum(axis=axes, keepdims=True)
    return a.reshape(shape)


def _binary(op, a, b, fwd, vjp):
    t = _tape_of(a, b)
    return t.record(op, [as_var(a, t), as_var(b, t)], fwd, vjp)


# ------------------------------------------------------------- primitives


def add(a, b) -> Var:
    def vjp(g, ins, out, need):
        return [
            _unbroadcast(g, ins[0].shape) if need[0] else None,
            _unbroadcast(g, ins[1].shape) if need[1] else None,
        ]

    return _binary("add", a, b, np.add, vjp)


def sub(a, b) -> Var:
    def vjp(g, ins, out, need):
        return [
            _unbroadcast(g, ins[0].shape) if need[0] else None,
            _unbroadcast(neg(g), ins[1].shape) if need[1] else None,
        ]

    return _binary("sub", a, b, np.subtract, vjp)


def mul(a, b) -> Var:
    def vjp(g, ins, out, need):
        x, y = ins
        return [
            _unbroadcast(g * y, x.shape) if need[0] else None,
            _unbroadcast(g * x, y.shape) if need[1] else None,
        ]

    return _binary("mul", a, b, np.multiply, vjp)


def div(a, b) -> Var:
    def vjp(g, ins, out, need):
        x, y = ins
        return [
            _unbroadcast(g / y, x.shape) if need[0] else None,
            _unbroadcast(neg(g * out) / y, y.shape) if need[1] else None,
        ]

    return _binary("div", a, b, np.divide, vjp)


def neg(a: Var) -> Var:
    return a.tape.record("neg", [a], np.negative, lambda g, ins, out, need: [neg(g)])


def matmul(a, b) -> Var:
    def vjp(g, ins, out, need):
        x, y = ins
        return [
            _unbroadcast(matmul(g, swap_last(y)), x.shape) if need[0] else None,
            _unbroadcast(matmul(swap_last(x), g), y.shape) if need[1] else None,
        ]

    t = _tape_of(a, b)
    a, b = as_var(a, t), as_var(b, t)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return t.record("matmul", [a, b], np.matmul, vjp)


def swap_last(a: Var) -> Var:
    return a.tape.record(
        "swap_last", [a], lambda x: np.swapaxes(x, -1, -2), lambda g, ins, out, need: [swap_last(g)]
    )


def transpose(a: Var, axes) -> Var:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return a.tape.record(
        "transpose", [a], lambda x: np.transpose(x, axes), lambda g, ins, out, need: [transpose(g, inv)]
    )


def reshape(a: Var, shape) -> Var:
    shape = tuple(shape)
    src = a.shape
    return a.tape.record(
        "reshape", [a], lambda x: np.reshape(x, shape), lambda g, ins, out, need: [reshape(g, src)]
    )


def sum_(a: Var, axis=None, keepdims=False) -> Var:
    src = a.shape
    if axis is None:
        axes = tuple(range(len(src)))
    else:
        axes = tuple(ax % len(src) for ax in np.atleast_1d(axis))
    kept = tuple(1 if i in axes else s for i, s in enumerate(src))

    def vjp(g, ins, out, need):
        return [broadcast_to(reshape(g, kept), src)]

    return a.tape.record("sum", [a], lambda x: np.sum(x, axis=axes, keepdims=keepdims), vjp)


def broadcast_to(a: Var, shape) -> Var:
    shape = tuple(shape)
    src = a.shape
    return a.tape.record(
        "broadcast_to",
        [a],
        lambda x: np.array(np.broadcast_to(x, shape)),
        lambda g, ins, out, need: [sum_to(g, src)],
    )


def sum_to(a: Var, shape) -> Var:
    shape = tuple(shape)
    src = a.shape
    return a.tape.record(
        "sum_to", [a], lambda x: _sum_to_array(x, shape), lambda g, ins, out, need: [broadcast_to(g, src)]
    )


def exp(a: Var) -> Var:
    return a.tape.record("exp", [a], np.exp, lambda g, ins, out, need: [g * out])


def log(a: Var) -> Var:
    return a.tape.record("log", [a], np.log, lambda g, ins, out, need: [g / ins[0]])


def sin(a: Var) -> Var:
    return a.tape.record("sin", [a], np.sin, lambda g, ins, out, need: [g * cos(ins[0])])


def cos(a: Var) -> Var:
    return a.tape.record("cos", [a], np.cos, lambda g, ins, out, need: [neg(g * sin(ins[0]))])


def tanh(a: Var) -> Var:
    return a.tape.record("tanh", [a], np.tanh, lambda g, ins, out, need: [g * (1.0 - out * out)])


def sigmoid(a: Var) -> Var:
    return a.tape.record("sigmoid", [a], expit, lambda g, ins, out, need: [g * (out * (1.0 - out))])


def leaky_relu(a: Var, slope: float = LEAKY_SLOPE) -> Var:
    def fwd(x):
        return np.where(x > 0, x, slope * x)

    def vjp(g, ins, out, need):
        mask = np.where(ins[0].value > 0, 1.0, slope)
        return [g * g.tape.constant(mask)]

    return a.tape.record("leaky_relu", [a], fwd, vjp)


def square(a: Var) -> Var:
    return a.tape.record("square", [a], np.square, lambda g, ins, out, need: [g * (ins[0] * 2.0)])


def safe_recip(a: Var) -> Var:
    """1/x with 1/0 defined as 0."""

    def fwd(x):
        nz = x != 0
        return np.where(nz, 1.0 / np.where(nz, x, 1.0), 0.0)

    return a.tape.record("safe_recip", [a], fwd, lambda g, ins, out, need: [neg(g * (out * out))])


def sqrt(a: Var) -> Var:
    # derivative at 0 is taken as 0 so norms of zero vectors stay differentiable
    return a.tape.record("sqrt", [a], np.sqrt, lambda g, ins, out, need: [g * (safe_recip(out) * 0.5)])


def clip(a: Var, lo: float, hi: float) -> Var:
    def vjp(g, ins, out, need):
        x = ins[0].value
        return [g * g.tape.constant(((x >= lo) & (x <= hi)).astype(np.float64))]

    return a.tape.record("clip", [a], lambda x: np.clip(x, lo, hi), vjp)


def take(a: Var, idx, axis: int = -1) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    axis = axis % a.ndim
    n = a.shape[axis]
    return a.tape.record(
        "take",
        [a],
        lambda x: np.take(x, idx, axis=axis),
        lambda g, ins, out, need: [scatter(g, idx, axis, n)],
    )


def scatter(a: Var, idx, axis: int, n: int) -> Var:
    """Adjoint of :func:`take`: place slices of ``a`` at ``idx`` along ``axis`` of a zero array."""
    idx = np.asarray(idx, dtype=np.intp)
    axis = axis % a.ndim

    def fwd(x):
        shape = list(x.shape)
        shape[axis] = n
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(x, axis, 0))
        return out

    return a.tape.record("scatter", [a], fwd, lambda g, ins, out, need: [take(g, idx, axis)])


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    t = _tape_of(*xs)
    xs = [as_var(x, t) for x in xs]
    ax = axis % xs[0].ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def vjp(g, ins, out, need):
        return [
            take(g, np.arange(bounds[k], bounds[k + 1]), ax) if need[k] else None for k in range(len(ins))
        ]

    return t.record("concat", xs, lambda *vals: np.concatenate(vals, axis=ax), vjp)


# ------------------------------------------------------------- composites


def mean(a: Var, axis=None, keepdims=False) -> Var:
    if axis is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def silu(a: Var) -> Var:
    return a * sigmoid(a)


def softmax(a: Var, axis: int = -1) -> Var:
    shift = a.tape.constant(np.max(a.value, axis=axis, keepdims=True))
    e = exp(a - shift)
    return e / sum_(e, axis=axis, keepdims=True)


def row_norm(a: Var, axis: int = -1) -> Var:
    """Euclidean norm along ``axis`` (gradient 0 at the zero vector)."""
    return sqrt(sum_(square(a), axis=axis))
