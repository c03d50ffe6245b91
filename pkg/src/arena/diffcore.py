"""Reverse-mode automatic differentiation on a recorded tape.

The tape stores every primitive applied to float64 arrays (scalars are
0-d arrays). Values are computed eagerly; :meth:`Tape.backward` walks the
record in reverse and accumulates vector-Jacobian products. This is enough
to differentiate an incentive parameter through a recorded policy update,
which is all the learner needs.

Also here: :class:`ParamVector` (flat parameters with named segments),
:class:`Mlp` (one hidden layer, tanh), :func:`softmax` and
:func:`finite_diff_check`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from arena.errors import ConfigError, ContractViolation


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# name -> (forward(values, **kw), vjp(g, out, values, **kw) -> tuple of grads)
_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (lambda v: v[0] + v[1],
            lambda g, o, v: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape))),
    "sub": (lambda v: v[0] - v[1],
            lambda g, o, v: (_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape))),
    "mul": (lambda v: v[0] * v[1],
            lambda g, o, v: (_unbroadcast(g * v[1], v[0].shape),
                             _unbroadcast(g * v[0], v[1].shape))),
    "scale": (lambda v, c: v[0] * c,
              lambda g, o, v, c: (g * c,)),
    "neg": (lambda v: -v[0], lambda g, o, v: (-g,)),
    "matvec": (lambda v: v[0] @ v[1],
               lambda g, o, v: (np.outer(g, v[1]), v[0].T @ g)),
    "dot": (lambda v: np.asarray(v[0] @ v[1]),
            lambda g, o, v: (g * v[1], g * v[0])),
    "sigmoid": (lambda v: _sigmoid(v[0]), lambda g, o, v: (g * o * (1.0 - o),)),
    "tanh": (lambda v: np.tanh(v[0]), lambda g, o, v: (g * (1.0 - o * o),)),
    "log": (lambda v: np.log(v[0]), lambda g, o, v: (g / v[0],)),
    "exp": (lambda v: np.exp(v[0]), lambda g, o, v: (g * o,)),
    "abs": (lambda v: np.abs(v[0]), lambda g, o, v: (g * np.sign(v[0]),)),
    "sum": (lambda v: np.asarray(v[0].sum()),
            lambda g, o, v: (np.broadcast_to(g, v[0].shape).copy(),)),
    "slice": (lambda v, start, stop: v[0][start:stop],
              lambda g, o, v, start, stop: (_scatter(v[0].shape, slice(start, stop), g),)),
    "take": (lambda v, index: np.asarray(v[0][index]),
             lambda g, o, v, index: (_scatter(v[0].shape, index, g),)),
    "reshape": (lambda v, shape: v[0].reshape(shape),
                lambda g, o, v, shape: (g.reshape(v[0].shape),)),
    "concat": (lambda v: np.concatenate([np.atleast_1d(x) for x in v]),
               lambda g, o, v: tuple(_split(g, v))),
}


def _scatter(shape, index, g):
    out = np.zeros(shape)
    out[index] = g
    return out


def _split(g, values):
    parts, start = [], 0
    for x in values:
        n = np.atleast_1d(x).size
        parts.append(g[start:start + n].reshape(np.shape(x)))
        start += n
    return parts


class Node:
    """Reference to one recorded value on a :class:`Tape`."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.index]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        rec = self.tape._records[self.index]
        return f"Node({self.index}, op={rec[0]}, shape={self.shape})"

    # operator sugar; constants are lifted onto the tape
    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.neg(self)

    def __getitem__(self, index):
        return self.tape.take(self, index)


class Tape:
    """Append-only record of primitive operations.

    Records are ``(op, operand_indices, static_kwargs)``; leaves use
    ``op == "leaf"``. Operands always precede their consumers, so the list is
    already in topological order.
    """

    def __init__(self):
        self._records: list[tuple[str, tuple[int, ...], dict]] = []
        self._values: list[np.ndarray] = []

    def __len__(self):
        return len(self._records)

    # -- recording ---------------------------------------------------------
    def leaf(self, value) -> Node:
        self._records.append(("leaf", (), {}))
        self._values.append(np.array(value, dtype=np.float64))
        return Node(self, len(self._records) - 1)

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ContractViolation("node belongs to a different tape")
            return x
        return self.leaf(x)

    def _record(self, op: str, operands: Sequence, **kw) -> Node:
        nodes = [self._lift(x) for x in operands]
        fwd = _OPS[op][0]
        value = np.asarray(fwd([n.value for n in nodes], **kw), dtype=np.float64)
        self._records.append((op, tuple(n.index for n in nodes), kw))
        self._values.append(value)
        return Node(self, len(self._records) - 1)

    def add(self, a, b): return self._record("add", (a, b))
    def sub(self, a, b): return self._record("sub", (a, b))
    def mul(self, a, b): return self._record("mul", (a, b))
    def scale(self, a, c: float): return self._record("scale", (a,), c=float(c))
    def neg(self, a): return self._record("neg", (a,))
    def matvec(self, w, x): return self._record("matvec", (w, x))
    def dot(self, a, b): return self._record("dot", (a, b))
    def sigmoid(self, a): return self._record("sigmoid", (a,))
    def tanh(self, a): return self._record("tanh", (a,))
    def log(self, a): return self._record("log", (a,))
    def exp(self, a): return self._record("exp", (a,))
    def abs(self, a): return self._record("abs", (a,))
    def sum(self, a): return self._record("sum", (a,))
    def slice(self, a, start: int, stop: int): return self._record("slice", (a,), start=start, stop=stop)
    def take(self, a, index): return self._record("take", (a,), index=index)
    def reshape(self, a, shape): return self._record("reshape", (a,), shape=tuple(shape))
    def concat(self, parts): return self._record("concat", tuple(parts))

    def log_softmax(self, logits) -> Node:
        """``z - logsumexp(z)``; the max shift is a constant, so it carries no gradient."""
        logits = self._lift(logits)
        shifted = self.sub(logits, float(np.max(logits.value)))
        return self.sub(shifted, self.log(self.sum(self.exp(shifted))))

    # -- evaluation --------------------------------------------------------
    def backward(self, root: Node) -> "GradMap":
        """Gradient of scalar ``root`` with respect to every leaf."""
        root = self._lift(root)
        if root.value.shape != ():
            raise ContractViolation(f"backward needs a scalar root, got shape {root.value.shape}")
        grads: list = [None] * (root.index + 1)
        grads[root.index] = np.ones(())
        for k in range(root.index, -1, -1):
            g = grads[k]
            op, args, kw = self._records[k]
            if g is None or op == "leaf":
                continue
            vjp = _OPS[op][1]
            for idx, contrib in zip(args, vjp(g, self._values[k], [self._values[a] for a in args], **kw)):
                grads[idx] = contrib if grads[idx] is None else grads[idx] + contrib
        return GradMap(self, grads)

    def replay(self, leaf_values: dict[int, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every value from the leaves (optionally substituted)."""
        leaf_values = leaf_values or {}
        values: list[np.ndarray] = []
        for k, (op, args, kw) in enumerate(self._records):
            if op == "leaf":
                values.append(np.array(leaf_values.get(k, self._values[k]), dtype=np.float64))
            else:
                values.append(np.asarray(_OPS[op][0]([values[a] for a in args], **kw), dtype=np.float64))
        return values


class GradMap:
    """Leaf -> gradient lookup; unreachable leaves read as zeros."""

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, node: Node) -> np.ndarray:
        if node.tape is not self._tape:
            raise ContractViolation("node belongs to a different tape")
        g = self._grads[node.index] if node.index < len(self._grads) else None
        if g is None:
            return np.zeros_like(node.value)
        return np.asarray(g, dtype=np.float64).reshape(node.value.shape)


@dataclass
class ParamVector:
    """Flat float64 parameters with named, shaped segments."""

    values: np.ndarray
    segments: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size != self.size_of(self.segments):
            raise ConfigError(
                f"parameter length {self.values.size} != segment total {self.size_of(self.segments)}")

    @staticmethod
    def size_of(segments) -> int:
        return int(sum(np.prod(shape, dtype=int) for _, shape in segments))

    @classmethod
    def zeros(cls, segments) -> "ParamVector":
        return cls(np.zeros(cls.size_of(segments)), tuple(segments))

    def __len__(self):
        return self.values.size

    def offsets(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        out, start = {}, 0
        for name, shape in self.segments:
            n = int(np.prod(shape, dtype=int))
            out[name] = (start, start + n, shape)
            start += n
        return out

    def segment(self, name: str) -> np.ndarray:
        start, stop, shape = self.offsets()[name]
        return self.values[start:stop].reshape(shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.segments)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), self.segments)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True)
class Mlp:
    """``in -> tanh(hidden) -> out`` with identity or scaled-sigmoid output.

    With ``output="sigmoid"`` the output is ``scale * sigmoid(z)``, so it lies
    in ``[0, scale]``.
    """

    n_in: int
    n_hidden: int
    n_out: int
    output: str = "identity"
    scale: float = 1.0

    def __post_init__(self):
        if min(self.n_in, self.n_hidden, self.n_out) < 1:
            raise ConfigError(f"layer sizes must be positive: {self}")
        if self.output not in ("identity", "sigmoid"):
            raise ConfigError(f"unknown output activation {self.output!r}")

    @property
    def segments(self):
        return (("w1", (self.n_hidden, self.n_in)), ("b1", (self.n_hidden,)),
                ("w2", (self.n_out, self.n_hidden)), ("b2", (self.n_out,)))

    @property
    def n_params(self) -> int:
        return ParamVector.size_of(self.segments)

    def init_params(self, rng: np.random.Generator, out_scale: float = 0.1,
                    out_bias: float = 0.0) -> ParamVector:
        p = ParamVector.zeros(self.segments)
        p.segment("w1")[...] = rng.normal(size=(self.n_hidden, self.n_in)) / np.sqrt(self.n_in)
        p.segment("w2")[...] = rng.normal(size=(self.n_out, self.n_hidden)) * out_scale / np.sqrt(self.n_hidden)
        p.segment("b2")[...] = out_bias
        return p

    def _check(self, params_len: int, input_len: int):
        if params_len != self.n_params:
            raise ConfigError(f"params length {params_len} does not match network ({self.n_params})")
        if input_len != self.n_in:
            raise ConfigError(f"input length {input_len} does not match network ({self.n_in})")

    def forward(self, params, x, tape: Tape) -> Node:
        """Record the forward pass on ``tape``.

        ``params`` may be a :class:`ParamVector` (lifted as a fresh leaf) or a
        1-d node already on the tape, e.g. an updated parameter vector.
        """
        if isinstance(params, ParamVector):
            params = tape.leaf(params.values)
        x_len = x.value.size if isinstance(x, Node) else np.size(x)
        self._check(params.value.size, x_len)
        offs = ParamVector.zeros(self.segments).offsets()
        seg = {name: tape.reshape(tape.slice(params, a, b), shape) if len(shape) > 1
               else tape.slice(params, a, b)
               for name, (a, b, shape) in offs.items()}
        h = tape.tanh(tape.add(tape.matvec(seg["w1"], x), seg["b1"]))
        z = tape.add(tape.matvec(seg["w2"], h), seg["b2"])
        if self.output == "sigmoid":
            z = tape.scale(tape.sigmoid(z), self.scale)
        return z

    def __call__(self, params: ParamVector | np.ndarray, x) -> np.ndarray:
        """Plain numpy forward (no tape)."""
        values = params.values if isinstance(params, ParamVector) else np.asarray(params)
        x = np.asarray(x, dtype=np.float64)
        self._check(values.size, x.size)
        p = ParamVector(values, self.segments)
        h = np.tanh(p.segment("w1") @ x + p.segment("b1"))
        z = p.segment("w2") @ h + p.segment("b2")
        if self.output == "sigmoid":
            z = self.scale * _sigmoid(z)
        return z


def forward(mlp: Mlp, params, x, tape: Tape) -> Node:
    return mlp.forward(params, x, tape)


def backward(tape: Tape, root: Node) -> GradMap:
    return tape.backward(root)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class FdReport:
    passed: bool
    max_rel_err: float
    worst_index: int = -1
    numeric: np.ndarray = field(default=None, repr=False)


def finite_diff_check(f: Callable[[np.ndarray], float], params, analytic,
                      step: float = 1e-5, rtol: float = 1e-6, floor: float = 1e-8) -> FdReport:
    """Compare ``analytic`` against central differences of ``f``.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, s)``, where the
    scale floor ``s = max(floor, 1e-4 * max_k max(|a_k|, |n_k|))`` keeps
    coordinates that are zero up to rounding from dominating the report.
    """
    p0 = np.array(params.values if isinstance(params, ParamVector) else params, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(p0.shape)
    numeric = np.empty_like(p0)
    flat = p0.reshape(-1)
    for k in range(flat.size):
        hi, lo = flat.copy(), flat.copy()
        hi[k] += step
        lo[k] -= step
        numeric.reshape(-1)[k] = (f(hi.reshape(p0.shape)) - f(lo.reshape(p0.shape))) / (2 * step)
    if p0.size == 0:
        return FdReport(True, 0.0, -1, numeric)
    diff = np.abs(analytic - numeric)
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    scale = max(floor, 1e-4 * float(mag.max()))
    err = diff / np.maximum(mag, scale)
    worst = int(np.argmax(err))
    max_err = float(err.reshape(-1)[worst])
    return FdReport(bool(max_err <= rtol), max_err, worst, numeric)
