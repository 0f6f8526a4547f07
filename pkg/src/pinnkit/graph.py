"""Expression graph with symbolic differentiation and batched evaluation.

Every expression is a node in an append-only arena owned by a :class:`Graph`.
Values are per-sample: a node of width ``k`` evaluates to an ``(N, k)`` array
(or a broadcastable ``(1, k)`` array when it does not depend on any input
variable). Weight nodes evaluate to whatever array the weight store holds.

Derivatives with respect to input variables are built by rewriting the graph
(:func:`diff`), so a derivative is itself an expression that can be evaluated,
differentiated again, or placed inside a trainable loss. Gradients with respect
to weights are computed numerically by a reverse sweep over a compiled
:class:`Program`.
"""

from __future__ import annotations

import contextlib
import enum
import threading
from collections.abc import Iterable, Mapping, MutableMapping, Sequence

import numpy as np


class GraphError(Exception):
    """Base class for graph construction and evaluation errors."""


class DuplicateVariableName(GraphError):
    pass


class ArityMismatch(GraphError):
    pass


class NotAVariable(GraphError):
    pass


class GraphMismatch(GraphError):
    pass


class WidthMismatch(GraphError):
    pass


class MissingBinding(GraphError):
    pass


class MissingWeight(GraphError):
    pass


class NonFiniteValue(GraphError):
    pass


class Op(enum.IntEnum):
    INPUT = 0
    CONST = 1
    WEIGHT = 2
    ADD = 3
    SUB = 4
    MUL = 5
    DIV = 6
    POW = 7
    NEG = 8
    SIN = 9
    COS = 10
    TANH = 11
    SIGMOID = 12
    RELU = 13
    SQRT = 14
    SIGN = 15
    ABS = 16
    AFFINE = 17
    # internal kinds produced by differentiation and vector plumbing
    EXP = 18
    LOG = 19
    STEP = 20
    LINEAR = 21
    CONCAT = 22
    SLICE = 23


_ARITY = {
    Op.ADD: 2, Op.SUB: 2, Op.MUL: 2, Op.DIV: 2, Op.POW: 2,
    Op.NEG: 1, Op.SIN: 1, Op.COS: 1, Op.TANH: 1, Op.SIGMOID: 1,
    Op.RELU: 1, Op.SQRT: 1, Op.SIGN: 1, Op.ABS: 1, Op.EXP: 1,
    Op.LOG: 1, Op.STEP: 1, Op.AFFINE: 3, Op.LINEAR: 2, Op.SLICE: 1,
}
_UNARY = {k for k, n in _ARITY.items() if n == 1} - {Op.SLICE}
_BINARY = {Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.POW}
_COMMUTATIVE = {Op.ADD, Op.MUL}

_state = threading.local()


def debug_enabled() -> bool:
    return getattr(_state, "debug", False)


def set_debug(flag: bool) -> None:
    """Toggle per-node NaN/Inf checks during evaluation (off by default)."""
    _state.debug = bool(flag)


@contextlib.contextmanager
def debug_mode(flag: bool = True):
    previous = debug_enabled()
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(previous)


class WeightStore(MutableMapping):
    """Named weight arrays plus a trainable flag per entry."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def __getitem__(self, name):
        return self._values[name]

    def __setitem__(self, name, value):
        self._values[name] = np.array(value, dtype=np.float64)
        self._trainable.setdefault(name, True)

    def __delitem__(self, name):
        del self._values[name]
        del self._trainable[name]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def add(self, name: str, value, trainable: bool = True) -> None:
        self[name] = value
        self._trainable[name] = bool(trainable)

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, names: Iterable[str], flag: bool) -> None:
        for name in names:
            if name not in self._values:
                raise MissingWeight(name)
            self._trainable[name] = bool(flag)

    def trainable_names(self) -> list[str]:
        return [n for n, t in self._trainable.items() if t]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self._values.items()}


class Expr:
    """Handle to a node in a :class:`Graph`; supports arithmetic overloading."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, index: int):
        self.graph = graph
        self.id = index

    def __repr__(self):
        return f"Expr({self.graph.kinds[self.id].name}, id={self.id}, width={self.width})"

    def __hash__(self):
        return hash((id(self.graph), self.id))

    def __eq__(self, other):
        return isinstance(other, Expr) and other.graph is self.graph and other.id == self.id

    @property
    def kind(self) -> Op:
        return self.graph.kinds[self.id]

    @property
    def width(self) -> int:
        return self.graph.widths[self.id]

    def _lift(self, other) -> Expr:
        other = getattr(other, "expr", other)  # Parameters and similar wrappers
        if isinstance(other, Expr):
            if other.graph is not self.graph:
                raise GraphMismatch("operands belong to different graphs")
            return other
        return self.graph.const(other)

    def __add__(self, other):
        return self.graph.apply(Op.ADD, [self, self._lift(other)])

    def __radd__(self, other):
        return self.graph.apply(Op.ADD, [self._lift(other), self])

    def __sub__(self, other):
        return self.graph.apply(Op.SUB, [self, self._lift(other)])

    def __rsub__(self, other):
        return self.graph.apply(Op.SUB, [self._lift(other), self])

    def __mul__(self, other):
        return self.graph.apply(Op.MUL, [self, self._lift(other)])

    def __rmul__(self, other):
        return self.graph.apply(Op.MUL, [self._lift(other), self])

    def __truediv__(self, other):
        return self.graph.apply(Op.DIV, [self, self._lift(other)])

    def __rtruediv__(self, other):
        return self.graph.apply(Op.DIV, [self._lift(other), self])

    def __pow__(self, other):
        return self.graph.apply(Op.POW, [self, self._lift(other)])

    def __neg__(self):
        return self.graph.apply(Op.NEG, [self])

    def __pos__(self):
        return self

    def __getitem__(self, index: int) -> Expr:
        return self.graph.slice(self, index)


class Graph:
    """Append-only arena of expression nodes with structural deduplication."""

    def __init__(self):
        self.kinds: list[Op] = []
        self.args: list[tuple[int, ...]] = []
        self.attrs: list = []
        self.widths: list[int] = []
        self._index: dict[tuple, int] = {}
        self._variables: dict[str, int] = {}
        self._dcache: dict[tuple[int, int], int] = {}
        self.weights = WeightStore()

    def __len__(self):
        return len(self.kinds)

    # -- construction -------------------------------------------------

    def _node(self, kind: Op, args: tuple[int, ...], attr, width: int) -> Expr:
        key = (kind, args, attr)
        found = self._index.get(key)
        if found is not None:
            return Expr(self, found)
        index = len(self.kinds)
        self.kinds.append(kind)
        self.args.append(args)
        self.attrs.append(attr)
        self.widths.append(width)
        self._index[key] = index
        return Expr(self, index)

    def variable(self, name: str) -> Expr:
        if name in self._variables:
            raise DuplicateVariableName(name)
        expr = self._node(Op.INPUT, (), name, 1)
        self._variables[name] = expr.id
        return expr

    def variables(self) -> dict[str, Expr]:
        return {n: Expr(self, i) for n, i in self._variables.items()}

    def const(self, value, width: int | None = None) -> Expr:
        values = np.atleast_1d(np.asarray(value, dtype=np.float64)).ravel()
        if width is not None and values.size == 1 and width > 1:
            values = np.repeat(values, width)
        if width is not None and values.size != width:
            raise WidthMismatch(f"constant of size {values.size} declared with width {width}")
        # +0.0 and -0.0 share a node
        attr = tuple(float(v) + 0.0 for v in values)
        return self._node(Op.CONST, (), attr, len(attr))

    def zeros(self, width: int = 1) -> Expr:
        return self.const(0.0, width)

    def weight(self, name: str, shape: tuple[int, ...]) -> Expr:
        shape = tuple(int(s) for s in shape)
        width = shape[0] if len(shape) == 2 and shape == (1, 1) else -1
        return self._node(Op.WEIGHT, (), (name, shape), width)

    def is_const(self, e: int, value: float | None = None) -> bool:
        if self.kinds[e] != Op.CONST:
            return False
        return value is None or all(v == value for v in self.attrs[e])

    def _check_operands(self, operands: Sequence) -> tuple[int, ...]:
        ids = []
        for op in operands:
            if not isinstance(op, Expr):
                op = self.const(op)
            elif op.graph is not self:
                raise GraphMismatch("operand belongs to a different graph")
            ids.append(op.id)
        return tuple(ids)

    def apply(self, kind: Op, operands: Sequence, attr=None) -> Expr:
        """Create (or reuse) a node applying ``kind`` to ``operands``."""
        kind = Op(kind)
        ids = self._check_operands(operands)
        if kind == Op.CONCAT:
            if not ids:
                raise ArityMismatch("concat needs at least one operand")
            return self._concat(ids)
        if kind in (Op.INPUT, Op.CONST, Op.WEIGHT):
            raise ArityMismatch(f"{kind.name} nodes are created with variable/const/weight")
        if len(ids) != _ARITY[kind]:
            raise ArityMismatch(f"{kind.name} takes {_ARITY[kind]} operands, got {len(ids)}")
        if kind == Op.SLICE:
            return self._slice(ids[0], attr)
        if kind in (Op.AFFINE, Op.LINEAR):
            return self._affine(kind, ids)
        if kind in _BINARY:
            return self._binary(kind, *ids)
        return self._unary(kind, ids[0])

    def _width2(self, a: int, b: int) -> int:
        wa, wb = self.widths[a], self.widths[b]
        if wa == wb or wb == 1:
            return wa
        if wa == 1:
            return wb
        raise WidthMismatch(f"cannot combine widths {wa} and {wb}")

    def _fold(self, kind: Op, ids: tuple[int, ...]) -> Expr | None:
        if not all(self.kinds[i] == Op.CONST for i in ids):
            return None
        vals = [np.array(self.attrs[i]).reshape(1, -1) for i in ids]
        with np.errstate(all="ignore"):
            out = _FOLD[kind](*vals)
        if not np.all(np.isfinite(out)):
            return None
        return self.const(out.ravel())

    def _binary(self, kind: Op, a: int, b: int) -> Expr:
        width = self._width2(a, b)
        folded = self._fold(kind, (a, b))
        if folded is not None:
            return folded
        za, zb = self.is_const(a, 0.0), self.is_const(b, 0.0)
        wa, wb = self.widths[a], self.widths[b]
        if kind == Op.ADD:
            if zb and wa == width:
                return Expr(self, a)
            if za and wb == width:
                return Expr(self, b)
        elif kind == Op.SUB:
            if zb and wa == width:
                return Expr(self, a)
            if za and wb == width:
                return self._unary(Op.NEG, b)
            if a == b:
                return self.zeros(width)
        elif kind == Op.MUL:
            if za or zb:
                return self.zeros(width)
            if self.is_const(b, 1.0) and wa == width:
                return Expr(self, a)
            if self.is_const(a, 1.0) and wb == width:
                return Expr(self, b)
            if self.is_const(a, -1.0) and wb == width:
                return self._unary(Op.NEG, b)
        elif kind == Op.DIV:
            if za:
                return self.zeros(width)
            if self.is_const(b, 1.0) and wa == width:
                return Expr(self, a)
        elif kind == Op.POW:
            if self.is_const(b, 1.0) and wa == width:
                return Expr(self, a)
            if self.is_const(b, 0.0):
                return self.const(1.0, width)
        if kind in _COMMUTATIVE and a > b:
            a, b = b, a
        return self._node(kind, (a, b), None, width)

    def _unary(self, kind: Op, a: int) -> Expr:
        width = self.widths[a]
        folded = self._fold(kind, (a,))
        if folded is not None:
            return folded
        if kind == Op.NEG and self.kinds[a] == Op.NEG:
            return Expr(self, self.args[a][0])
        return self._node(kind, (a,), None, width)

    def _affine(self, kind: Op, ids: tuple[int, ...]) -> Expr:
        z, w = ids[0], ids[1]
        if self.kinds[w] != Op.WEIGHT or len(self.attrs[w][1]) != 2:
            raise ArityMismatch(f"{kind.name} needs a matrix weight as its second operand")
        d_out, d_in = self.attrs[w][1]
        if self.widths[z] != d_in:
            raise WidthMismatch(f"input width {self.widths[z]} does not match weight {d_out}x{d_in}")
        if kind == Op.AFFINE:
            b = ids[2]
            if self.kinds[b] != Op.WEIGHT or self.attrs[b][1] != (d_out,):
                raise ArityMismatch("AFFINE needs a bias vector weight as its third operand")
        elif self.is_const(z, 0.0):
            return self.zeros(d_out)
        return self._node(kind, ids, None, d_out)

    def _concat(self, ids: tuple[int, ...]) -> Expr:
        width = sum(self.widths[i] for i in ids)
        if len(ids) == 1:
            return Expr(self, ids[0])
        if all(self.is_const(i, 0.0) for i in ids):
            return self.zeros(width)
        return self._node(Op.CONCAT, ids, None, width)

    def _slice(self, a: int, index) -> Expr:
        width = self.widths[a]
        if not isinstance(index, (int, np.integer)) or not 0 <= index < width:
            raise WidthMismatch(f"slice index {index} out of range for width {width}")
        index = int(index)
        if width == 1:
            return Expr(self, a)
        if self.kinds[a] == Op.CONST:
            return self.const(self.attrs[a][index])
        if self.kinds[a] == Op.CONCAT:
            offset = 0
            for part in self.args[a]:
                w = self.widths[part]
                if offset <= index < offset + w:
                    return self._slice(part, index - offset)
                offset += w
        return self._node(Op.SLICE, (a,), index, 1)

    def concat(self, exprs: Sequence[Expr]) -> Expr:
        return self.apply(Op.CONCAT, exprs)

    def slice(self, expr: Expr, index: int) -> Expr:
        return self.apply(Op.SLICE, [expr], attr=index)

    # -- traversal ----------------------------------------------------

    def ancestors(self, roots: Iterable[int]) -> list[int]:
        """All nodes reachable from ``roots``, in creation (topological) order."""
        seen = set()
        stack = list(roots)
        args = self.args
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(args[n])
        return sorted(seen)

    def input_names(self, roots: Iterable[Expr]) -> set[str]:
        ids = self.ancestors(r.id for r in roots)
        return {self.attrs[i] for i in ids if self.kinds[i] == Op.INPUT}

    # -- differentiation ----------------------------------------------

    def diff(self, expr: Expr, var: Expr, order: int = 1) -> Expr:
        if var.graph is not self or expr.graph is not self:
            raise GraphMismatch("diff operands belong to a different graph")
        if self.kinds[var.id] != Op.INPUT:
            raise NotAVariable(f"cannot differentiate with respect to {self.kinds[var.id].name}")
        if order < 1:
            raise ValueError("order must be a positive integer")
        out = expr.id
        for _ in range(order):
            out = self._diff1(out, var.id)
        return Expr(self, out)

    def _diff1(self, root: int, var: int) -> int:
        cache = self._dcache
        if (root, var) in cache:
            return cache[(root, var)]
        for n in self.ancestors([root]):
            if (n, var) not in cache:
                cache[(n, var)] = self._rule(n, var).id
        return cache[(root, var)]

    def _rule(self, n: int, var: int) -> Expr:
        kind = self.kinds[n]
        width = self.widths[n]
        e = lambda i: Expr(self, i)  # noqa: E731
        d = lambda i: Expr(self, self._dcache[(i, var)])  # noqa: E731
        if kind == Op.INPUT:
            return self.const(1.0) if n == var else self.zeros(1)
        if kind in (Op.CONST, Op.WEIGHT, Op.SIGN, Op.STEP):
            return self.zeros(max(width, 1))
        a = self.args[n]
        if kind == Op.ADD:
            return d(a[0]) + d(a[1])
        if kind == Op.SUB:
            return d(a[0]) - d(a[1])
        if kind == Op.NEG:
            return -d(a[0])
        if kind == Op.MUL:
            return d(a[0]) * e(a[1]) + e(a[0]) * d(a[1])
        if kind == Op.DIV:
            return d(a[0]) / e(a[1]) - (e(n) / e(a[1])) * d(a[1])
        if kind == Op.POW:
            base, expo = e(a[0]), e(a[1])
            if self.kinds[a[1]] == Op.CONST:
                c = np.array(self.attrs[a[1]])
                return self.const(c) * base ** self.const(c - 1.0) * d(a[0])
            return e(n) * (d(a[1]) * log(base) + expo * d(a[0]) / base)
        if kind == Op.SIN:
            return cos(e(a[0])) * d(a[0])
        if kind == Op.COS:
            return -(sin(e(a[0])) * d(a[0]))
        if kind == Op.TANH:
            return (1.0 - e(n) * e(n)) * d(a[0])
        if kind == Op.SIGMOID:
            return e(n) * (1.0 - e(n)) * d(a[0])
        if kind == Op.RELU:
            return self.apply(Op.STEP, [e(a[0])]) * d(a[0])
        if kind == Op.SQRT:
            return d(a[0]) / (2.0 * e(n))
        if kind == Op.ABS:
            return sign(e(a[0])) * d(a[0])
        if kind == Op.EXP:
            return e(n) * d(a[0])
        if kind == Op.LOG:
            return d(a[0]) / e(a[0])
        if kind in (Op.AFFINE, Op.LINEAR):
            return self.apply(Op.LINEAR, [d(a[0]), e(a[1])])
        if kind == Op.CONCAT:
            return self.concat([d(i) for i in a])
        if kind == Op.SLICE:
            return self.slice(d(a[0]), self.attrs[n])
        raise GraphError(f"no derivative rule for {kind.name}")


# -- public construction helpers --------------------------------------


def new_variable(graph: Graph, name: str) -> Expr:
    return graph.variable(name)


def apply(kind: Op, operands: Sequence[Expr]) -> Expr:
    graph = next(o.graph for o in operands if isinstance(o, Expr))
    return graph.apply(kind, operands)


def diff(expr: Expr, var: Expr, order: int = 1) -> Expr:
    """Expression for the ``order``-th derivative of ``expr`` with respect to ``var``."""
    return expr.graph.diff(expr, var, order)


def _unary_fn(kind):
    def fn(x: Expr) -> Expr:
        return x.graph.apply(kind, [x])

    fn.__name__ = kind.name.lower()
    return fn


sin = _unary_fn(Op.SIN)
cos = _unary_fn(Op.COS)
tanh = _unary_fn(Op.TANH)
sigmoid = _unary_fn(Op.SIGMOID)
relu = _unary_fn(Op.RELU)
sqrt = _unary_fn(Op.SQRT)
sign = _unary_fn(Op.SIGN)
abs_ = _unary_fn(Op.ABS)
exp = _unary_fn(Op.EXP)
log = _unary_fn(Op.LOG)


def _sigmoid(x):
    # logistic 1/(1+exp(-x)) without overflow warnings
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


_FOLD = {
    Op.ADD: np.add, Op.SUB: np.subtract, Op.MUL: np.multiply, Op.DIV: np.divide,
    Op.POW: np.power, Op.NEG: np.negative, Op.SIN: np.sin, Op.COS: np.cos,
    Op.TANH: np.tanh, Op.SIGMOID: _sigmoid, Op.RELU: lambda x: np.maximum(x, 0.0),
    Op.SQRT: np.sqrt, Op.SIGN: np.sign, Op.ABS: np.abs, Op.EXP: np.exp,
    Op.LOG: np.log, Op.STEP: lambda x: (x > 0).astype(np.float64),
}


# -- compiled evaluation ----------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 2:
        if shape[0] == 1 and g.shape[0] != 1:
            g = g.sum(axis=0, keepdims=True)
        if shape[1] == 1 and g.shape[1] != 1:
            g = g.sum(axis=1, keepdims=True)
        return g
    return g.reshape(shape)


def _forward_fn(kind: Op, a: tuple[int, ...], attr, graph: Graph):
    """Closure computing one node's value from the value list ``v``."""
    if kind == Op.ADD:
        x, y = a
        return lambda v: v[x] + v[y]
    if kind == Op.SUB:
        x, y = a
        return lambda v: v[x] - v[y]
    if kind == Op.MUL:
        x, y = a
        if x == y:
            return lambda v: np.square(v[x])
        return lambda v: v[x] * v[y]
    if kind == Op.DIV:
        x, y = a
        return lambda v: v[x] / v[y]
    if kind == Op.POW:
        x, y = a
        if graph.kinds[y] == Op.CONST and graph.widths[y] == 1:
            c = graph.attrs[y][0]
            if c == 2.0:
                return lambda v: np.square(v[x])
            if c == 0.5:
                return lambda v: np.sqrt(v[x])
            return lambda v: np.power(v[x], c)
        return lambda v: np.power(v[x], v[y])
    if kind == Op.NEG:
        (x,) = a
        return lambda v: -v[x]
    if kind in _UNARY:
        (x,) = a
        f = _FOLD[kind]
        return lambda v: f(v[x])
    if kind == Op.AFFINE:
        z, w, b = a
        return lambda v: v[z] @ v[w].T + v[b]
    if kind == Op.LINEAR:
        z, w = a
        return lambda v: v[z] @ v[w].T
    if kind == Op.SLICE:
        (x,) = a
        i = attr
        return lambda v: v[x][:, i:i + 1]
    if kind == Op.CONCAT:
        return None  # needs the batch size, handled in Program.forward
    raise GraphError(f"cannot evaluate {kind.name}")


def _backward_fn(kind: Op, n: int, a: tuple[int, ...], active: set[int], graph: Graph):
    """Closure returning ``[(operand, contribution), ...]`` for the active operands."""
    act = [i in active for i in a]
    if kind == Op.ADD:
        x, y = a
        ax, ay = act
        return lambda v, g: ([(x, g)] if ax else []) + ([(y, g)] if ay else [])
    if kind == Op.SUB:
        x, y = a
        ax, ay = act
        return lambda v, g: ([(x, g)] if ax else []) + ([(y, -g)] if ay else [])
    if kind == Op.NEG:
        (x,) = a
        return lambda v, g: [(x, -g)]
    if kind == Op.MUL:
        x, y = a
        ax, ay = act
        if x == y:
            return lambda v, g: [(x, 2.0 * g * v[x])]
        return lambda v, g: ([(x, g * v[y])] if ax else []) + ([(y, g * v[x])] if ay else [])
    if kind == Op.DIV:
        x, y = a
        ax, ay = act
        return lambda v, g: (([(x, g / v[y])] if ax else [])
                             + ([(y, -g * v[n] / v[y])] if ay else []))
    if kind == Op.POW:
        x, y = a
        ax, ay = act
        return lambda v, g: (
            ([(x, g * v[y] * np.power(v[x], v[y] - 1.0))] if ax else [])
            + ([(y, g * v[n] * np.log(v[x]))] if ay else []))
    (x, *_) = a
    if kind == Op.SIN:
        return lambda v, g: [(x, g * np.cos(v[x]))]
    if kind == Op.COS:
        return lambda v, g: [(x, -g * np.sin(v[x]))]
    if kind == Op.TANH:
        return lambda v, g: [(x, g * (1.0 - np.square(v[n])))]
    if kind == Op.SIGMOID:
        return lambda v, g: [(x, g * v[n] * (1.0 - v[n]))]
    if kind == Op.RELU:
        return lambda v, g: [(x, g * (v[x] > 0))]
    if kind == Op.SQRT:
        return lambda v, g: [(x, 0.5 * g / v[n])]
    if kind == Op.ABS:
        return lambda v, g: [(x, g * np.sign(v[x]))]
    if kind == Op.EXP:
        return lambda v, g: [(x, g * v[n])]
    if kind == Op.LOG:
        return lambda v, g: [(x, g / v[x])]
    if kind in (Op.SIGN, Op.STEP):
        return lambda v, g: []
    if kind in (Op.AFFINE, Op.LINEAR):
        z, w = a[0], a[1]
        az, aw = act[0], act[1]
        ab = kind == Op.AFFINE and act[2]
        b = a[2] if kind == Op.AFFINE else None

        def affine_bwd(v, g):
            out = []
            zval = v[z]
            if zval.shape[0] != g.shape[0]:
                zval = np.broadcast_to(zval, (g.shape[0], zval.shape[1]))
            if az:
                out.append((z, g @ v[w]))
            if aw:
                out.append((w, g.T @ zval))
            if ab:
                out.append((b, g.sum(axis=0)))
            return out

        return affine_bwd
    if kind == Op.SLICE:
        i = graph.attrs[n]
        width = graph.widths[x]

        def slice_bwd(v, g):
            full = np.zeros((g.shape[0], width))
            full[:, i:i + 1] = g
            return [(x, full)]

        return slice_bwd
    if kind == Op.CONCAT:
        bounds = np.cumsum([0] + [graph.widths[i] for i in a])
        pairs = [(i, bounds[k], bounds[k + 1]) for k, i in enumerate(a) if act[k]]
        return lambda v, g: [(i, g[:, lo:hi]) for i, lo, hi in pairs]
    raise GraphError(f"no reverse rule for {kind.name}")


class EvalBatch:
    """Named input columns, all of the same length ``n``."""

    def __init__(self, bindings: Mapping[str, Sequence[float]]):
        cols = {}
        n = None
        for name, col in bindings.items():
            arr = np.asarray(col, dtype=np.float64).reshape(-1, 1)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise WidthMismatch(f"column {name!r} has length {arr.shape[0]}, expected {n}")
            cols[name] = arr
        if not n:
            raise MissingBinding("an evaluation batch needs at least one non-empty column")
        self.columns = cols
        self.n = n

    @classmethod
    def of(cls, batch) -> EvalBatch:
        return batch if isinstance(batch, EvalBatch) else cls(batch)


class Program:
    """Forward/reverse program for a fixed set of output expressions.

    A program only reads the graph, the batch and the weights, so one instance
    can serve concurrent evaluations on different batches.
    """

    def __init__(self, graph: Graph, outputs: Sequence[Expr]):
        self.graph = graph
        self.outputs = [o.id for o in outputs]
        self.order = graph.ancestors(self.outputs)
        self.inputs = [(i, graph.attrs[i]) for i in self.order if graph.kinds[i] == Op.INPUT]
        self.weights = [(i, graph.attrs[i][0]) for i in self.order if graph.kinds[i] == Op.WEIGHT]
        self.consts = [(i, np.array(graph.attrs[i]).reshape(1, -1))
                       for i in self.order if graph.kinds[i] == Op.CONST]
        self.steps = []
        for i in self.order:
            kind = graph.kinds[i]
            if kind in (Op.INPUT, Op.CONST, Op.WEIGHT):
                continue
            self.steps.append((i, kind, graph.args[i], _forward_fn(kind, graph.args[i], graph.attrs[i], graph)))
        self._reverse: dict[frozenset, tuple] = {}
        self._pruned_steps: dict[frozenset, list] = {}
        self._lock = threading.Lock()

    @property
    def input_names(self) -> list[str]:
        return [name for _, name in self.inputs]

    def forward(self, batch, weights: Mapping[str, np.ndarray], cache: dict | None = None) -> list:
        """Evaluate every node of the program; returns the value list.

        ``cache`` maps node ids to values that are reused instead of recomputed
        (used by the trainer for subgraphs that cannot change between steps);
        nodes only needed to produce cached values are skipped.
        """
        batch = EvalBatch.of(batch)
        v = [None] * len(self.graph)
        cols = batch.columns
        for i, name in self.inputs:
            try:
                v[i] = cols[name]
            except KeyError:
                raise MissingBinding(f"no binding for input variable {name!r}") from None
        for i, name in self.weights:
            try:
                v[i] = weights[name]
            except KeyError:
                raise MissingWeight(f"no weight named {name!r}") from None
        for i, val in self.consts:
            v[i] = val
        debug = debug_enabled()
        n = batch.n
        if cache:
            for i, val in cache.items():
                v[i] = val
        steps = self.steps if not cache else self._pruned(cache)
        with np.errstate(all="ignore"):
            self._run(steps, v, n, debug)
        return v

    def _pruned(self, cache: dict) -> list:
        key = frozenset(cache)
        steps = self._pruned_steps.get(key)
        if steps is None:
            needed = set(self.outputs)
            for i in reversed(self.order):
                if i in needed and i not in cache:
                    needed.update(self.graph.args[i])
            steps = [s for s in self.steps if s[0] in needed and s[0] not in cache]
            self._pruned_steps[key] = steps
        return steps

    def _run(self, steps: list, v: list, n: int, debug: bool) -> None:
        for i, kind, args, fn in steps:
            if v[i] is not None:
                continue
            if kind == Op.CONCAT:
                parts = [v[j] if v[j].shape[0] == n else np.broadcast_to(v[j], (n, v[j].shape[1]))
                         for j in args]
                v[i] = np.concatenate(parts, axis=1)
            else:
                if debug and kind == Op.SQRT and np.any(v[args[0]] < 0):
                    raise NonFiniteValue(f"sqrt of a negative value at node {i}")
                v[i] = fn(v)
            if debug and not np.all(np.isfinite(v[i])):
                raise NonFiniteValue(f"non-finite value produced by {kind.name} node {i}")

    def _reverse_plan(self, trainable: frozenset):
        with self._lock:
            plan = self._reverse.get(trainable)
            if plan is not None:
                return plan
            graph = self.graph
            active = set()
            for i in self.order:
                kind = graph.kinds[i]
                if kind == Op.WEIGHT:
                    if graph.attrs[i][0] in trainable:
                        active.add(i)
                elif any(j in active for j in graph.args[i]):
                    active.add(i)
            steps = []
            for i in reversed(self.order):
                kind = graph.kinds[i]
                if i in active and kind not in (Op.INPUT, Op.CONST, Op.WEIGHT):
                    steps.append((i, _backward_fn(kind, i, graph.args[i], active, graph)))
            wnodes = [(i, graph.attrs[i][0]) for i in self.order
                      if graph.kinds[i] == Op.WEIGHT and i in active]
            plan = (active, steps, wnodes)
            self._reverse[trainable] = plan
            return plan

    def static_nodes(self, trainable: Iterable[str]) -> list[int]:
        """Nodes whose value does not depend on any trainable weight."""
        active = self._reverse_plan(frozenset(trainable))[0]
        return [i for i in self.order if i not in active]

    def backward(self, values: list, seeds: Mapping[int, np.ndarray],
                 trainable: Iterable[str]) -> dict[str, np.ndarray]:
        """Reverse sweep: gradients of ``sum(seed * output)`` for each trainable weight."""
        active, steps, wnodes = self._reverse_plan(frozenset(trainable))
        grads = [None] * len(self.graph)
        owned = set()  # nodes whose gradient buffer was allocated here and may be added into

        def accumulate(j, gj):
            if grads[j] is None:
                grads[j] = gj
            elif j in owned:
                np.add(grads[j], gj, out=grads[j])
            else:
                grads[j] = grads[j] + gj
                owned.add(j)

        for i, seed in seeds.items():
            if i in active:
                accumulate(i, _unbroadcast(seed, values[i].shape))
        for i, fn in steps:
            g = grads[i]
            if g is None:
                continue
            for j, gj in fn(values, g):
                if j not in active:
                    continue
                shape = values[j].shape
                if gj.shape != shape:
                    gj = _unbroadcast(gj, shape)
                accumulate(j, gj)
        out = {}
        for i, name in wnodes:
            g = grads[i]
            if g is None:
                g = np.zeros_like(values[i])
            out[name] = g if name not in out else out[name] + g
        return out


def _column(value: np.ndarray, n: int) -> np.ndarray:
    value = np.broadcast_to(value, (n, value.shape[1])) if value.ndim == 2 else value
    out = np.array(value, dtype=np.float64)
    return out[:, 0] if out.ndim == 2 and out.shape[1] == 1 else out


def eval(expr: Expr, batch, weights: Mapping[str, np.ndarray] | None = None) -> np.ndarray:  # noqa: A001
    """Evaluate ``expr`` on a batch; width-1 results come back as 1-D columns."""
    batch = EvalBatch.of(batch)
    weights = expr.graph.weights if weights is None else weights
    prog = Program(expr.graph, [expr])
    v = prog.forward(batch, weights)
    return _column(v[expr.id], batch.n)


def eval_many(exprs: Sequence[Expr], batch, weights=None) -> list[np.ndarray]:
    batch = EvalBatch.of(batch)
    graph = exprs[0].graph
    weights = graph.weights if weights is None else weights
    v = Program(graph, exprs).forward(batch, weights)
    return [_column(v[e.id], batch.n) for e in exprs]


def weight_gradients(loss: Expr, batch, weights: WeightStore | None = None) -> dict[str, np.ndarray]:
    """Gradient of the sample mean of ``loss`` for every trainable weight."""
    batch = EvalBatch.of(batch)
    weights = loss.graph.weights if weights is None else weights
    prog = Program(loss.graph, [loss])
    v = prog.forward(batch, weights)
    val = v[loss.id]
    seed = np.full((batch.n, val.shape[1]), 1.0 / batch.n)
    return prog.backward(v, {loss.id: seed}, weights.trainable_names())
