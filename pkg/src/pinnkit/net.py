"""Dense networks, trainable parameters and weight persistence."""

from __future__ import annotations

import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from .data import IoError
from .graph import (
    Expr,
    Graph,
    GraphError,
    GraphMismatch,
    Op,
    WeightStore,
    WidthMismatch,
)

FORMAT_VERSION = 1
ACTIVATIONS = {
    "tanh": Op.TANH,
    "sigmoid": Op.SIGMOID,
    "relu": Op.RELU,
    "sin": Op.SIN,
    "linear": None,
}


class EmptyArchitecture(GraphError):
    pass


class ShapeMismatch(GraphError):
    pass


class FormatVersionMismatch(GraphError):
    pass


def _graph_of(exprs: Sequence[Expr]) -> Graph:
    if not exprs:
        raise EmptyArchitecture("a network needs at least one input")
    graph = exprs[0].graph
    if any(e.graph is not graph for e in exprs):
        raise GraphMismatch("network inputs live in different graphs")
    return graph


def _activate(x: Expr, actf: str) -> Expr:
    try:
        kind = ACTIVATIONS[actf]
    except KeyError:
        raise ValueError(f"unknown activation {actf!r}; choose from {sorted(ACTIVATIONS)}") from None
    return x if kind is None else x.graph.apply(kind, [x])


def glorot_uniform(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_out, d_in))


class DenseLayer:
    """One affine map ``W z + b`` followed by an activation (or none)."""

    def __init__(self, graph: Graph, store: WeightStore, prefix: str,
                 d_in: int, d_out: int, activation: str, rng: np.random.Generator):
        self.weight_name = f"{prefix}/W"
        self.bias_name = f"{prefix}/b"
        self.activation = activation
        self.d_in, self.d_out = d_in, d_out
        store.add(self.weight_name, glorot_uniform(rng, d_out, d_in))
        store.add(self.bias_name, np.zeros(d_out))
        self.W = graph.weight(self.weight_name, (d_out, d_in))
        self.b = graph.weight(self.bias_name, (d_out,))

    def __call__(self, z: Expr) -> Expr:
        return _activate(z.graph.apply(Op.AFFINE, [z, self.W, self.b]), self.activation)

    @property
    def names(self) -> tuple[str, str]:
        return self.weight_name, self.bias_name


class Functional:
    """A named dense network from input expressions to one or more output fields.

    Hidden layers use ``actf``; the output layer is linear. With several
    ``fields`` the network has one output per field (see :meth:`split`).
    """

    def __init__(self, name: str, inputs: Sequence[Expr], hidden_layers: Sequence[int],
                 actf: str = "tanh", *, fields: Sequence[str] | None = None,
                 seed: int = 0, store: WeightStore | None = None):
        inputs = list(inputs)
        graph = _graph_of(inputs)
        hidden_layers = [int(w) for w in hidden_layers]
        if not hidden_layers or any(w < 1 for w in hidden_layers):
            raise EmptyArchitecture(f"hidden layer widths must be >= 1, got {hidden_layers}")
        self.name = name
        self.graph = graph
        self.store = graph.weights if store is None else store
        self.inputs = inputs
        self.fields = list(fields) if fields else [name]
        self.hidden_layers = hidden_layers
        self.actf = actf
        self.seed = seed

        rng = np.random.default_rng(seed)
        z = graph.concat(inputs)
        widths = [z.width] + hidden_layers + [len(self.fields)]
        self.layers: list[DenseLayer] = []
        for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
            act = actf if i < len(hidden_layers) else "linear"
            layer = DenseLayer(graph, self.store, f"{name}/{i}", d_in, d_out, act, rng)
            self.layers.append(layer)
            z = layer(z)
        self.vector = z
        self.outputs = [z] if len(self.fields) == 1 else [z[i] for i in range(len(self.fields))]

    def __repr__(self):
        return f"Functional({self.name!r}, hidden={self.hidden_layers}, actf={self.actf!r})"

    @property
    def output(self) -> Expr:
        if len(self.outputs) != 1:
            raise WidthMismatch(f"{self.name} has {len(self.outputs)} fields; use split()")
        return self.outputs[0]

    def split(self) -> tuple[Expr, ...]:
        return tuple(self.outputs)

    def weight_names(self) -> list[str]:
        return [n for layer in self.layers for n in layer.names]

    def get_weights(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return get_weights(self)

    def set_weights(self, weights) -> None:
        set_weights(self, weights)

    def set_trainable(self, flag: bool) -> None:
        set_trainable(self, flag)

    @property
    def trainable(self) -> bool:
        return all(self.store.is_trainable(n) for n in self.weight_names())

    def eval(self, batch) -> np.ndarray:
        from .graph import eval as eval_expr
        return eval_expr(self.vector, batch, self.store)


def functional(name: str, inputs: Sequence[Expr], hidden_layers: Sequence[int],
               actf: str = "tanh", seed: int = 0, **kwargs) -> Functional:
    return Functional(name, inputs, hidden_layers, actf, seed=seed, **kwargs)


def compose(name: str, inner_outputs: Sequence[Expr], hidden_layers: Sequence[int],
            actf: str = "tanh", seed: int = 0, **kwargs) -> Functional:
    """Outer network fed by the outputs of other networks, e.g. ``g(f1, f2)``."""
    _graph_of(list(inner_outputs))
    return Functional(name, inner_outputs, hidden_layers, actf, seed=seed, **kwargs)


def residual_block(z: Expr | Sequence[Expr], widths: Sequence[int], actf: str = "tanh",
                   *, name: str = "res", seed: int = 0,
                   store: WeightStore | None = None) -> tuple[Expr, list[DenseLayer]]:
    """Three activated dense layers plus a skip connection.

    Returns the block output and its layers (for weight access).
    """
    if not isinstance(z, Expr):
        z = _graph_of(list(z)).concat(list(z))
    widths = [int(w) for w in widths]
    if len(widths) != 3:
        raise ValueError("a residual block has exactly three layer widths")
    if widths[-1] != z.width:
        raise WidthMismatch(f"skip connection needs output width {z.width}, got {widths[-1]}")
    graph = z.graph
    store = graph.weights if store is None else store
    rng = np.random.default_rng(seed)
    h = z
    layers = []
    d_in = z.width
    for i, d_out in enumerate(widths):
        layer = DenseLayer(graph, store, f"{name}/{i}", d_in, d_out, actf, rng)
        layers.append(layer)
        h = layer(h)
        d_in = d_out
    return h + z, layers


class Parameter:
    """Trainable scalar, broadcast over every sample when evaluated."""

    def __init__(self, initial: float = 0.0, name: str = "param", *,
                 graph: Graph, store: WeightStore | None = None, trainable: bool = True):
        self.name = name
        self.initial = float(initial)
        self.graph = graph
        self.store = graph.weights if store is None else store
        self.store.add(name, np.full((1, 1), self.initial), trainable=trainable)
        self.expr = graph.weight(name, (1, 1))

    def __repr__(self):
        return f"Parameter({self.name!r}, value={self.value!r})"

    @property
    def value(self) -> float:
        return float(self.store[self.name][0, 0])

    @value.setter
    def value(self, v: float) -> None:
        self.store[self.name][...] = v

    def set_trainable(self, flag: bool) -> None:
        self.store.set_trainable([self.name], flag)

    def weight_names(self) -> list[str]:
        return [self.name]

    # arithmetic forwards to the underlying expression
    def __add__(self, o): return self.expr + o
    def __radd__(self, o): return o + self.expr
    def __sub__(self, o): return self.expr - o
    def __rsub__(self, o): return o - self.expr
    def __mul__(self, o): return self.expr * o
    def __rmul__(self, o): return o * self.expr
    def __truediv__(self, o): return self.expr / o
    def __rtruediv__(self, o): return o / self.expr
    def __neg__(self): return -self.expr


def parameter(initial: float, name: str, graph: Graph, **kwargs) -> Parameter:
    return Parameter(initial, name, graph=graph, **kwargs)


def get_weights(f: Functional) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(f.store[l.weight_name].copy(), f.store[l.bias_name].copy()) for l in f.layers]


def set_weights(f: Functional, weights) -> None:
    weights = list(weights)
    if len(weights) != len(f.layers):
        raise ShapeMismatch(f"{f.name} has {len(f.layers)} layers, got {len(weights)}")
    for i, (layer, (w, b)) in enumerate(zip(f.layers, weights)):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != (layer.d_out, layer.d_in) or b.shape != (layer.d_out,):
            raise ShapeMismatch(
                f"{f.name} layer {i}: expected W{(layer.d_out, layer.d_in)} b({layer.d_out},), "
                f"got W{w.shape} b{b.shape}")
    for layer, (w, b) in zip(f.layers, weights):
        f.store[layer.weight_name][...] = w
        f.store[layer.bias_name][...] = b


def set_trainable(f, flag: bool) -> None:
    f.store.set_trainable(f.weight_names(), flag)


# -- persistence --------------------------------------------------------


def _members(obj) -> list:
    if isinstance(obj, (Functional, Parameter)):
        return [obj]
    return list(obj)


def save_weights(obj, path: str | Path, name: str | None = None) -> None:
    """Write networks/parameters to a ``.pfw.json`` document.

    ``obj`` is a Functional, a Parameter, or a sequence of them. Floats are
    written with their shortest round-trip representation, so reloading is
    bit-exact.
    """
    members = _members(obj)
    layers, params = [], []
    for m in members:
        if isinstance(m, Functional):
            for i, layer in enumerate(m.layers):
                layers.append({
                    "name": f"{m.name}/{i}",
                    "w": m.store[layer.weight_name].tolist(),
                    "b": m.store[layer.bias_name].tolist(),
                    "activation": layer.activation,
                    "trainable": m.store.is_trainable(layer.weight_name),
                })
        else:
            params.append({"name": m.name, "value": m.value,
                           "trainable": m.store.is_trainable(m.name)})
    doc = {
        "format_version": FORMAT_VERSION,
        "name": name or (members[0].name if len(members) == 1 else "model"),
        "layers": layers,
        "parameters": params,
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1))
    except OSError as exc:
        raise IoError(f"cannot write weights to {path}: {exc}") from exc


def load_weights(obj, path: str | Path) -> None:
    """Load weights saved by :func:`save_weights`, validating every shape first."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read weights from {path}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{path}: format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}")
    saved_layers = {entry["name"]: entry for entry in doc.get("layers", [])}
    saved_params = {entry["name"]: entry for entry in doc.get("parameters", [])}
    updates = []
    for m in _members(obj):
        if isinstance(m, Functional):
            for i, layer in enumerate(m.layers):
                key = f"{m.name}/{i}"
                if key not in saved_layers:
                    raise ShapeMismatch(f"{path}: no saved layer {key!r}")
                entry = saved_layers[key]
                w = np.array(entry["w"], dtype=np.float64)
                b = np.array(entry["b"], dtype=np.float64)
                if w.shape != (layer.d_out, layer.d_in) or b.shape != (layer.d_out,):
                    raise ShapeMismatch(
                        f"layer {key!r}: saved W{w.shape} b{b.shape}, "
                        f"network expects W{(layer.d_out, layer.d_in)} b({layer.d_out},)")
                if entry.get("activation", layer.activation) != layer.activation:
                    raise ShapeMismatch(
                        f"layer {key!r}: saved activation {entry['activation']!r}, "
                        f"network uses {layer.activation!r}")
                updates.append((m.store, layer.weight_name, w, entry.get("trainable", True)))
                updates.append((m.store, layer.bias_name, b, entry.get("trainable", True)))
        else:
            if m.name not in saved_params:
                raise ShapeMismatch(f"{path}: no saved parameter {m.name!r}")
            entry = saved_params[m.name]
            updates.append((m.store, m.name, np.full((1, 1), float(entry["value"])),
                            entry.get("trainable", True)))
    for store, key, value, trainable in updates:
        store[key][...] = value
        store.set_trainable([key], trainable)
