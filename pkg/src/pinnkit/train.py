"""Targets, loss assembly, optimizers and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import EvalBatch, Expr, GraphError, Op, Program

log = logging.getLogger(__name__)


class TrainError(Exception):
    pass


class EmptyTargets(TrainError):
    pass


class UnboundVariableInTarget(TrainError):
    pass


class BatchLargerThanDataset(TrainError):
    pass


class InvalidTarget(TrainError):
    pass


class NonFiniteLoss(TrainError):
    """Training diverged; ``history`` holds the epochs completed before the abort."""

    def __init__(self, epoch: int, history: TrainHistory):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.history = history


# -- targets -------------------------------------------------------------


def _as_expr(e) -> Expr:
    expr = getattr(e, "expr", e)
    if not isinstance(expr, Expr):
        expr = getattr(e, "output", None)
    if not isinstance(expr, Expr):
        raise InvalidTarget(f"cannot use {e!r} as a target expression")
    return expr


@dataclass
class Data:
    """Observed values for ``expr``; with ``ids`` only those sample rows are fitted."""

    expr: Expr
    values: np.ndarray
    ids: np.ndarray | None = None
    weight: float = 1.0
    name: str | None = None

    def __post_init__(self):
        self.expr = _as_expr(self.expr)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.ids is not None:
            self.ids = np.asarray(self.ids, dtype=np.int64).ravel()
            if len(np.unique(self.ids)) != len(self.ids):
                raise InvalidTarget("Data ids must be unique")
            if len(self.values) != len(self.ids):
                raise InvalidTarget(
                    f"{len(self.ids)} ids but {len(self.values)} values")

    @property
    def residual(self) -> Expr:
        return self.expr


@dataclass
class Tie:
    """Equality ``lhs == rhs``, penalized through the residual ``lhs - rhs``."""

    lhs: Expr
    rhs: Expr
    weight: float = 1.0
    name: str | None = None

    def __post_init__(self):
        self.lhs, self.rhs = _as_expr(self.lhs), _as_expr(self.rhs)

    @property
    def residual(self) -> Expr:
        return self.lhs - self.rhs


@dataclass
class Zeros:
    """Residual driven to zero at every sample."""

    expr: Expr
    weight: float = 1.0
    name: str | None = None

    def __post_init__(self):
        self.expr = _as_expr(self.expr)

    @property
    def residual(self) -> Expr:
        return self.expr


@dataclass
class Integral:
    """Zero target on the sum of ``expr`` over all samples (one equation per column).

    The loss is the mean over columns of the squared column sums, so it only
    makes sense on the full sample set (batch_size = N).
    """

    expr: Expr
    weight: float = 1.0
    name: str | None = None

    def __post_init__(self):
        self.expr = _as_expr(self.expr)

    @property
    def residual(self) -> Expr:
        return self.expr


Target = Data | Tie | Zeros | Integral


# -- losses and optimizers ----------------------------------------------


def loss_reduce(kind: str, residuals, mask=None) -> float:
    """MSE or MAE of ``residuals`` restricted to the rows in ``mask``."""
    r = np.asarray(residuals, dtype=np.float64)
    if mask is not None:
        r = r[np.asarray(mask, dtype=np.int64)]
    if r.size == 0:
        return 0.0
    if kind == "mse":
        return float(np.mean(np.square(r)))
    if kind == "mae":
        return float(np.mean(np.abs(r)))
    raise ValueError(f"unknown loss kind {kind!r}")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_rate: float | None = None
    decay_steps: int | None = None

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if (self.decay_rate is None) != (self.decay_steps is None):
            raise ValueError("exponential decay needs both decay_rate and decay_steps")

    def lr_at(self, step: int) -> float:
        """Learning rate for optimizer step ``step`` (1-based)."""
        if self.decay_rate is None:
            return self.learning_rate
        return self.learning_rate * self.decay_rate ** ((step - 1) / self.decay_steps)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(weights: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, config: OptimizerConfig):
    """Bias-corrected Adam update, applied in place to ``weights[name]``."""
    state.t += 1
    t = state.t
    lr = config.lr_at(t)
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        w = weights[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return weights, state


def sgd_step(weights, grads, state: AdamState, config: OptimizerConfig):
    state.t += 1
    lr = config.lr_at(state.t)
    for name, g in grads.items():
        weights[name] -= lr * g
    return weights, state


# -- history -------------------------------------------------------------


@dataclass
class TrainHistory:
    target_names: list[str]
    loss: list[float] = field(default_factory=list)
    target_losses: list[list[float]] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    empty_mask_batches: list[int] = field(default_factory=list)
    parameters: dict[str, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.loss)

    def to_csv(self, path: str | Path, include_seconds: bool = True) -> None:
        header = ["epoch", "total_loss"] + [f"{n}_loss" for n in self.target_names]
        if include_seconds:
            header.append("seconds")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, total in enumerate(self.loss):
                row = [i + 1, repr(total)] + [repr(x) for x in self.target_losses[i]]
                if include_seconds:
                    row.append(f"{self.seconds[i]:.6f}")
                writer.writerow(row)


# -- model ---------------------------------------------------------------


def _columns_of(columns) -> dict[str, np.ndarray]:
    columns = getattr(columns, "columns", columns)
    return {k: np.asarray(v, dtype=np.float64).reshape(-1, 1) for k, v in columns.items()}


class SciModel:
    """An optimization problem: input variables, targets, a loss and an optimizer."""

    def __init__(self, inputs: Sequence[Expr], targets: Sequence, loss_kind: str = "mse",
                 optimizer: OptimizerConfig | str | None = None):
        if not targets:
            raise EmptyTargets("a model needs at least one target")
        self.targets = [t if isinstance(t, (Data, Tie, Zeros, Integral)) else Zeros(t)
                        for t in targets]
        self.inputs = list(inputs)
        self.graph = self.targets[0].residual.graph
        for v in self.inputs:
            if v.kind != Op.INPUT:
                raise UnboundVariableInTarget(f"model inputs must be variables, got {v!r}")
        self.input_names = [self.graph.attrs[v.id] for v in self.inputs]
        self.loss_kind = loss_kind.lower()
        if self.loss_kind not in ("mse", "mae"):
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        if optimizer is None or isinstance(optimizer, str):
            optimizer = OptimizerConfig(kind=optimizer or "adam")
        self.optimizer = optimizer
        self.residuals = [t.residual for t in self.targets]
        for i, r in enumerate(self.residuals):
            if r.graph is not self.graph:
                raise GraphError("all targets must live in one graph")
            missing = self.graph.input_names([r]) - set(self.input_names)
            if missing:
                raise UnboundVariableInTarget(
                    f"target {self.target_names[i]} uses variables {sorted(missing)} "
                    "that are not model inputs")
        self.program = Program(self.graph, self.residuals)
        self.state = AdamState()

    @property
    def target_names(self) -> list[str]:
        return [t.name or f"L{i + 1}" for i, t in enumerate(self.targets)]

    @property
    def weights(self):
        return self.graph.weights

    def _prepare(self, n: int):
        prepared = []
        for t, name in zip(self.targets, self.target_names):
            if isinstance(t, Data):
                width = t.expr.width
                vals = t.values.reshape(len(t.values), -1)
                if vals.shape[1] not in (1, width):
                    raise InvalidTarget(f"{name}: values have {vals.shape[1]} columns, "
                                        f"expression has width {width}")
                if t.ids is None:
                    if len(vals) != n:
                        raise InvalidTarget(f"{name}: {len(vals)} values for {n} samples")
                    prepared.append((vals, None))
                else:
                    if t.ids.size and (t.ids.min() < 0 or t.ids.max() >= n):
                        raise InvalidTarget(f"{name}: ids out of range [0, {n})")
                    full = np.zeros((n, vals.shape[1]))
                    full[t.ids] = vals
                    mask = np.zeros(n, dtype=bool)
                    mask[t.ids] = True
                    prepared.append((full, mask))
            else:
                prepared.append((None, None))
        return prepared

    def _batch_losses(self, v, idx, prepared, n_total, want_seeds=True):
        """Per-target losses (unweighted) and reverse seeds for one batch."""
        losses, seeds = [], {}
        empty = 0
        b = n_total if idx is None else len(idx)
        for t, r_expr, (vals, mask) in zip(self.targets, self.residuals, prepared):
            out = v[r_expr.id]
            k = out.shape[1]
            if out.shape[0] != b:
                out = np.broadcast_to(out, (b, k))
            rows = None
            if isinstance(t, Data):
                y = vals if idx is None else vals[idx]
                r = out - y
                if mask is not None:
                    rows = mask if idx is None else mask[idx]
                    if not rows.any():
                        losses.append(0.0)
                        empty += 1
                        continue
            else:
                r = out
            if isinstance(t, Integral):
                if b != n_total:
                    raise BatchLargerThanDataset(
                        "an Integral target needs the full sample set in every batch")
                total = r.sum(axis=0)
                losses.append(float(np.mean(np.square(total))))
                if want_seeds:
                    seeds[r_expr.id] = np.broadcast_to(2.0 * t.weight * total / k, (b, k))
                continue
            sub = r if rows is None else r[rows]
            count = sub.size
            if self.loss_kind == "mse":
                losses.append(float(np.sum(np.square(sub)) / count))
                g = (2.0 * t.weight / count) * sub
            else:
                losses.append(float(np.sum(np.abs(sub)) / count))
                g = (t.weight / count) * np.sign(sub)
            if want_seeds:
                if rows is not None:
                    full = np.zeros((b, k))
                    full[rows] = g
                    g = full
                prev = seeds.get(r_expr.id)
                seeds[r_expr.id] = g if prev is None else prev + g
        return losses, seeds, empty

    def losses(self, columns) -> tuple[float, list[float]]:
        """Total weighted loss and per-target losses over the full sample set."""
        cols = _columns_of(columns)
        n = len(next(iter(cols.values())))
        prepared = self._prepare(n)
        v = self.program.forward(EvalBatch(cols), self.weights)
        comps, _, _ = self._batch_losses(v, None, prepared, n, want_seeds=False)
        return sum(t.weight * c for t, c in zip(self.targets, comps)), comps

    def train(self, columns, epochs: int = 1, batch_size: int | None = None,
              shuffle_seed: int = 0, log_every: int = 0) -> TrainHistory:
        """Run ``epochs`` passes of mini-batch gradient descent over the samples."""
        cols = _columns_of(columns)
        missing = [n for n in self.input_names if n not in cols]
        if missing:
            raise UnboundVariableInTarget(f"no input column for {missing}")
        cols = {n: cols[n] for n in self.input_names}
        lengths = {len(c) for c in cols.values()}
        if len(lengths) != 1:
            raise InvalidTarget(f"input columns have different lengths {sorted(lengths)}")
        n = lengths.pop()
        batch_size = n if batch_size is None else int(batch_size)
        if batch_size > n:
            raise BatchLargerThanDataset(f"batch_size {batch_size} exceeds {n} samples")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        prepared = self._prepare(n)
        store = self.weights
        trainable = [w for _, w in self.program.weights if store.is_trainable(w)]
        step = adam_step if self.optimizer.kind == "adam" else sgd_step
        rng = np.random.default_rng(shuffle_seed)
        full_batch = batch_size == n
        cache = self._static_cache(cols, n, trainable) if full_batch else None
        history = TrainHistory(self.target_names)
        n_batches = math.ceil(n / batch_size)
        for epoch in range(1, epochs + 1):
            start = time.perf_counter()
            order = None if full_batch else rng.permutation(n)
            epoch_total = 0.0
            epoch_comps = np.zeros(len(self.targets))
            empty = 0
            for bi in range(n_batches):
                if full_batch:
                    idx, batch = None, EvalBatch(cols)
                else:
                    idx = order[bi * batch_size:(bi + 1) * batch_size]
                    batch = EvalBatch({k: c[idx] for k, c in cols.items()})
                v = self.program.forward(batch, store, cache)
                comps, seeds, e = self._batch_losses(v, idx, prepared, n)
                empty += e
                total = sum(t.weight * c for t, c in zip(self.targets, comps))
                if not math.isfinite(total):
                    history.parameters = self._parameter_values()
                    raise NonFiniteLoss(epoch, history)
                epoch_total += total
                epoch_comps += comps
                if trainable and seeds:
                    grads = self.program.backward(v, seeds, trainable)
                    step(store, grads, self.state, self.optimizer)
            history.loss.append(epoch_total / n_batches)
            history.target_losses.append((epoch_comps / n_batches).tolist())
            history.seconds.append(time.perf_counter() - start)
            history.empty_mask_batches.append(empty)
            if log_every and epoch % log_every == 0:
                log.info("epoch %d loss %.6e empty-mask batches %d", epoch, history.loss[-1], empty)
        history.parameters = self._parameter_values()
        return history

    def _static_cache(self, cols, n, trainable) -> dict:
        """Values of weight-independent nodes that feed trainable ones (full batch only)."""
        prog = self.program
        static = set(prog.static_nodes(trainable))
        graph = self.graph
        needed = set()
        for i in prog.order:
            if i not in static:
                needed.update(j for j in graph.args[i] if j in static)
        needed.update(i for i in prog.outputs if i in static)
        needed = {i for i in needed if graph.kinds[i] not in (Op.INPUT, Op.CONST, Op.WEIGHT)}
        if not needed:
            return {}
        v = prog.forward(EvalBatch(cols), self.weights)
        return {i: v[i] for i in needed}

    def _parameter_values(self) -> dict[str, float]:
        return {name: float(self.weights[name][0, 0]) for _, name in self.program.weights
                if self.weights[name].shape == (1, 1)}


def build_model(inputs, targets, loss_kind: str = "mse", optimizer=None) -> SciModel:
    return SciModel(inputs, targets, loss_kind, optimizer)


def train(model: SciModel, input_columns, **config) -> TrainHistory:
    return model.train(input_columns, **config)
