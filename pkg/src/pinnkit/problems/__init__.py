"""Ready-to-run problem definitions and error metrics."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from ..data import SampleSet
from ..graph import Expr, Graph, NonFiniteValue, eval_many
from ..net import Functional, Parameter, ShapeMismatch
from ..train import OptimizerConfig, SciModel


class ProblemError(Exception):
    pass


@dataclass
class ErrorReport:
    relative_L2: float
    L_inf: float
    abs_error: np.ndarray


def error_report(prediction, reference) -> ErrorReport:
    """Relative L2 and max-norm errors of ``prediction`` against ``reference``.

    Both arguments are arrays of identical shape, or mappings with identical
    keys whose arrays are compared jointly (stacked in key order).
    """
    if isinstance(prediction, Mapping) or isinstance(reference, Mapping):
        if not (isinstance(prediction, Mapping) and isinstance(reference, Mapping)):
            raise ShapeMismatch("cannot compare a mapping of fields with a single array")
        if set(prediction) != set(reference):
            raise ShapeMismatch(f"fields differ: {sorted(prediction)} vs {sorted(reference)}")
        keys = sorted(prediction)
        pred = np.stack([np.asarray(prediction[k], dtype=np.float64).ravel() for k in keys], 1)
        ref = np.stack([np.asarray(reference[k], dtype=np.float64).ravel() for k in keys], 1)
    else:
        pred = np.asarray(prediction, dtype=np.float64)
        ref = np.asarray(reference, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != reference shape {ref.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(ref))):
        raise NonFiniteValue("non-finite value in prediction or reference")
    err = np.abs(pred - ref)
    norm = np.linalg.norm(ref)
    rel = np.linalg.norm(pred - ref) / norm if norm > 0 else np.linalg.norm(pred - ref)
    return ErrorReport(float(rel), float(err.max()) if err.size else 0.0, err)


@dataclass
class ProblemSpec:
    """Everything needed to train and score one case study.

    ``fields`` maps output names to expressions evaluated for predictions.
    ``reference`` maps a sample set to the true values of (some of) those
    fields, or is None when no closed form is available.
    """

    name: str
    graph: Graph
    inputs: list[Expr]
    targets: list
    samples: SampleSet
    fields: dict[str, Expr]
    networks: dict[str, Functional] = field(default_factory=dict)
    parameters: dict[str, Parameter] = field(default_factory=dict)
    eval_samples: SampleSet | None = None
    reference: Callable[[SampleSet], dict[str, np.ndarray]] | None = None
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)  # problem-specific objects, not serialized

    def __post_init__(self):
        names = set(self.graph.input_names(t.residual for t in self.targets)) \
            if self.targets else set()
        known = {self.graph.attrs[v.id] for v in self.inputs}
        if not names <= known:
            raise ProblemError(f"targets use unbound variables {sorted(names - known)}")

    def model(self, optimizer: OptimizerConfig | None = None) -> SciModel:
        if optimizer is None:
            optimizer = OptimizerConfig(learning_rate=self.config.get("learning_rate", 1e-3))
        return SciModel(self.inputs, self.targets, optimizer=optimizer)

    def training_columns(self) -> dict[str, np.ndarray]:
        names = [self.graph.attrs[v.id] for v in self.inputs]
        return {n: self.samples[n] for n in names}

    def predict(self, samples: SampleSet | None = None) -> dict[str, np.ndarray]:
        samples = self.eval_samples if samples is None else samples
        needed = self.graph.input_names(self.fields.values())
        cols = {n: samples[n] for n in needed}
        values = eval_many(list(self.fields.values()), cols, self.graph.weights)
        return dict(zip(self.fields, values))

    def report(self, samples: SampleSet | None = None) -> dict[str, ErrorReport]:
        """Per-field error reports for every field the reference covers."""
        if self.reference is None:
            return {}
        samples = self.eval_samples if samples is None else samples
        pred = self.predict(samples)
        truth = self.reference(samples)
        return {k: error_report(pred[k], truth[k]) for k in truth}

    def parameter_values(self) -> dict[str, float]:
        return {k: p.value for k, p in self.parameters.items()}
