"""Dense networks over a differentiable expression graph, with physics-informed
training targets and a set of PDE case studies."""

from .data import (QuadratureGrid, SampleSet, boundary_ids, interior_ids, load_csv,
                   quadrature_grid, save_csv, save_grid_csv, uniform_grid)
from .graph import (Expr, Graph, Op, WeightStore, abs_, apply, cos, debug_mode, diff, eval,
                    eval_many, exp, log, new_variable, relu, sigmoid, sign, sin, sqrt, tanh,
                    weight_gradients)
from .net import (Functional, Parameter, compose, functional, get_weights, load_weights,
                  parameter, residual_block, save_weights, set_trainable, set_weights)
from .train import (Data, Integral, OptimizerConfig, SciModel, Tie, TrainHistory, Zeros,
                    build_model, train)

__version__ = "0.1.0"

__all__ = [
    "Data", "Expr", "Functional", "Graph", "Integral", "Op", "OptimizerConfig", "Parameter",
    "QuadratureGrid", "SampleSet", "SciModel", "Tie", "TrainHistory", "WeightStore", "Zeros",
    "abs_", "apply", "boundary_ids", "build_model", "compose", "cos", "debug_mode", "diff",
    "eval", "eval_many", "exp", "functional", "get_weights", "interior_ids", "load_csv",
    "load_weights", "log", "new_variable", "parameter", "quadrature_grid", "relu",
    "residual_block", "save_csv", "save_grid_csv", "save_weights", "set_trainable",
    "set_weights", "sigmoid", "sign", "sin", "sqrt", "tanh", "train", "uniform_grid",
    "weight_gradients",
]
