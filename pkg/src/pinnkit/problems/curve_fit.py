"""Fitting f(x, y) = sin(x) sin(y) on [-pi, pi]^2, optionally constrained by
the governing equation f_xx + f_yy + 2 f = 0."""

from __future__ import annotations

import numpy as np

from ..data import SampleSet, uniform_grid
from ..graph import Graph, diff
from ..net import Functional
from ..train import Data, Zeros
from . import ProblemSpec

DOMAIN = (-np.pi, np.pi)


def truth(x, y):
    return np.sin(x) * np.sin(y)


def laplace_residual_exact(x, y):
    """f_xx + f_yy + 2 f for the closed form, written out by hand."""
    f = np.sin(x) * np.sin(y)
    return -np.sin(x) * np.sin(y) - np.sin(x) * np.sin(y) + 2.0 * f


def even_subset_ids(n: int) -> np.ndarray:
    """Ids of the points of an ``n`` x ``n`` grid with even row and column index.

    For n = 101 on a fixed interval this is exactly the 51 x 51 grid.
    """
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    return np.nonzero(((i % 2 == 0) & (j % 2 == 0)).ravel())[0]


def curve_fit_problem(constrained: bool = False, *, layers=(6, 6, 6), activation: str = "tanh",
                      seed: int = 0, n_data: int = 51, n_eval: int = 101,
                      epochs: int = 400, batch_size: int = 32,
                      learning_rate: float = 1e-3) -> ProblemSpec:
    """Surface fit from data on an ``n_data`` grid.

    The constrained variant trains on the ``2 n_data - 1`` grid: data where the
    points coincide with the coarse grid, plus the equation residual on every
    point.
    """
    g = Graph()
    x, y = g.variable("x"), g.variable("y")
    net = Functional("f", [x, y], layers, activation, seed=seed, store=g.weights)
    f = net.output
    eval_samples = uniform_grid(DOMAIN, DOMAIN, n_eval, n_eval)
    if constrained:
        n_fine = 2 * n_data - 1
        samples = uniform_grid(DOMAIN, DOMAIN, n_fine, n_fine)
        ids = even_subset_ids(n_fine)
        samples.id_sets["data"] = ids
        residual = diff(f, x, 2) + diff(f, y, 2) + 2.0 * f
        targets = [Data(f, truth(samples["x"][ids], samples["y"][ids]), ids=ids, name="data"),
                   Zeros(residual, name="pde")]
    else:
        samples = uniform_grid(DOMAIN, DOMAIN, n_data, n_data)
        targets = [Data(f, truth(samples["x"], samples["y"]), name="data")]

    def reference(s: SampleSet):
        return {"f": truth(s["x"], s["y"])}

    config = {
        "problem": "fit", "constrained": constrained, "layers": list(layers),
        "activation": activation, "seed": seed, "n_data": n_data, "n_eval": n_eval,
        "epochs": epochs, "batch_size": batch_size, "learning_rate": learning_rate,
    }
    return ProblemSpec("fit", g, [x, y], targets, samples, {"f": f}, networks={"f": net},
                       eval_samples=eval_samples, reference=reference, config=config)
