"""Identification of the convection and viscosity coefficients of 2D
incompressible Navier-Stokes from velocity samples.

The model is

    u_t + l1 (u u_x + v u_y) = -p_x + l2 (u_xx + u_yy)
    v_t + l1 (u v_x + v v_y) = -p_y + l2 (v_xx + v_yy)

with (u, v) = (psi_y, -psi_x) so the flow is divergence free by construction.
"""

from __future__ import annotations

import numpy as np

from ..data import MissingColumn, SampleSet
from ..graph import Graph, diff
from ..net import Functional, Parameter
from ..train import Data, Zeros
from . import ProblemSpec

# Space-time box used by default for the manufactured data.
X_RANGE = (-np.pi / 2, np.pi / 2)
Y_RANGE = (-np.pi / 2, np.pi / 2)
T_RANGE = (0.0, 10.0)
DEFAULT_DRIFT = (1.0, 0.5)


def taylor_green(t, x, y, nu: float, drift=(0.0, 0.0)):
    """Decaying Taylor-Green vortex carried by a uniform stream ``drift``.

    A Galilean boost of an exact solution is again exact. Without drift the
    convective term is a pure gradient and is absorbed by the pressure, so the
    convection coefficient cannot be identified from velocities alone.
    Returns ``(u, v, p)``.
    """
    t, x, y = (np.asarray(a, dtype=np.float64) for a in (t, x, y))
    a, b = drift
    xi, eta = x - a * t, y - b * t
    decay = np.exp(-2.0 * nu * t)
    u = a - np.cos(xi) * np.sin(eta) * decay
    v = b + np.sin(xi) * np.cos(eta) * decay
    p = -0.25 * (np.cos(2 * xi) + np.cos(2 * eta)) * decay ** 2
    return u, v, p


def taylor_green_dataset(nu: float, n_points: int, t_range=T_RANGE, seed: int = 0,
                         drift=(0.0, 0.0), x_range=X_RANGE, y_range=Y_RANGE) -> SampleSet:
    """Uniform random space-time samples of :func:`taylor_green` with columns
    t, x, y, u, v, p."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*t_range, n_points)
    x = rng.uniform(*x_range, n_points)
    y = rng.uniform(*y_range, n_points)
    u, v, p = taylor_green(t, x, y, nu, drift)
    return SampleSet({"t": t, "x": x, "y": y, "u": u, "v": v, "p": p})


def navier_stokes_residuals(u, v, p, t, x, y, lamb1, lamb2):
    """Momentum residuals (L1, L2) for velocity/pressure expressions."""
    l1 = (diff(u, t) + lamb1 * (u * diff(u, x) + v * diff(u, y))
          + diff(p, x) - lamb2 * (diff(u, x, 2) + diff(u, y, 2)))
    l2 = (diff(v, t) + lamb1 * (u * diff(v, x) + v * diff(v, y))
          + diff(p, y) - lamb2 * (diff(v, x, 2) + diff(v, y, 2)))
    return l1, l2


def ns_inverse_problem(dataset: SampleSet, *, layers=(20,) * 4, activation: str = "tanh",
                       seed: int = 0, epochs: int = 5000, batch_size: int | None = 500,
                       learning_rate: float = 1e-3, nu: float | None = None) -> ProblemSpec:
    """Stream-function PINN with trainable coefficients ``lamb1`` and ``lamb2``
    (both start at 0). ``dataset`` needs columns t, x, y, u, v."""
    for name in ("t", "x", "y", "u", "v"):
        if name not in dataset:
            raise MissingColumn(f"dataset has no column {name!r}")
    g = Graph()
    t, x, y = g.variable("t"), g.variable("x"), g.variable("y")
    p_net = Functional("p", [t, x, y], layers, activation, seed=seed, store=g.weights)
    psi_net = Functional("psi", [t, x, y], layers, activation, seed=seed + 1, store=g.weights)
    p, psi = p_net.output, psi_net.output
    u = diff(psi, y)
    v = -diff(psi, x)
    lamb1 = Parameter(0.0, "lamb1", graph=g)
    lamb2 = Parameter(0.0, "lamb2", graph=g)
    l1, l2 = navier_stokes_residuals(u, v, p, t, x, y, lamb1.expr, lamb2.expr)
    targets = [Zeros(l1, name="momentum_x"), Zeros(l2, name="momentum_y"),
               Data(u, dataset["u"], name="u"), Data(v, dataset["v"], name="v")]

    def reference(s: SampleSet):
        return {k: s[k] for k in ("u", "v") if k in s}

    config = {
        "problem": "ns-inverse", "layers": list(layers), "activation": activation,
        "seed": seed, "n_points": dataset.n, "epochs": epochs, "batch_size": batch_size,
        "learning_rate": learning_rate, "nu": nu,
    }
    return ProblemSpec("ns-inverse", g, [t, x, y], targets, dataset,
                       {"u": u, "v": v, "p": p, "divergence": diff(u, x) + diff(v, y)},
                       networks={"p": p_net, "psi": psi_net},
                       parameters={"lamb1": lamb1, "lamb2": lamb2},
                       eval_samples=dataset, reference=reference, config=config)
