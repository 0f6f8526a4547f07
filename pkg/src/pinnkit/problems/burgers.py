"""Viscous Burgers equation u_t + u u_x = nu u_xx on t in [0, 1], x in [-1, 1]."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..data import SampleSet
from ..graph import Graph, diff, sign, sin
from ..graph import eval as eval_expr
from ..net import Functional
from ..train import Data, Zeros
from . import ProblemError, ProblemSpec
from .reference import burgers_fd

NU = 0.01 / np.pi
REPORT_TIMES = (0.25, 0.5, 0.75)


@lru_cache(maxsize=4)
def _fd_solution(times: tuple[float, ...], nu: float, n_cells: int):
    return burgers_fd(times, nu=nu, n_cells=n_cells)


def reference_solution(times=REPORT_TIMES, nu: float = NU, n_cells: int = 4096):
    """Finite-difference reference ``(x, u)`` at ``times`` (cached per process)."""
    x, u = _fd_solution(tuple(float(t) for t in times), float(nu), int(n_cells))
    return x.copy(), u.copy()


def collocation_points(n_interior: int = 8000, n_initial: int = 1000, n_boundary: int = 500,
                       seed: int = 0) -> SampleSet:
    """Random interior points, the initial line t = 0 and both walls x = -1, 1.

    Id subsets: ``initial``, ``left``, ``right`` and ``interior``.
    """
    rng = np.random.default_rng(seed)
    t_in = rng.uniform(0.0, 1.0, n_interior)
    x_in = rng.uniform(-1.0, 1.0, n_interior)
    x_ic = np.linspace(-1.0, 1.0, n_initial)
    t_left = rng.uniform(0.0, 1.0, n_boundary)
    t_right = rng.uniform(0.0, 1.0, n_boundary)
    t = np.concatenate([t_in, np.zeros(n_initial), t_left, t_right])
    x = np.concatenate([x_in, x_ic, np.full(n_boundary, -1.0), np.full(n_boundary, 1.0)])
    a, b, c = n_interior, n_interior + n_initial, n_interior + n_initial + n_boundary
    ids = {"interior": np.arange(a), "initial": np.arange(a, b),
           "left": np.arange(b, c), "right": np.arange(c, c + n_boundary)}
    return SampleSet({"t": t, "x": x}, ids)


def burgers_problem(bc_style: str = "sign_mask", *, layers=(20,) * 8, activation: str = "tanh",
                    seed: int = 0, n_interior: int = 8000, n_initial: int = 1000,
                    n_boundary: int = 500, nu: float = NU, epochs: int = 5000,
                    batch_size: int = 256, learning_rate: float = 1e-3,
                    n_eval_x: int = 257) -> ProblemSpec:
    """PINN for Burgers with either sign-mask or id-based initial/boundary targets."""
    if bc_style not in ("sign_mask", "ids"):
        raise ProblemError(f"unknown bc_style {bc_style!r}; use 'sign_mask' or 'ids'")
    g = Graph()
    t, x = g.variable("t"), g.variable("x")
    net = Functional("u", [t, x], layers, activation, seed=seed, store=g.weights)
    u = net.output
    samples = collocation_points(n_interior, n_initial, n_boundary, seed)
    pde = diff(u, t) + u * diff(u, x) - nu * diff(u, x, 2)
    targets = [Zeros(pde, name="pde")]
    if bc_style == "sign_mask":
        t0, t1 = samples["t"].min(), samples["t"].max()
        tol_t = 1e-6 * (t1 - t0)
        tol_x = 1e-6 * 2.0
        t_min = t0 + tol_t
        x_min, x_max = -1.0 + tol_x, 1.0 - tol_x
        targets += [
            Zeros((1.0 - sign(t - t_min)) * (u + sin(np.pi * x)), name="initial"),
            Zeros((1.0 - sign(x - x_min)) * u, name="left"),
            Zeros((1.0 + sign(x - x_max)) * u, name="right"),
        ]
    else:
        ids = np.concatenate([samples.id_sets["initial"], samples.id_sets["left"],
                              samples.id_sets["right"]])
        values = np.where(samples["t"][ids] == 0.0, -np.sin(np.pi * samples["x"][ids]), 0.0)
        targets.append(Data(u, values, ids=ids, name="ic_bc"))

    # with the default 257 points every x is a node of the reference grid
    xs = np.linspace(-1.0, 1.0, n_eval_x)
    T, X = np.meshgrid(np.asarray(REPORT_TIMES), xs, indexing="ij")
    eval_samples = SampleSet({"t": T.ravel(), "x": X.ravel()})

    def reference(s: SampleSet):
        times = tuple(sorted(set(np.round(s["t"], 12).tolist())))
        xg, ug = reference_solution(times, nu=nu)
        out = np.empty(s.n)
        for k, tk in enumerate(times):
            rows = np.isclose(s["t"], tk, rtol=0, atol=1e-12)
            out[rows] = np.interp(s["x"][rows], xg, ug[k])
        return {"u": out}

    config = {
        "problem": "burgers", "bc_style": bc_style, "layers": list(layers),
        "activation": activation, "seed": seed, "n_interior": n_interior,
        "n_initial": n_initial, "n_boundary": n_boundary, "nu": nu, "epochs": epochs,
        "batch_size": batch_size, "learning_rate": learning_rate, "n_eval_x": n_eval_x,
    }
    return ProblemSpec("burgers", g, [t, x], targets, samples, {"u": u}, networks={"u": net},
                       eval_samples=eval_samples, reference=reference, config=config)


def per_time_errors(problem: ProblemSpec) -> dict[float, float]:
    """Relative L2 error of the trained field at each report time."""
    s = problem.eval_samples
    pred = problem.predict(s)["u"]
    ref = problem.reference(s)["u"]
    out = {}
    for tk in REPORT_TIMES:
        rows = np.isclose(s["t"], tk, rtol=0, atol=1e-12)
        out[tk] = float(np.linalg.norm(pred[rows] - ref[rows]) / np.linalg.norm(ref[rows]))
    return out


def zero_crossing(problem: ProblemSpec, t: float = 0.75, n: int = 2001) -> float:
    """Location of the steepest sign change of u(t, .) on a uniform x grid."""
    xs = np.linspace(-1.0, 1.0, n)[1:-1]
    u = eval_expr(problem.fields["u"], {"t": np.full_like(xs, t), "x": xs})
    s = np.sign(u)
    # a grid value of exactly zero counts as a crossing of its own
    flips = np.nonzero((s[:-1] * s[1:] <= 0) & (u[:-1] != u[1:]))[0]
    if flips.size == 0:
        return float("nan")
    k = flips[np.argmax(np.abs(u[flips] - u[flips + 1]))]
    return float(xs[k] - u[k] * (xs[k + 1] - xs[k]) / (u[k + 1] - u[k]))
