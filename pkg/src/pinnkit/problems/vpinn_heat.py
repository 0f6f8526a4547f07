"""Weak-form (Petrov-Galerkin) solution of the steady heat equation
Delta T = f on [-1, 1]^2 with a frozen neural test function.

The test space is built in two stages. A network Q is first trained to vanish
on the boundary and to take random values bounded away from zero inside, then
frozen. Multiplying Q by tensor-product Legendre polynomials gives a family of
test functions that all inherit the boundary zeros; the family is finally
orthonormalized in the H^1_0 inner product on the quadrature grid, which makes
the weak-form loss the energy norm of the projected error.
"""

from __future__ import annotations

import numpy as np

from ..data import QuadratureGrid, SampleSet, quadrature_grid, uniform_grid
from ..graph import Expr, Graph, Op, diff, eval_many, sin, tanh
from ..net import Functional, load_weights
from ..train import Data, Integral, OptimizerConfig, SciModel, Zeros
from . import ProblemError, ProblemSpec

DOMAIN = (-1.0, 1.0)


class DegenerateTestFunction(ProblemError):
    pass


def exact_solution(x, y):
    return (0.1 * np.sin(2 * np.pi * x) + np.tanh(10 * x)) * np.sin(2 * np.pi * y)


def heat_source(x, y):
    """Source term, equal to the Laplacian of :func:`exact_solution`."""
    pi = np.pi
    th = np.tanh(10 * x)
    return (np.sin(2 * pi * y) * (20 * th * (10 * th ** 2 - 10) - 2 * pi ** 2 * np.sin(2 * pi * x) / 5)
            - 4 * pi ** 2 * np.sin(2 * pi * y) * (th + np.sin(2 * pi * x) / 10))


def legendre(v: Expr, n: int) -> list[Expr]:
    """P_0 .. P_{n-1} of the expression ``v`` by the three-term recurrence."""
    g = v.graph
    out = [g.const(1.0), v]
    for m in range(1, n - 1):
        out.append(((2 * m + 1) * v * out[m] - m * out[m - 1]) / (m + 1))
    return out[:n]


def pretrain_test_function(q_net: Functional, grid: QuadratureGrid, *, epochs: int = 4000,
                           learning_rate: float = 1e-2, seed: int = 0,
                           low: float = 0.2, high: float = 1.0, boundary_weight: float = 100.0):
    """Fit ``q_net`` to 0 on the boundary points and to uniform random values in
    [low, high] at the interior points, then freeze it.

    The two point sets are separate targets, and the boundary one is weighted
    up: any leftover boundary value of Q leaks a flux term into the weak form.
    The learning rate decays tenfold over the run. Returns the training history.
    """
    q = q_net.output
    x, y = q_net.inputs
    rng = np.random.default_rng(seed)
    bnd, inner = grid.boundary_ids, grid.interior_ids
    model = SciModel([x, y], [Data(q, np.zeros(len(bnd)), ids=bnd, weight=boundary_weight,
                                   name="boundary"),
                              Data(q, rng.uniform(low, high, len(inner)), ids=inner,
                                   name="interior")],
                     optimizer=OptimizerConfig(learning_rate=learning_rate, decay_rate=0.1,
                                               decay_steps=max(epochs, 1)))
    history = model.train({"x": grid["x"], "y": grid["y"]}, epochs=epochs)
    q_net.set_trainable(False)
    return history


def check_test_function(q_net: Functional, grid: QuadratureGrid, tol: float = 1e-3) -> dict:
    """Interior RMS and boundary max of the frozen test function."""
    qv = eval_many([q_net.output], {"x": grid["x"], "y": grid["y"]})[0]
    rms = float(np.sqrt(np.mean(qv[grid.interior_ids] ** 2)))
    bmax = float(np.max(np.abs(qv[grid.boundary_ids])))
    if not rms >= tol:
        raise DegenerateTestFunction(f"test function interior RMS {rms:.3e} < {tol:.0e}")
    return {"interior_rms": rms, "boundary_max": bmax}


def test_space(q: Expr, x: Expr, y: Expr, grid: QuadratureGrid, degree=(40, 12),
               orthonormalize: bool = True) -> Expr:
    """Vector expression of test functions q * P_i(x) * P_j(y).

    With ``orthonormalize`` the family is recombined by a frozen matrix so
    its H^1_0 Gram matrix on ``grid`` is the identity.
    """
    g = q.graph
    px, py = legendre(x, degree[0]), legendre(y, degree[1])
    family = q * g.concat([a * b for b in py for a in px])
    if not orthonormalize:
        return family
    cols = {"x": grid["x"], "y": grid["y"]}
    gx, gy = eval_many([diff(family, x), diff(family, y)], cols)
    w = grid.weights[:, None]
    gram = (gx * w).T @ gx + (gy * w).T @ gy
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise DegenerateTestFunction("test functions are linearly dependent on the grid") from None
    name = "vpinn/test_basis"
    k = gram.shape[0]
    basis = np.linalg.solve(chol, np.eye(k))
    if name in g.weights:
        g.weights[name] = basis
    else:
        g.weights.add(name, basis, trainable=False)
    return g.apply(Op.LINEAR, [family, g.weight(name, basis.shape)])


def weak_form_integrand(q: Expr, t: Expr, x: Expr, y: Expr, vol: Expr, fxy: Expr) -> Expr:
    """Per-point integrand (grad Q . grad T + Q f) * vol."""
    return (diff(q, x) * diff(t, x) + diff(q, y) * diff(t, y) + q * fxy) * vol


def vpinn_heat_problem(n_quad: int = 70, *, layers=(20,) * 4, activation: str = "tanh",
                       test_layers=(20,) * 4, test_activation: str = "sigmoid",
                       degree=(40, 12), mode: str = "integral", orthonormalize: bool = True,
                       seed: int = 0, test_epochs: int = 4000, test_learning_rate: float = 1e-2,
                       epochs: int = 4000, learning_rate: float = 1e-3,
                       n_eval: int = 101, test_weights=None) -> ProblemSpec:
    """Build the weak-form problem; trains and freezes the test network first.

    With ``test_weights`` (a saved weights file holding the ``Q`` network) the
    test network is loaded instead of trained.

    ``mode`` is ``integral`` (squared quadrature sum per test function) or
    ``pointwise`` (mean square of the per-point integrand).
    """
    if n_quad < 10:
        raise ProblemError("n_quad must be at least 10")
    if mode not in ("integral", "pointwise"):
        raise ProblemError(f"unknown mode {mode!r}; use 'integral' or 'pointwise'")
    grid = quadrature_grid(DOMAIN, DOMAIN, n_quad)
    g = Graph()
    x, y = g.variable("x"), g.variable("y")
    vol, fxy = g.variable("vol"), g.variable("fxy")
    q_net = Functional("Q", [x, y], test_layers, test_activation, seed=seed + 1, store=g.weights)
    if test_weights is None:
        q_hist = pretrain_test_function(q_net, grid, epochs=test_epochs,
                                        learning_rate=test_learning_rate, seed=seed)
        q_loss = q_hist.loss[-1] if len(q_hist) else float("nan")
    else:
        load_weights(q_net, test_weights)
        q_net.set_trainable(False)
        q_loss = float("nan")
    q_info = check_test_function(q_net, grid)
    q_info["final_loss"] = q_loss
    tests = test_space(q_net.output, x, y, grid, degree, orthonormalize)

    t_net = Functional("T", [x, y], layers, activation, seed=seed, store=g.weights)
    t = t_net.output
    J = weak_form_integrand(tests, t, x, y, vol, fxy)
    bnd = grid.boundary_ids
    bc_values = exact_solution(grid["x"][bnd], grid["y"][bnd])
    weak = Integral(J, name="weak_form") if mode == "integral" else Zeros(J, name="weak_form")
    targets = [weak, Data(t, bc_values, ids=bnd, name="boundary")]
    samples = QuadratureGrid(dict(grid.columns, fxy=heat_source(grid["x"], grid["y"])),
                             dict(grid.id_sets))

    def reference(s: SampleSet):
        return {"T": exact_solution(s["x"], s["y"])}

    config = {
        "problem": "vpinn-heat", "n_quad": n_quad, "layers": list(layers),
        "activation": activation, "test_layers": list(test_layers),
        "test_activation": test_activation, "degree": list(degree), "mode": mode,
        "orthonormalize": orthonormalize, "seed": seed, "test_epochs": test_epochs,
        "test_learning_rate": test_learning_rate, "epochs": epochs,
        "learning_rate": learning_rate, "n_eval": n_eval, "batch_size": None,
        "test_function": q_info,
    }
    return ProblemSpec("vpinn-heat", g, [x, y, vol, fxy], targets, samples, {"T": t},
                       networks={"T": t_net, "Q": q_net},
                       eval_samples=uniform_grid(DOMAIN, DOMAIN, n_eval, n_eval),
                       reference=reference, config=config, extras={"test_space": tests})


def _exact_expr(x: Expr, y: Expr) -> Expr:
    return (0.1 * sin(2 * np.pi * x) + tanh(10.0 * x)) * sin(2 * np.pi * y)


def exact_injection_sums(problem: ProblemSpec) -> np.ndarray:
    """Quadrature sum of the weak-form integrand for every test function of
    ``problem``, with the trial network replaced by the exact solution."""
    x, y, vol, fxy = problem.inputs
    J = weak_form_integrand(problem.extras["test_space"], _exact_expr(x, y), x, y, vol, fxy)
    return eval_many([J], problem.training_columns())[0].sum(axis=0)


def exact_weak_form_sum(n_quad: int = 70, test=None) -> float:
    """Quadrature sum of the integrand with T replaced by the exact solution.

    ``test`` is a callable (graph, x, y) -> expression for the test function;
    the default is the bubble (1 - x^2)(1 - y^2). Only quadrature error remains.
    """
    grid = quadrature_grid(DOMAIN, DOMAIN, n_quad)
    g = Graph()
    x, y = g.variable("x"), g.variable("y")
    vol, fxy = g.variable("vol"), g.variable("fxy")
    t = _exact_expr(x, y)
    q = (1.0 - x * x) * (1.0 - y * y) if test is None else test(g, x, y)
    J = weak_form_integrand(q, t, x, y, vol, fxy)
    cols = {"x": grid["x"], "y": grid["y"], "vol": grid["vol"],
            "fxy": heat_source(grid["x"], grid["y"])}
    return float(np.sum(eval_many([J], cols)[0]))
