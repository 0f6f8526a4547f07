"""Acceptance criteria, one test each.

Every test reports through the ``criterion`` fixture, which prints a PASS or
FAIL line per criterion at the end of the session. The long training runs are
marked ``slow``; deselect them with ``-m "not slow"``.
"""

import json
import time

import numpy as np
import pytest

from pinnkit.cli import gradcheck_suite, run
from pinnkit.graph import Graph, diff, eval_many, sin, tanh
from pinnkit.net import Functional, Parameter, load_weights, save_weights
from pinnkit.problems.curve_fit import curve_fit_problem
from pinnkit.problems.von_mises import elastic_checks
from pinnkit.problems.vpinn_heat import exact_weak_form_sum
from pinnkit.train import Data, SciModel


def _metrics(path):
    return json.loads((path / "metrics.json").read_text())


def test_gradient_correctness(criterion):
    start = time.perf_counter()
    result = gradcheck_suite(20)
    elapsed = time.perf_counter() - start
    ok = result["max_relative_error"] < 1e-5 and elapsed < 10.0
    criterion(1, "reverse-mode gradients vs central differences",
              ok, f"max rel err {result['max_relative_error']:.2e} "
                  f"over {result['entries_checked']} entries, {elapsed:.1f} s")


def test_second_derivatives(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    xs = rng.uniform(-2.0, 2.0, 100)
    worst = 0.0
    for _ in range(5):
        a, b = rng.uniform(-2.0, 2.0, 2)
        g = Graph()
        x = g.variable("x")
        exprs = [sin(a * x + b), tanh(a * x + b), sin(tanh(a * x + b)), sin(x) * tanh(a * x + b)]
        got = eval_many([diff(e, x, 2) for e in exprs], {"x": xs})
        u = a * xs + b
        s = np.tanh(u)
        ds, dds = a * (1 - s**2), -2 * a**2 * s * (1 - s**2)
        want = [
            -a**2 * np.sin(u),
            dds,
            -np.sin(s) * ds**2 + np.cos(s) * dds,
            -np.sin(xs) * s + 2 * np.cos(xs) * ds + np.sin(xs) * dds,
        ]
        for g_val, w_val in zip(got, want):
            worst = max(worst, float(np.max(np.abs(g_val - w_val))))
    elapsed = time.perf_counter() - start
    criterion(2, "second derivatives vs closed forms", worst <= 1e-8 and elapsed < 5.0,
              f"max abs err {worst:.2e}, {elapsed:.2f} s")


def _fit(constrained: bool, seed: int) -> tuple[float, float]:
    prob = curve_fit_problem(constrained, seed=seed)
    start = time.perf_counter()
    prob.model().train(prob.training_columns(), epochs=400, batch_size=32, shuffle_seed=seed)
    return prob.report()["f"].relative_L2, time.perf_counter() - start


@pytest.mark.slow
def test_curve_fit(criterion):
    seeds = (0, 1, 2)
    free = [_fit(False, s) for s in seeds]
    tied = [_fit(True, s) for s in seeds]
    free_med = float(np.median([e for e, _ in free]))
    tied_med = float(np.median([e for e, _ in tied]))
    first_err, first_time = free[0]
    ok = first_err < 0.10 and first_time < 120.0 and tied_med <= free_med
    criterion(3, "curve fit, unconstrained and constrained", ok,
              f"seed 0 rel-L2 {first_err:.4f} in {first_time:.1f} s; medians "
              f"unconstrained {free_med:.4f}, constrained {tied_med:.4f}")


@pytest.mark.slow
def test_burgers(criterion, tmp_path):
    start = time.perf_counter()
    code = run(["burgers", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    m = _metrics(tmp_path)
    by_time = m.get("relative_L2_by_time", {})
    crossing = m.get("zero_crossing_t075", float("nan"))
    ok = (code == 0 and len(by_time) == 3 and max(by_time.values()) < 5e-2
          and abs(crossing) <= 0.05 and elapsed < 1800.0)
    detail = ", ".join(f"t={k}: {v:.4f}" for k, v in by_time.items())
    criterion(4, "Burgers", ok, f"{detail}; zero crossing {crossing:+.4f}; {elapsed:.0f} s")


@pytest.mark.slow
def test_navier_stokes_inversion(criterion, tmp_path):
    start = time.perf_counter()
    code = run(["ns-inverse", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    m = _metrics(tmp_path)
    l1, l2, div = m.get("lamb1", np.nan), m.get("lamb2", np.nan), m.get("divergence_max", np.nan)
    ok = (code == 0 and 0.95 <= l1 <= 1.05 and 0.007 <= l2 <= 0.013 and div <= 1e-12
          and elapsed < 1800.0)
    criterion(5, "Navier-Stokes coefficient recovery", ok,
              f"lamb1 {l1:.4f}, lamb2 {l2:.5f}, divergence {div:.1e}, {elapsed:.0f} s")


def test_von_mises_residuals(criterion):
    start = time.perf_counter()
    r = elastic_checks(10_000)
    elapsed = time.perf_counter() - start
    ok = r["passed"] and elapsed < 10.0
    criterion(6, "von Mises residuals on elastic fields", ok,
              f"residual max {r['residual_max']:.1e}, pebar max {r['random_pebar_max']}, "
              f"traces {max(r['strain_trace_max'], r['stress_trace_max']):.1e}, {elapsed:.1f} s")


def _frozen_q(weights_path):
    def build(g, x, y):
        q = Functional("Q", [x, y], [20] * 4, "sigmoid", store=g.weights)
        load_weights(q, weights_path)
        return q.output
    return build


@pytest.mark.slow
def test_vpinn_heat(criterion, tmp_path):
    start = time.perf_counter()
    code = run(["vpinn-heat", "--out", str(tmp_path), "--save-weights"])
    elapsed = time.perf_counter() - start
    m = _metrics(tmp_path)
    rel, rms = m.get("relative_L2", np.nan), m["test_function"]["interior_rms"]

    # Quadrature error of the exact solution: analytic test functions that
    # vanish on the boundary, with the 140 x 140 refinement confirming order 2.
    bubbles = {
        "bubble": None,
        "skewed": lambda g, x, y: (1.0 - x * x) * (1.0 - y * y) * x * y,
    }
    sums = {k: abs(exact_weak_form_sum(70, q)) for k, q in bubbles.items()}
    fine = abs(exact_weak_form_sum(140, bubbles["skewed"]))
    ratio = sums["skewed"] / fine
    # The trained Q: quadrature error is the change under refinement; the
    # remainder is the flux through the boundary where Q is not exactly zero.
    q = _frozen_q(tmp_path / "weights.pfw.json")
    q70, q280 = exact_weak_form_sum(70, q), exact_weak_form_sum(280, q)

    ok = (code == 0 and rel < 5e-2 and rms >= 1e-3 and max(sums.values()) <= 2e-3
          and 3.2 <= ratio <= 4.8 and abs(q70 - q280) <= 2e-3 and elapsed < 1200.0)
    criterion(7, "vPINN heat", ok,
              f"rel-L2 {rel:.4f}, Q interior RMS {rms:.3f}; injection sums "
              f"{max(sums.values()):.1e} (refinement ratio {ratio:.2f}); trained Q: "
              f"sum {q70:.2e}, quadrature part {abs(q70 - q280):.1e}; {elapsed:.0f} s")


def test_persistence(criterion, tmp_path):
    prob = curve_fit_problem(seed=4)
    prob.model().train(prob.training_columns(), epochs=3, batch_size=32, shuffle_seed=4)
    path = tmp_path / "f.pfw.json"
    save_weights(prob.networks["f"], path)
    other = curve_fit_problem(seed=5)
    load_weights(other.networks["f"], path)
    same_eval = np.array_equal(prob.predict()["f"], other.predict()["f"])

    g = Graph()
    x, y = g.variable("x"), g.variable("y")
    net = Functional("g", [x, y], [8, 8], "tanh", seed=3)
    before = net.get_weights()
    net.set_trainable(False)
    cols = {"x": np.linspace(-1, 1, 64), "y": np.linspace(1, -1, 64)}
    offset = Parameter(0.0, "offset", graph=g)  # keeps the optimizer stepping
    model = SciModel([x, y], [Data(net.output + offset.expr, np.sin(cols["x"]))])
    model.train(cols, epochs=100)
    frozen = all(np.array_equal(a, c) and np.array_equal(b, d)
                 for (a, b), (c, d) in zip(before, net.get_weights()))
    ok = same_eval and frozen and model.state.t == 100 and offset.value != 0.0
    criterion(8, "weights round trip and frozen training", ok,
              f"evaluation identical: {same_eval}; frozen weights identical after "
              f"{model.state.t} steps: {frozen}")


def test_determinism(criterion, tmp_path):
    for name in ("a", "b"):
        assert run(["fit", "--epochs", "20", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("history.csv", "prediction.csv")}
    criterion(9, "identical runs give identical files", all(same.values()), str(same))
