"""Command-line entry point: run a case study and export its artifacts.

Every run writes to ``--out``:

    manifest.json      resolved configuration
    history.csv        per-epoch losses (deterministic; no timings)
    timing.csv         per-epoch wall-clock seconds
    prediction.csv     evaluation inputs, predicted fields, absolute errors
    metrics.json       relative_L2, L_inf, final_loss, identified parameters
    weights.pfw.json   with --save-weights
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, SampleSet, load_csv, save_grid_csv
from .graph import Graph, GraphError, Op, diff, eval_many, weight_gradients
from .net import ACTIVATIONS, Functional, load_weights, save_weights
from .train import NonFiniteLoss, OptimizerConfig, TrainHistory

log = logging.getLogger("pinnkit")

EXIT_OK, EXIT_USAGE, EXIT_NONFINITE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_layers(text: str) -> list[int]:
    """``20x8`` means 8 hidden layers of width 20; ``6,6,6`` lists widths."""
    try:
        if "x" in text:
            width, count = text.lower().split("x")
            layers = [int(width)] * int(count)
        else:
            layers = [int(w) for w in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer spec {text!r}; use WIDTHxCOUNT") from None
    if not layers or min(layers) < 1:
        raise argparse.ArgumentTypeError(f"bad layer spec {text!r}")
    return layers


def parse_pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def parse_degree(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NXxNY, got {text!r}") from None
    return a, b


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pinnkit", description="Physics-informed network case studies.")
    p.add_argument("--version", action="version", version=f"pinnkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, layers, epochs, batch_size, activation="tanh"):
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        sp.add_argument("--layers", type=parse_layers, default=layers, help="e.g. 20x8")
        sp.add_argument("--activation", choices=sorted(ACTIVATIONS), default=activation)
        sp.add_argument("--epochs", type=int, default=epochs)
        sp.add_argument("--batch-size", type=int, default=batch_size,
                        help="0 means full batch")
        sp.add_argument("--lr", type=float, default=1e-3)
        sp.add_argument("--lr-decay", type=float, default=None,
                        help="exponential decay factor reached after all epochs")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--save-weights", action="store_true")
        sp.add_argument("--load-weights", type=Path, default=None,
                        help="start from saved weights (use --epochs 0 to only evaluate)")
        sp.add_argument("--log-every", type=int, default=0)

    sp = sub.add_parser("fit", help="curve fit of sin(x) sin(y)")
    common(sp, [6, 6, 6], 400, 32)
    sp.add_argument("--constrained", action="store_true")
    sp.add_argument("--eval-grid", type=int, default=101)

    sp = sub.add_parser("burgers", help="viscous Burgers equation")
    common(sp, [20] * 8, 5000, 256)
    sp.add_argument("--bc-style", choices=["sign_mask", "ids"], default="sign_mask")
    sp.add_argument("--points", type=int, default=10_000,
                    help="collocation points (80%% interior, 10%% initial, 5%% per wall)")
    sp.add_argument("--eval-grid", type=int, default=257)
    # without decay the shock keeps the loss jumping and the error stalls near 0.25
    sp.set_defaults(lr_decay=0.01)

    sp = sub.add_parser("ns-inverse", help="Navier-Stokes coefficient identification")
    # four layers and batches of 500: twice the updates of full batch in half the time
    common(sp, [20] * 4, 5000, 500)
    sp.add_argument("--nu", type=float, default=0.01)
    sp.add_argument("--points", type=int, default=5000)
    sp.add_argument("--drift", type=parse_pair, default=(1.0, 0.5),
                    help="uniform stream carrying the vortex, e.g. 1.0,0.5")
    sp.add_argument("--dataset", type=Path, default=None,
                    help="CSV with columns t,x,y,u,v instead of generated data")

    sp = sub.add_parser("vpinn-heat", help="weak-form heat equation")
    common(sp, [20] * 4, 4000, 0)
    sp.add_argument("--n-quad", type=int, default=70)
    sp.add_argument("--mode", choices=["integral", "pointwise"], default="integral")
    sp.add_argument("--degree", type=parse_degree, default=(40, 12),
                    help="Legendre degrees multiplying the test network, e.g. 40x12")
    sp.add_argument("--test-layers", type=parse_layers, default=[20] * 4)
    sp.add_argument("--test-epochs", type=int, default=4000)
    sp.add_argument("--eval-grid", type=int, default=101)

    sp = sub.add_parser("vonmises-check", help="elastic-regime residual checks")
    sp.add_argument("--out", type=Path, default=None)
    sp.add_argument("--states", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("gradcheck", help="finite-difference check of weight gradients")
    sp.add_argument("--out", type=Path, default=None)
    sp.add_argument("--configs", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    return p


# -- output helpers ---------------------------------------------------------


def _json_text(obj, indent: int = 0) -> str:
    """JSON with every float printed to 17 significant digits (non-finite as null)."""
    pad = " " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_text(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json_text(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    return json.dumps(str(obj))


def write_json(path: Path, obj) -> None:
    path.write_text(_json_text(obj) + "\n")


def write_timing(path: Path, history: TrainHistory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "seconds"])
        for i, s in enumerate(history.seconds, start=1):
            w.writerow([i, repr(float(s))])


def _optimizer(args) -> OptimizerConfig:
    if args.lr_decay is None:
        return OptimizerConfig(learning_rate=args.lr)
    return OptimizerConfig(learning_rate=args.lr, decay_rate=args.lr_decay,
                           decay_steps=max(1, args.steps_hint))


# -- problem runners --------------------------------------------------------


def _make_problem(args):
    cmd = args.command
    if cmd == "fit":
        from .problems.curve_fit import curve_fit_problem
        return curve_fit_problem(args.constrained, layers=args.layers, activation=args.activation,
                                 seed=args.seed, n_eval=args.eval_grid, epochs=args.epochs,
                                 batch_size=args.batch_size, learning_rate=args.lr)
    if cmd == "burgers":
        from .problems.burgers import burgers_problem
        n = args.points
        n_init, n_wall = n // 10, n // 20
        return burgers_problem(args.bc_style, layers=args.layers, activation=args.activation,
                               seed=args.seed, n_interior=n - n_init - 2 * n_wall,
                               n_initial=n_init, n_boundary=n_wall, epochs=args.epochs,
                               batch_size=args.batch_size, learning_rate=args.lr,
                               n_eval_x=args.eval_grid)
    if cmd == "ns-inverse":
        from .problems.ns_inverse import ns_inverse_problem, taylor_green_dataset
        if args.dataset is not None:
            data = load_csv(args.dataset)
        else:
            data = taylor_green_dataset(args.nu, args.points, seed=args.seed, drift=args.drift)
        prob = ns_inverse_problem(data, layers=args.layers, activation=args.activation,
                                  seed=args.seed, epochs=args.epochs,
                                  batch_size=args.batch_size or None, learning_rate=args.lr,
                                  nu=args.nu)
        prob.config.update({"drift": list(args.drift), "dataset": str(args.dataset or "")})
        return prob
    if cmd == "vpinn-heat":
        from .problems.vpinn_heat import vpinn_heat_problem
        return vpinn_heat_problem(args.n_quad, layers=args.layers, activation=args.activation,
                                  test_layers=args.test_layers, degree=args.degree,
                                  mode=args.mode, seed=args.seed, test_epochs=args.test_epochs,
                                  epochs=args.epochs, learning_rate=args.lr,
                                  n_eval=args.eval_grid, test_weights=args.load_weights)
    raise UsageError(f"unknown command {cmd!r}")


def _metrics(prob) -> dict:
    out = {}
    reports = prob.report()
    if reports:
        pred = prob.predict()
        truth = prob.reference(prob.eval_samples)
        from .problems import error_report
        joint = error_report({k: pred[k] for k in truth}, truth)
        out["relative_L2"] = joint.relative_L2
        out["L_inf"] = joint.L_inf
        if len(reports) > 1:
            out["fields"] = {k: {"relative_L2": r.relative_L2, "L_inf": r.L_inf}
                             for k, r in reports.items()}
    # full-sample loss at the final weights, so an evaluation-only rerun agrees
    model = prob.model()
    total, comps = model.losses(prob.samples)
    out["final_loss"] = total
    out["final_target_losses"] = dict(zip(model.target_names, comps))
    out.update(prob.parameter_values())
    if prob.name == "burgers":
        from .problems.burgers import per_time_errors, zero_crossing
        out["relative_L2_by_time"] = {str(k): v for k, v in per_time_errors(prob).items()}
        out["zero_crossing_t075"] = zero_crossing(prob)
    if prob.name == "ns-inverse":
        div = prob.predict()["divergence"]
        out["divergence_max"] = float(np.max(np.abs(div)))
    if prob.name == "vpinn-heat":
        out["test_function"] = prob.config["test_function"]
    return out


def _prediction_table(prob) -> tuple[SampleSet, dict, dict]:
    samples = prob.eval_samples
    pred = prob.predict(samples)
    pred.pop("divergence", None)
    truth = prob.reference(samples) if prob.reference else {}
    names = [prob.graph.attrs[v.id] for v in prob.inputs]
    inputs = SampleSet({k: samples[k] for k in names if k in samples})
    return inputs, pred, {k: v for k, v in truth.items() if k in pred}


def run_problem(args, out: Path) -> int:
    args.steps_hint = 0
    prob = _make_problem(args)
    members = list(prob.networks.values()) + list(prob.parameters.values())
    if args.load_weights is not None:
        load_weights(members, args.load_weights)
    model = prob.model()
    n = prob.samples.n
    batch = None if not args.batch_size or args.batch_size >= n else args.batch_size
    steps = args.epochs * (1 if batch is None else math.ceil(n / batch))
    args.steps_hint = steps
    model.optimizer = _optimizer(args)
    manifest = {
        "command": args.command,
        "version": __version__,
        "argv": args.argv,
        "config": prob.config,
        "training": {"epochs": args.epochs, "batch_size": batch or n, "learning_rate": args.lr,
                     "lr_decay": args.lr_decay, "shuffle_seed": args.seed,
                     "optimizer": "adam", "samples": n},
        "load_weights": str(args.load_weights) if args.load_weights else None,
    }
    write_json(out / "manifest.json", manifest)
    cols = prob.training_columns()
    start = time.perf_counter()
    status = EXIT_OK
    history = TrainHistory(model.target_names)
    try:
        if args.epochs > 0:
            history = model.train(cols, epochs=args.epochs, batch_size=batch,
                                  shuffle_seed=args.seed, log_every=args.log_every)
    except NonFiniteLoss as exc:
        history = exc.history
        status = EXIT_NONFINITE
        print(f"pinnkit: non-finite loss at epoch {exc.epoch}", file=sys.stderr)
    elapsed = time.perf_counter() - start
    history.to_csv(out / "history.csv", include_seconds=False)
    write_timing(out / "timing.csv", history)
    if status != EXIT_OK:
        write_json(out / "metrics.json", {"status": "non-finite loss",
                                          "epochs_completed": len(history)})
        return status
    metrics = _metrics(prob)
    write_json(out / "metrics.json", metrics)
    inputs, pred, truth = _prediction_table(prob)
    save_grid_csv(out / "prediction.csv", inputs, pred, truth)
    if args.save_weights:
        save_weights(members, out / "weights.pfw.json", name=prob.name)
    summary = ", ".join(f"{k}={v:.6g}" for k, v in metrics.items() if isinstance(v, float))
    print(f"{prob.name}: {summary} ({elapsed:.1f} s training)")
    return EXIT_OK


def run_vonmises_check(args, out: Path) -> int:
    from .problems.von_mises import elastic_checks
    result = elastic_checks(n_states=args.states, seed=args.seed)
    write_json(out / "manifest.json", {"command": args.command, "version": __version__,
                                       "argv": args.argv,
                                       "config": {"states": args.states, "seed": args.seed}})
    write_json(out / "metrics.json", result)
    print(f"vonmises-check: max residual {result['residual_max']:.3e}, "
          f"max plastic strain {result['random_pebar_max']:.3e}, "
          f"passed={result['passed']}")
    return EXIT_OK if result["passed"] else EXIT_USAGE


# -- finite-difference gradient check ---------------------------------------


_UNARY_CASES = {
    # op: (builder of the operand from z, sample range) so the op stays smooth
    Op.NEG: (lambda z: z, (-2, 2)),
    Op.SIN: (lambda z: z, (-2, 2)),
    Op.COS: (lambda z: z, (-2, 2)),
    Op.TANH: (lambda z: z, (-2, 2)),
    Op.SIGMOID: (lambda z: z, (-2, 2)),
    Op.RELU: (lambda z: z, (0.5, 2)),
    Op.SQRT: (lambda z: z * z + 0.5, (-2, 2)),
    Op.SIGN: (lambda z: z, (0.5, 2)),
    Op.ABS: (lambda z: z, (0.5, 2)),
    Op.EXP: (lambda z: z, (-1, 1)),
    Op.LOG: (lambda z: z * z + 0.5, (-2, 2)),
    Op.STEP: (lambda z: z, (0.5, 2)),
}


def _gradcheck_cases(rng: np.random.Generator):
    """Yield (label, loss expression, batch) covering every differentiable op kind."""
    for kind, (operand, lo_hi) in _UNARY_CASES.items():
        g = Graph()
        x = g.variable("x")
        a, b = g.weight("a", (1, 1)), g.weight("b", (1, 1))
        g.weights.add("a", rng.uniform(0.5, 1.5, (1, 1)))
        g.weights.add("b", rng.uniform(-0.5, 0.5, (1, 1)))
        z = a * x + b
        f = g.apply(kind, [operand(z)])
        # the multiplier keeps piecewise-constant ops from having zero gradient
        loss = (f * (a * x + b * b) - 0.3) ** 2
        xs = rng.uniform(*lo_hi, 8)
        yield kind.name, loss, {"x": np.abs(xs) if lo_hi[0] > 0 else xs}
    for kind in (Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.POW):
        g = Graph()
        x = g.variable("x")
        a, b = g.weight("a", (1, 1)), g.weight("b", (1, 1))
        g.weights.add("a", rng.uniform(0.5, 1.5, (1, 1)))
        g.weights.add("b", rng.uniform(0.5, 1.5, (1, 1)))
        lhs = a * x + 1.5 if kind in (Op.DIV, Op.POW) else a * x
        rhs = b * x + 2.0 if kind == Op.DIV else (b if kind == Op.POW else b * x * x)
        f = g.apply(kind, [lhs, rhs])
        loss = (f - 0.7) ** 2
        yield kind.name, loss, {"x": rng.uniform(0.1, 1.0, 8)}
    # two-layer tanh network: AFFINE, LINEAR (through diff), CONCAT and SLICE
    g = Graph()
    x, y = g.variable("x"), g.variable("y")
    net = Functional("net", [x, y], [5, 5], "tanh", fields=["u", "v"],
                     seed=int(rng.integers(1 << 31)))
    u, v = net.split()
    loss = (u - 0.2) ** 2 + (diff(v, x, 2) + diff(u, y)) ** 2
    yield "network", loss, {"x": rng.uniform(-1, 1, 8), "y": rng.uniform(-1, 1, 8)}


def _mean_loss(loss, batch) -> float:
    return float(np.mean(eval_many([loss], batch)[0]))


def gradcheck_suite(n_configs: int = 20, seed: int = 0, h: float = 1e-5) -> dict:
    """Compare reverse-mode gradients with central differences.

    Each configuration draws fresh weights and inputs for every case. The
    error is |g - fd| / max(|g|, |fd|, 1e-6) per weight entry.
    """
    rng = np.random.default_rng(seed)
    worst, worst_case, checked = 0.0, "", 0
    for _ in range(n_configs):
        for label, loss, batch in _gradcheck_cases(rng):
            store = loss.graph.weights
            grads = weight_gradients(loss, batch)
            for name, grad in grads.items():
                w = store[name]
                for idx in np.ndindex(w.shape):
                    orig = w[idx]
                    w[idx] = orig + h
                    fp = _mean_loss(loss, batch)
                    w[idx] = orig - h
                    fm = _mean_loss(loss, batch)
                    w[idx] = orig
                    fd = (fp - fm) / (2 * h)
                    err = abs(grad[idx] - fd) / max(abs(grad[idx]), abs(fd), 1e-6)
                    checked += 1
                    if err > worst:
                        worst, worst_case = err, f"{label}:{name}{list(idx)}"
    return {"max_relative_error": worst, "worst_case": worst_case, "entries_checked": checked,
            "configs": n_configs, "h": h, "passed": worst < 1e-5}


def run_gradcheck(args, out: Path) -> int:
    result = gradcheck_suite(args.configs, args.seed)
    write_json(out / "manifest.json", {"command": args.command, "version": __version__,
                                       "argv": args.argv,
                                       "config": {"configs": args.configs, "seed": args.seed}})
    write_json(out / "metrics.json", result)
    print(f"gradcheck: max relative error {result['max_relative_error']:.3e} "
          f"over {result['entries_checked']} entries ({result['worst_case']})")
    return EXIT_OK if result["passed"] else EXIT_USAGE


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if getattr(args, "epochs", 0) < 0 or (getattr(args, "batch_size", 0) or 0) < 0:
        print("pinnkit: --epochs and --batch-size must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or Path("runs") / args.command
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"pinnkit: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if args.command == "vonmises-check":
        return run_vonmises_check(args, out)
    if args.command == "gradcheck":
        return run_gradcheck(args, out)
    from .problems import ProblemError
    try:
        return run_problem(args, out)
    except (UsageError, DataError, GraphError, ProblemError, OSError) as exc:
        print(f"pinnkit: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
