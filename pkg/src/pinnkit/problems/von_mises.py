"""Plane-strain von Mises (perfect) plasticity residuals.

Stresses are in MPa and lengths in mm, so the material constants below are
the usual GPa values times 1000.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from ..data import MissingColumn, SampleSet
from ..graph import Expr, diff, relu, sqrt
from ..net import Functional, Parameter
from ..train import Data, Tie, Zeros
from . import ProblemSpec

LAMBDA = 19440.0  # MPa
MU = 29170.0  # MPa
SIGMA_Y = 243.0  # MPa

FIELD_NAMES = ("ux", "uy", "sxx", "syy", "szz", "sxy")


def _expr(v):
    if isinstance(v, Functional):
        return v.output
    if isinstance(v, Parameter):
        return v.expr
    return v


class ElastoplasticState:
    """Derived kinematic and constitutive expressions of a 2D plane-strain state.

    ``fields`` maps ux, uy, sxx, syy, szz, sxy to expressions (or single-output
    Functionals) over the variables ``x`` and ``y``. Material constants may be
    floats, expressions or Parameters.
    """

    def __init__(self, x: Expr, y: Expr, fields: Mapping, lamb=LAMBDA, mu=MU, sigma_y=SIGMA_Y):
        missing = [k for k in FIELD_NAMES if k not in fields]
        if missing:
            raise KeyError(f"missing fields {missing}")
        self.x, self.y = x, y
        ux, uy, sxx, syy, szz, sxy = (_expr(fields[k]) for k in FIELD_NAMES)
        self.ux, self.uy = ux, uy
        self.sxx, self.syy, self.szz, self.sxy = sxx, syy, szz, sxy
        self.lamb, self.mu, self.sigma_y = _expr(lamb), _expr(mu), _expr(sigma_y)
        self.kappa = self.lamb + 2.0 * self.mu / 3.0

        # total strains; plane strain means Ezz = 0
        self.Exx = diff(ux, x)
        self.Eyy = diff(uy, y)
        self.Exy = (diff(ux, y) + diff(uy, x)) / 2.0
        self.Evol = self.Exx + self.Eyy
        # deviatoric strains
        self.exx = self.Exx - self.Evol / 3.0
        self.eyy = self.Eyy - self.Evol / 3.0
        self.ezz = -self.Evol / 3.0
        self.exy = self.Exy
        self.ebar = sqrt(2.0 / 3.0 * (self.exx ** 2 + self.eyy ** 2 + self.ezz ** 2
                                      + 2.0 * self.exy ** 2))
        # pressure and deviatoric stresses
        self.prs = -(sxx + syy + szz) / 3.0
        self.dxx = sxx + self.prs
        self.dyy = syy + self.prs
        self.dzz = szz + self.prs
        self.dxy = sxy
        self.q = sqrt(1.5 * (self.dxx ** 2 + self.dyy ** 2 + self.dzz ** 2 + 2.0 * sxy ** 2))
        # associative flow: plastic strains along the deviatoric stress
        self.pebar = relu(self.ebar - self.sigma_y / (3.0 * self.mu))
        self.pexx = 1.5 * self.pebar * self.dxx / self.q
        self.peyy = 1.5 * self.pebar * self.dyy / self.q
        self.pezz = 1.5 * self.pebar * self.dzz / self.q
        self.pexy = 1.5 * self.pebar * self.dxy / self.q
        self.F = self.q - self.sigma_y

    def deviatoric_traces(self) -> tuple[Expr, Expr]:
        return self.exx + self.eyy + self.ezz, self.dxx + self.dyy + self.dzz


def von_mises_residuals(state: ElastoplasticState) -> list:
    """Targets L1-L8: pressure tie, four deviatoric stress ties, the yield
    penalty and the two momentum balances without body force."""
    s = state
    two_mu = 2.0 * s.mu
    return [
        Tie(s.prs, -s.kappa * s.Evol, name="L1"),
        Tie(s.dxx, two_mu * (s.exx - s.pexx), name="L2"),
        Tie(s.dyy, two_mu * (s.eyy - s.peyy), name="L3"),
        Tie(s.dzz, two_mu * (s.ezz - s.pezz), name="L4"),
        Tie(s.dxy, two_mu * (s.exy - s.pexy), name="L5"),
        Zeros(relu(s.F), name="L6"),
        Zeros(diff(s.sxx, s.x) + diff(s.sxy, s.y), name="L7"),
        Zeros(diff(s.sxy, s.x) + diff(s.syy, s.y), name="L8"),
    ]


def hooke_stresses(exx, eyy, exy, lamb=LAMBDA, mu=MU):
    """Plane-strain linear-elastic stresses (sxx, syy, szz, sxy) from strains.

    Works on numbers, arrays or graph expressions alike.
    """
    ev = exx + eyy
    return (lamb * ev + 2.0 * mu * exx, lamb * ev + 2.0 * mu * eyy, lamb * ev, 2.0 * mu * exy)


def harmonic_elastic_fields(x: Expr, y: Expr, c: float = 1e-6, mu=MU) -> dict:
    """Displacement u = grad(c (x^3 - 3 x y^2)) and its Hooke stresses.

    The potential is harmonic, so the strain is traceless and the stress is
    divergence free: an exact elastic equilibrium state with linearly varying
    stress.
    """
    ux = c * (3.0 * x * x - 3.0 * y * y)
    uy = c * (-6.0 * x * y)
    sxx = 2.0 * mu * (6.0 * c) * x
    syy = -2.0 * mu * (6.0 * c) * x
    sxy = -2.0 * mu * (6.0 * c) * y
    return {"ux": ux, "uy": uy, "sxx": sxx, "syy": syy, "szz": 0.0 * x, "sxy": sxy}


def von_mises_problem(dataset: SampleSet, *, layers=(50,) * 4, activation: str = "tanh",
                      seed: int = 0, initial=(1.0, 1.0, 1.0), epochs: int = 1000,
                      batch_size: int | None = None, learning_rate: float = 1e-3) -> ProblemSpec:
    """Inversion for (lambda, mu, sigma_Y) from measured fields.

    ``dataset`` needs columns x, y and any subset of ux, uy, sxx, syy, szz,
    sxy; every field present becomes a data target.
    """
    from ..graph import Graph

    for name in ("x", "y"):
        if name not in dataset:
            raise MissingColumn(f"dataset has no column {name!r}")
    g = Graph()
    x, y = g.variable("x"), g.variable("y")
    nets = {k: Functional(k, [x, y], layers, activation, seed=seed + i, store=g.weights)
            for i, k in enumerate(FIELD_NAMES)}
    params = {k: Parameter(v, k, graph=g) for k, v in zip(("lamb", "mu", "sigma_y"), initial)}
    state = ElastoplasticState(x, y, nets, params["lamb"], params["mu"], params["sigma_y"])
    targets = [Data(nets[k].output, dataset[k], name=k) for k in FIELD_NAMES if k in dataset]
    targets += von_mises_residuals(state)
    config = {"problem": "vonmises", "layers": list(layers), "activation": activation,
              "seed": seed, "epochs": epochs, "batch_size": batch_size,
              "learning_rate": learning_rate, "initial": list(initial)}
    fields = {k: n.output for k, n in nets.items()}
    fields["pebar"] = state.pebar

    def reference(s: SampleSet):
        return {k: s[k] for k in FIELD_NAMES if k in s}

    return ProblemSpec("vonmises", g, [x, y], targets, dataset, fields, networks=nets,
                       parameters=params, eval_samples=dataset, reference=reference,
                       config=config)


def random_elastic_states(n: int, seed: int = 0, lamb=LAMBDA, mu=MU, sigma_y=SIGMA_Y,
                          margin: float = 0.999):
    """``n`` random homogeneous elastic strain states with q < sigma_Y.

    Returns columns exx, eyy, exy (total strains) scaled so that every state
    lies strictly inside the yield surface.
    """
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(n, 3))
    exx, eyy, exy = E.T
    ev = exx + eyy
    dev = np.sqrt((exx - ev / 3) ** 2 + (eyy - ev / 3) ** 2 + (ev / 3) ** 2 + 2 * exy ** 2)
    q = 2.0 * mu * np.sqrt(1.5) * dev
    scale = margin * rng.uniform(0.0, 1.0, n) * sigma_y / q
    return exx * scale, eyy * scale, exy * scale


def elastic_checks(n_states: int = 10_000, n_points: int = 200, seed: int = 0) -> dict:
    """Residuals of exact elastic states and the plastic gate on random states.

    Returns maxima of |L1|..|L8| over the harmonic field at random points of a
    200 x 360 mm plate and over a uniform plane-strain extension, the largest
    equivalent plastic strain over ``n_states`` random states inside the
    yield surface, and the largest deviatoric traces.
    """
    from ..graph import Graph, eval_many

    rng = np.random.default_rng(seed)
    g = Graph()
    x, y = g.variable("x"), g.variable("y")
    pts = {"x": rng.uniform(0.0, 100.0, n_points), "y": rng.uniform(0.0, 180.0, n_points)}

    harmonic = ElastoplasticState(x, y, harmonic_elastic_fields(x, y))
    a, b = 1e-3, 4e-4
    sxx, syy, szz, sxy = hooke_stresses(a, -b, 0.0)
    uniform = ElastoplasticState(x, y, {"ux": a * x, "uy": -b * y, "sxx": g.const(sxx),
                                        "syy": g.const(syy), "szz": g.const(szz),
                                        "sxy": g.const(sxy)})
    out = {}
    for label, state in (("harmonic", harmonic), ("uniform", uniform)):
        targets = von_mises_residuals(state)
        vals = eval_many([t.residual for t in targets] + [state.q], pts)
        out[f"{label}_residuals"] = {t.name: float(np.max(np.abs(v)))
                                     for t, v in zip(targets, vals)}
        out[f"{label}_q_max"] = float(np.max(vals[-1]))

    # homogeneous states: strains are per-sample inputs, displacements linear in x, y
    h = Graph()
    x, y = h.variable("x"), h.variable("y")
    cxx, cyy, cxy = h.variable("exx"), h.variable("eyy"), h.variable("exy")
    sxx, syy, szz, sxy = hooke_stresses(cxx, cyy, cxy)
    state = ElastoplasticState(x, y, {"ux": cxx * x + cxy * y, "uy": cxy * x + cyy * y,
                                      "sxx": sxx, "syy": syy, "szz": szz, "sxy": sxy})
    exx, eyy, exy = random_elastic_states(n_states, seed)
    cols = {"x": rng.uniform(0.0, 100.0, n_states), "y": rng.uniform(0.0, 180.0, n_states),
            "exx": exx, "eyy": eyy, "exy": exy}
    tr_e, tr_s = state.deviatoric_traces()
    q, pebar, te, ts = eval_many([state.q, state.pebar, tr_e, tr_s], cols)
    out["random_states"] = n_states
    out["random_q_max"] = float(q.max())
    out["random_pebar_max"] = float(pebar.max())
    out["strain_trace_max"] = float(np.max(np.abs(te)))
    out["stress_trace_max"] = float(np.max(np.abs(ts)))
    worst = max(max(out["harmonic_residuals"].values()), max(out["uniform_residuals"].values()))
    out["residual_max"] = worst
    out["passed"] = bool(worst < 1e-8 and out["random_pebar_max"] == 0.0
                         and out["strain_trace_max"] <= 1e-12 and out["stress_trace_max"] <= 1e-12
                         and out["random_q_max"] < SIGMA_Y)
    return out
