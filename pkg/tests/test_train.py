import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinnkit.graph import Graph, diff
from pinnkit.graph import eval as ev
from pinnkit.net import Functional, Parameter
from pinnkit.train import (AdamState, BatchLargerThanDataset, Data, EmptyTargets, Integral,
                           InvalidTarget, NonFiniteLoss, OptimizerConfig, SciModel, Tie,
                           UnboundVariableInTarget, Zeros, adam_step, build_model, loss_reduce,
                           train)


def xy():
    g = Graph()
    return g, g.variable("x"), g.variable("y")


# -- loss reduction --------------------------------------------------------------


def test_mse_hand_values():
    assert loss_reduce("mse", [1.0, -1.0]) == 1.0
    assert loss_reduce("mae", [3.0]) == 3.0
    assert loss_reduce("mse", [2.0, 4.0, 6.0], mask=[0, 2]) == 20.0


def test_empty_mask_contributes_zero():
    assert loss_reduce("mse", [1.0, 2.0], mask=[]) == 0.0


def test_unknown_loss_kind():
    with pytest.raises(ValueError):
        loss_reduce("huber", [1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_mse_dominates_squared_mae(r):
    # Jensen: mean(r^2) >= mean(|r|)^2
    assert loss_reduce("mse", r) >= loss_reduce("mae", r) ** 2 * (1 - 1e-12)


# -- Adam ------------------------------------------------------------------------


def test_first_adam_step_is_minus_lr():
    w = {"w": np.array([0.5])}
    adam_step(w, {"w": np.array([1.0])}, AdamState(), OptimizerConfig())
    assert abs(w["w"][0] - (0.5 - 0.001)) < 1e-10


def test_adam_zero_gradient_keeps_weights_and_decays_moments():
    w = {"w": np.array([2.0])}
    state = AdamState()
    cfg = OptimizerConfig()
    adam_step(w, {"w": np.array([1.0])}, state, cfg)
    after_one = w["w"].copy()
    m1, v1 = state.m["w"].copy(), state.v["w"].copy()
    adam_step(w, {"w": np.array([0.0])}, state, OptimizerConfig(learning_rate=1e-12))
    # a step is still taken from momentum; with a negligible lr the weight barely moves
    assert abs(w["w"][0] - after_one[0]) < 1e-11
    assert state.m["w"][0] == pytest.approx(0.9 * m1[0])
    assert state.v["w"][0] == pytest.approx(0.999 * v1[0])


def test_adam_fresh_zero_gradient_is_noop():
    w = {"w": np.array([2.0, -1.0])}
    adam_step(w, {"w": np.zeros(2)}, AdamState(), OptimizerConfig())
    np.testing.assert_array_equal(w["w"], [2.0, -1.0])


def test_adam_matches_textbook_formula():
    rng = np.random.default_rng(0)
    cfg = OptimizerConfig(learning_rate=0.01)
    w = {"w": rng.normal(size=3)}
    ref = w["w"].copy()
    m = np.zeros(3)
    v = np.zeros(3)
    state = AdamState()
    for t in range(1, 6):
        g = rng.normal(size=3)
        adam_step(w, {"w": g}, state, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(w["w"], ref, rtol=1e-14)


def test_two_optimizers_bit_identical():
    rng = np.random.default_rng(1)
    grads = [rng.normal(size=4) for _ in range(20)]
    outs = []
    for _ in range(2):
        w, s = {"w": np.ones(4)}, AdamState()
        for g in grads:
            adam_step(w, {"w": g}, s, OptimizerConfig())
        outs.append(w["w"])
    assert np.array_equal(*outs)


def test_exponential_decay_schedule():
    cfg = OptimizerConfig(learning_rate=1e-2, decay_rate=0.1, decay_steps=100)
    assert cfg.lr_at(1) == 1e-2
    assert cfg.lr_at(101) == pytest.approx(1e-3)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0.0), dict(beta1=1.0), dict(epsilon=0.0),
                                    dict(kind="lbfgs"), dict(decay_rate=0.5)])
def test_invalid_optimizer_config(kwargs):
    with pytest.raises(ValueError):
        OptimizerConfig(**kwargs)


# -- model construction ----------------------------------------------------------


def test_empty_targets():
    g, x, y = xy()
    with pytest.raises(EmptyTargets):
        SciModel([x], [])


def test_unbound_variable_in_target():
    g, x, y = xy()
    with pytest.raises(UnboundVariableInTarget):
        SciModel([x], [Zeros(x * y)])


def test_data_ids_validation():
    g, x, _ = xy()
    with pytest.raises(InvalidTarget):
        Data(x, [1.0, 2.0], ids=[0, 0])
    with pytest.raises(InvalidTarget):
        Data(x, [1.0], ids=[0, 1])
    m = SciModel([x], [Data(x, [1.0], ids=[5])])
    with pytest.raises(InvalidTarget):
        m.losses({"x": np.zeros(3)})


def test_self_tie_has_zero_loss():
    g, x, y = xy()
    f = Functional("f", [x, y], [4], seed=3)
    m = SciModel([x, y], [Tie(f.output, f.output)])
    total, comps = m.losses({"x": np.linspace(0, 1, 8), "y": np.ones(8)})
    assert total == 0.0 and comps == [0.0]


def test_curve_fit_objective_is_mean_squared_error():
    g, x, y = xy()
    f = Functional("f", [x, y], [6, 6, 6], seed=0)
    cols = {"x": np.linspace(-1, 1, 10), "y": np.linspace(0, 2, 10)}
    target = np.sin(cols["x"]) * np.cos(cols["y"])
    m = build_model([x, y], [Data(f, target)])
    total, _ = m.losses(cols)
    assert total == pytest.approx(np.mean((ev(f.output, cols) - target) ** 2), rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.integers(0, 100))
def test_target_weight_linearity(a, b, seed):
    g, x, y = xy()
    f = Functional("f", [x, y], [3], seed=seed)
    rng = np.random.default_rng(seed)
    cols = {"x": rng.normal(size=6), "y": rng.normal(size=6)}
    vals = rng.normal(size=6)
    m = SciModel([x, y], [Data(f.output, vals, weight=a), Zeros(diff(f.output, x), weight=b)])
    total, (l1, l2) = m.losses(cols)
    assert abs(total - (a * l1 + b * l2)) <= 1e-12 * max(1.0, abs(total))


def test_all_ids_mask_equals_unmasked():
    g, x, y = xy()
    f = Functional("f", [x, y], [5], seed=1)
    rng = np.random.default_rng(2)
    cols = {"x": rng.normal(size=16), "y": rng.normal(size=16)}
    vals = rng.normal(size=16)
    masked = SciModel([x, y], [Data(f.output, vals, ids=np.arange(16))]).losses(cols)
    plain = SciModel([x, y], [Data(f.output, vals)]).losses(cols)
    assert masked == plain


def test_masked_loss_is_subset_mean():
    g, x, _ = xy()
    m = SciModel([x], [Data(x, [0.0, 0.0], ids=[0, 2])])
    total, _ = m.losses({"x": [2.0, 4.0, 6.0]})
    assert total == 20.0


def test_mae_loss():
    g, x, _ = xy()
    m = SciModel([x], [Zeros(x)], loss_kind="mae")
    assert m.losses({"x": [-3.0, 1.0]})[0] == 2.0


# -- training --------------------------------------------------------------------


def test_quadratic_surrogate_converges():
    g, x, _ = xy()
    p = Parameter(0.0, "p", graph=g)
    m = SciModel([x], [Zeros(p - 3.0 + 0.0 * x)], optimizer=OptimizerConfig(learning_rate=0.1))
    h = m.train({"x": np.zeros(3)}, epochs=500)
    assert abs(p.value - 3.0) < 1e-4
    assert h.parameters["p"] == p.value
    assert len(h) == 500


def _oracle_full_batch(xs, target, w0, b0, w1, b1, steps, lr):
    """Hand-written tanh net, MSE gradient and Adam, independent of the graph engine."""
    params = [w0.copy(), b0.copy(), w1.copy(), b1.copy()]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    losses = []
    n = len(xs)
    for t in range(1, steps + 1):
        W0, B0, W1, B1 = params
        a = np.tanh(xs[:, None] * W0[:, 0] + B0)
        out = a @ W1[0] + B1[0]
        r = out - target
        losses.append(np.mean(r ** 2))
        d_out = 2 * r / n
        gW1 = (d_out @ a)[None, :]
        gB1 = np.array([d_out.sum()])
        d_a = np.outer(d_out, W1[0]) * (1 - a ** 2)
        gW0 = (d_a.T @ xs)[:, None]
        gB0 = d_a.sum(axis=0)
        for i, gr in enumerate((gW0, gB0, gW1, gB1)):
            m[i] = 0.9 * m[i] + 0.1 * gr
            v[i] = 0.999 * v[i] + 0.001 * gr ** 2
            params[i] = params[i] - lr * (m[i] / (1 - 0.9 ** t)) / (np.sqrt(v[i] / (1 - 0.999 ** t)) + 1e-8)
    return np.array(losses)


def test_full_batch_matches_independent_oracle():
    g = Graph()
    x = g.variable("x")
    f = Functional("f", [x], [4], "tanh", seed=5)
    rng = np.random.default_rng(0)
    f.set_weights([(w, rng.normal(size=b.shape)) for w, b in f.get_weights()])
    (w0, b0), (w1, b1) = f.get_weights()
    xs = np.linspace(-1, 1, 12)
    target = xs ** 2
    h = SciModel([x], [Data(f, target)], optimizer=OptimizerConfig(learning_rate=0.05)).train(
        {"x": xs}, epochs=10, batch_size=12)
    oracle = _oracle_full_batch(xs, target, w0, b0, w1, b1, 10, 0.05)
    np.testing.assert_allclose(h.loss, oracle, rtol=1e-12)


def _fit_history(seed, batch_size=None, shuffle_seed=0, epochs=5):
    g, x, y = xy()
    f = Functional("f", [x, y], [6], seed=seed)
    rng = np.random.default_rng(10)
    cols = {"x": rng.normal(size=20), "y": rng.normal(size=20)}
    m = SciModel([x, y], [Data(f, np.sin(cols["x"]))])
    return m.train(cols, epochs=epochs, batch_size=batch_size, shuffle_seed=shuffle_seed)


def test_full_batch_independent_of_shuffle_seed():
    a = _fit_history(0, batch_size=20, shuffle_seed=1)
    b = _fit_history(0, batch_size=20, shuffle_seed=99)
    assert a.loss == b.loss


def test_minibatch_determinism():
    a = _fit_history(3, batch_size=7, shuffle_seed=4)
    b = _fit_history(3, batch_size=7, shuffle_seed=4)
    assert a.loss == b.loss and a.target_losses == b.target_losses


def test_step_count_is_epochs_times_batches():
    g, x, _ = xy()
    p = Parameter(0.0, "p", graph=g)
    m = SciModel([x], [Zeros(p - 1.0 + 0.0 * x)])
    m.train({"x": np.zeros(10)}, epochs=3, batch_size=4)
    assert m.state.t == 9


def test_batch_larger_than_dataset():
    g, x, _ = xy()
    m = SciModel([x], [Zeros(x)])
    with pytest.raises(BatchLargerThanDataset):
        m.train({"x": np.zeros(3)}, batch_size=4)


def test_integral_requires_full_batch():
    g, x, _ = xy()
    p = Parameter(1.0, "p", graph=g)
    m = SciModel([x], [Integral(p * x)])
    with pytest.raises(BatchLargerThanDataset):
        m.train({"x": np.ones(4)}, batch_size=2)


def test_integral_loss_is_squared_column_sum():
    g, x, _ = xy()
    m = SciModel([x], [Integral(g.concat([x, 2.0 * x]))])
    total, _ = m.losses({"x": [1.0, 2.0]})
    assert total == (9.0 + 36.0) / 2


def test_integral_training_drives_sum_to_zero():
    g, x, _ = xy()
    p = Parameter(0.0, "p", graph=g)
    m = SciModel([x], [Integral(x - p)], optimizer=OptimizerConfig(learning_rate=0.05))
    m.train({"x": np.array([1.0, 2.0, 6.0])}, epochs=1000)
    assert abs(p.value - 3.0) < 1e-3


def test_empty_mask_batches_are_counted():
    g, x, _ = xy()
    f = Functional("f", [x], [3], seed=0)
    m = SciModel([x], [Data(f, [1.0], ids=[0]), Zeros(f.output)])
    h = m.train({"x": np.linspace(0, 1, 8)}, epochs=2, batch_size=2, shuffle_seed=0)
    # the single id lands in exactly one of four batches per epoch
    assert h.empty_mask_batches == [3, 3]


def test_non_finite_loss_aborts_with_epoch():
    g, x, _ = xy()
    p = Parameter(1.0, "p", graph=g)
    m = SciModel([x], [Zeros(p * x)])
    with pytest.raises(NonFiniteLoss) as err:
        m.train({"x": np.array([np.inf, 1.0])}, epochs=3)
    assert err.value.epoch == 1


def test_sgd_step_decreases_curve_fit_loss():
    from pinnkit.problems.curve_fit import truth
    for seed in range(20):
        g, x, y = xy()
        f = Functional("f", [x, y], [6, 6, 6], seed=seed)
        rng = np.random.default_rng(seed)
        cols = {"x": rng.uniform(-np.pi, np.pi, 50), "y": rng.uniform(-np.pi, np.pi, 50)}
        m = SciModel([x, y], [Data(f, truth(cols["x"], cols["y"]))],
                     optimizer=OptimizerConfig(kind="sgd", learning_rate=1e-4))
        before = m.losses(cols)[0]
        m.train(cols, epochs=1)
        assert m.losses(cols)[0] < before


def test_train_function_and_history_csv(tmp_path):
    g, x, _ = xy()
    p = Parameter(0.0, "p", graph=g)
    m = SciModel([x], [Zeros(p - 1.0 + 0.0 * x, name="pde")])
    h = train(m, {"x": np.zeros(2)}, epochs=3)
    h.to_csv(tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["epoch", "total_loss", "pde_loss", "seconds"]
    assert len(rows) == 4 and float(rows[1][1]) == h.loss[0]
    h.to_csv(tmp_path / "h2.csv", include_seconds=False)
    assert next(csv.reader(open(tmp_path / "h2.csv"))) == ["epoch", "total_loss", "pde_loss"]


def test_missing_input_column():
    g, x, y = xy()
    m = SciModel([x, y], [Zeros(x + y)])
    with pytest.raises(UnboundVariableInTarget):
        m.train({"x": np.zeros(2)})
