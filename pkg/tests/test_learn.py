import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.utils.estimator_checks import check_estimator

from trass.blocks import enumerate_pairs, split_catalog
from trass.data import ReverseTrajectory, Transition, collect_reverse, collect_transitions
from trass.geometry import Pose2, ang_dist, compose, invert
from trass.learn import (
    DYNAMICS_FEATURES, TRM_FEATURES, AdamState, DynamicsEnsemble, DynamicsModel, RegressorParams, TanhRegressor, TimeReversalModel, TrainConfig,
    dynamics_rollout, forward, grad, gradient_check, load_checkpoint, optimizer_step,
    save_checkpoint, train_dynamics, train_trm,
)
from trass.sim import PushAction, SimConfig, WorldState, sample_goal_state, sample_initial_state, step

SEEN, _ = split_catalog(enumerate_pairs(), 0)
PAIR = SEEN[3]


def tiny_params(sizes=(3, 5, 2), seed=0):
    return RegressorParams.initialize(sizes, np.random.default_rng(seed))


def test_forward_examples():
    p = RegressorParams([np.eye(2), np.array([[2.0], [-1.0]])], [np.zeros(2), np.array([0.5])])
    x = np.array([0.3, -0.7])
    expected = 2 * math.tanh(0.3) - math.tanh(-0.7) + 0.5
    assert forward(p, x)[0] == pytest.approx(expected)
    assert forward(p, np.stack([x, x])).shape == (2, 1)
    with pytest.raises(ValueError):
        forward(p, np.zeros(3))


def test_forward_trivial_networks():
    zero = RegressorParams([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    np.testing.assert_array_equal(forward(zero, [1.0, -2.0, 3.0]), [0.0, 0.0])
    ident = RegressorParams([np.eye(3)], [np.zeros(3)])
    np.testing.assert_array_equal(forward(ident, [1.0, -2.0, 3.0]), [1.0, -2.0, 3.0])
    p = tiny_params()
    x = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_array_equal(forward(p, x), forward(p, x))


def test_gradient_vanishes_at_exact_fit_and_scales_with_residual():
    p = tiny_params()
    x = np.random.default_rng(0).standard_normal((6, 3))
    for a in grad(p, x, forward(p, x)).arrays():
        np.testing.assert_array_equal(a, 0.0)
    # bias-only linear model: doubling the residual doubles the gradient
    bias_only = RegressorParams([np.zeros((3, 2))], [np.array([0.5, -0.2])])
    y = np.random.default_rng(1).standard_normal((6, 2))
    g1 = grad(bias_only, x, y).biases[0]
    resid = forward(bias_only, x) - y
    np.testing.assert_allclose(g1, 2 * resid.sum(axis=0) / resid.size, atol=1e-12)
    np.testing.assert_allclose(grad(bias_only, x, forward(bias_only, x) - 2 * resid).biases[0], 2 * g1, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        RegressorParams([np.zeros((2, 3))], [np.zeros(2)])
    with pytest.raises(ValueError):
        RegressorParams([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ValueError):
        RegressorParams([np.full((1, 1), np.nan)], [np.zeros(1)])
    with pytest.raises(ValueError):
        RegressorParams.initialize((4,), np.random.default_rng(0))


def test_linear_gradient_matches_closed_form():
    rng = np.random.default_rng(1)
    w, b = rng.standard_normal((3, 2)), rng.standard_normal(2)
    x, y = rng.standard_normal((7, 3)), rng.standard_normal((7, 2))
    g = grad(RegressorParams([w], [b]), x, y)
    resid = x @ w + b - y
    np.testing.assert_allclose(g.weights[0], 2 * x.T @ resid / resid.size, atol=1e-12)
    np.testing.assert_allclose(g.biases[0], 2 * resid.sum(axis=0) / resid.size, atol=1e-12)
    assert gradient_check(RegressorParams([w], [b]), 8, x=x, y=y) < 1e-8


@pytest.mark.parametrize("sizes", [(12, 64, 64, 8), (4, 7, 3), (2, 3, 3, 3, 1)])
def test_gradient_check_passes(sizes):
    assert gradient_check(tiny_params(sizes), 100, np.random.default_rng(2)) < 1e-4


def test_gradient_check_detects_wrong_gradient(monkeypatch):
    import trass.learn as learn

    real = learn.grad
    monkeypatch.setattr(learn, "grad", lambda p, x, y: RegressorParams.from_arrays(
        [1.01 * a for a in real(p, x, y).arrays()]))
    assert learn.gradient_check(tiny_params(), 20) > 1e-3
    with pytest.raises(ValueError):
        learn.gradient_check(tiny_params(), 0)


def test_adam_zero_gradient_keeps_params():
    p = tiny_params()
    zero = RegressorParams.from_arrays([np.zeros_like(a) for a in p.arrays()])
    q, state = optimizer_step(p, zero, AdamState.zeros_like(p))
    assert state.step == 1
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)


def test_adam_first_step_moves_by_learning_rate():
    p = RegressorParams([np.zeros((1, 1))], [np.zeros(1)])
    g = RegressorParams([np.ones((1, 1))], [np.ones(1)])
    q, _ = optimizer_step(p, g, AdamState.zeros_like(p), TrainConfig(learning_rate=1e-3))
    assert q.weights[0][0, 0] == pytest.approx(-1e-3, rel=1e-6)
    # the step size does not depend on the gradient scale
    big = RegressorParams.from_arrays([np.full_like(a, 3.0) for a in tiny_params().arrays()])
    q, _ = optimizer_step(tiny_params(), big, AdamState.zeros_like(tiny_params()), TrainConfig(learning_rate=0.01))
    for a, b in zip(tiny_params().arrays(), q.arrays()):
        np.testing.assert_allclose(b - a, -0.01, rtol=1e-6)


def test_adam_converges_on_quadratic():
    # scalar parameter w with loss (w - 3)^2
    p = RegressorParams([np.zeros((1, 1))], [np.zeros(1)])
    state = AdamState.zeros_like(p)
    cfg = TrainConfig(learning_rate=0.1)
    for _ in range(200):
        w = p.weights[0][0, 0]
        g = RegressorParams([np.array([[2 * (w - 3)]])], [np.zeros(1)])
        p, state = optimizer_step(p, g, state, cfg)
    assert abs(p.weights[0][0, 0] - 3.0) < 0.05


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(final_lr_fraction=0)


def test_regressor_fits_smooth_function_and_loss_decreases():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(400, 2))
    y = np.stack([np.sin(2 * X[:, 0]), X[:, 0] * X[:, 1]], axis=1)
    model = TanhRegressor(hidden_layer_sizes=(32,), epochs=200, batch_size=32, learning_rate=3e-3).fit(X, y)
    assert model.training_mse_ < 5e-3
    curve = np.array(model.loss_curve_)
    assert curve[-1] < 0.1 * curve[0]
    assert model.score(X, y) > 0.95


def test_regressor_validation_errors():
    model = TanhRegressor(epochs=1)
    with pytest.raises(ValueError):
        model.fit(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        model.fit(np.array([[np.nan, 1.0]]), np.zeros(1))
    fitted = TanhRegressor(epochs=1).fit(np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((1, 3)))


def test_sklearn_estimator_contract():
    check_estimator(TanhRegressor(hidden_layer_sizes=(16,), epochs=100, batch_size=32))


# ---------------------------------------------------------------- time-reversal model


@pytest.fixture(scope="module")
def reverse():
    return collect_reverse(SEEN, 150, 12, seed=5)


@pytest.fixture(scope="module")
def trm(reverse):
    return train_trm(reverse, SEEN, cfg=TrainConfig(epochs=40, batch_size=64, learning_rate=3e-3))


def test_trm_constant_trajectories_learned_exactly():
    rng = np.random.default_rng(0)
    still = []
    for pair in SEEN[:5]:
        goal = sample_goal_state(pair, rng)
        still.append(ReverseTrajectory(pair.id, [goal] * 4, [PushAction((0, 0), (0, 0))] * 3, 0))
    model = train_trm(still, SEEN, horizon=3, cfg=TrainConfig(epochs=1500, batch_size=20),
                      canonical=False)
    X, Y = model.training_set(still, SEEN)
    assert np.mean((model.predict(X) - Y) ** 2) < 1e-6
    assert model.loss_curve_[-1] < 1e-6 * model.loss_curve_[0]


def test_loss_never_increases_on_constant_smoke_set():
    goal = sample_goal_state(PAIR, np.random.default_rng(0))
    smoke = [ReverseTrajectory(PAIR.id, [goal] * 13, [PushAction((0, 0), (0, 0))] * 12, 0)] * 3
    model = train_trm(smoke, [PAIR], cfg=TrainConfig(epochs=20))
    assert np.all(np.diff(model.loss_curve_) <= 0)
    X, Y = model.training_set(smoke, [PAIR])
    assert np.mean((model.predict(X) - Y) ** 2) < 1e-6


def test_trm_training_set_pads_with_goal(reverse):
    model = TimeReversalModel(horizon=10)
    X, Y = model.training_set(reverse[:2], SEEN)
    assert X.shape == (26, TRM_FEATURES) and Y.shape == (26, 40)
    # the goal row repeats the goal in every slot
    np.testing.assert_allclose(Y[12], np.tile(Y[12][:4], 10))
    np.testing.assert_allclose(Y[12][:4], Y[11][:4])
    with pytest.raises(ValueError):
        model.training_set([], SEEN)
    with pytest.raises(ValueError):
        model.fit(X, Y[:, :8])


def test_trm_loss_decreases_and_is_deterministic(reverse, trm):
    curve = trm.loss_curve_
    assert curve[-1] < curve[0]
    again = train_trm(reverse, SEEN, cfg=TrainConfig(epochs=40, batch_size=64, learning_rate=3e-3))
    for a, b in zip(trm.params_.arrays(), again.params_.arrays()):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(-math.pi, math.pi), st.integers(0, 1000))
def test_trm_prediction_is_rigid_invariant(trm, x, y, th, seed):
    s = sample_initial_state(PAIR, np.random.default_rng(seed))
    g = Pose2(x, y, th)
    moved = WorldState(PAIR.id, compose(g, s.female_pose), compose(g, s.male_pose))
    for a, b in zip(trm.predict_trajectory(s, PAIR), trm.predict_trajectory(moved, PAIR)):
        assert abs(a.x - b.x) < 1e-7 and abs(a.y - b.y) < 1e-7 and ang_dist(a.theta, b.theta) < 1e-7


def test_trm_treats_rotated_copies_alike(trm):
    pair = next(p for p in enumerate_pairs() if p.canonical_turn[0] != 0)
    k, turned = pair.canonical_turn
    q = Pose2(0.0, 0.0, k * math.pi / 2)
    s = sample_initial_state(pair, np.random.default_rng(4))
    rel = s.relative
    same = WorldState(turned.id, Pose2(0.0, 0.0, 0.0), compose(compose(q, rel), invert(q)))
    for a, b in zip(trm.predict_trajectory(s, pair), trm.predict_trajectory(same, turned)):
        b = compose(compose(invert(q), b), q)
        assert abs(a.x - b.x) < 1e-9 and abs(a.y - b.y) < 1e-9 and ang_dist(a.theta, b.theta) < 1e-9


def test_trm_prediction_shape(trm):
    s = sample_initial_state(PAIR, np.random.default_rng(3))
    traj = trm.predict_trajectory(s, PAIR)
    assert len(traj) == 10 and all(isinstance(p, Pose2) for p in traj)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, trm):
    save_checkpoint(trm, tmp_path / "a.ckpt", "digest")
    back, header = load_checkpoint(tmp_path / "a.ckpt")
    assert header["kind"] == "trm" and header["dataset_digest"] == "digest"
    for a, b in zip(trm.params_.arrays(), back.params_.arrays()):
        np.testing.assert_array_equal(a, b)
    assert back.get_params() == trm.get_params()
    save_checkpoint(back, tmp_path / "b.ckpt", "digest")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_text('{"format": "other"}\n')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")


# ---------------------------------------------------------------- dynamics


@pytest.fixture(scope="module")
def dynamics():
    trans = collect_transitions(SEEN, 3000, seed=6)
    return train_dynamics(trans, SEEN, TrainConfig(epochs=5, batch_size=128), hidden_layer_sizes=(32, 32))


def test_dynamics_report_and_shapes(dynamics):
    model, report = dynamics
    assert report.n_train + report.n_heldout == 3000
    assert report.n_heldout == 300
    assert report.heldout_mse < 0.05
    assert model.n_features_in_ == DYNAMICS_FEATURES and model.n_outputs_ == 6


def test_all_miss_dynamics_is_exact_identity():
    rng = np.random.default_rng(8)
    trans = []
    for _ in range(200):
        s = WorldState(PAIR.id, Pose2(-0.15, -0.15, rng.uniform(-3, 3)), Pose2(-0.15, 0.1, rng.uniform(-3, 3)))
        a = PushAction((0.15, rng.uniform(-0.2, 0.2)), (0.2, rng.uniform(-0.2, 0.2)))
        trans.append(Transition(s, a, step(s, a, PAIR, SimConfig())))
    assert all(t.next_state == t.state for t in trans)
    model, report = train_dynamics(trans, [PAIR], TrainConfig(epochs=2), hidden_layer_sizes=(8,))
    assert report.heldout_mse < 1e-4
    final = dynamics_rollout(model, trans[0].state, [t.action for t in trans[:5]], PAIR)[-1]
    assert np.abs(final.as_array() - trans[0].state.as_array()).max() < 0.02
    # the gate also holds for a model trained on pushes that do touch
    model, _ = train_dynamics(trans + collect_transitions([PAIR], 400, seed=1), [PAIR], TrainConfig(epochs=2),
                              hidden_layer_sizes=(8,))
    nxt = model.step_batch(PAIR, np.array([t.state.as_array() for t in trans]),
                           np.array([t.action.as_array() for t in trans]))
    np.testing.assert_array_equal(nxt, np.array([t.state.as_array() for t in trans]))


def test_rollout_equals_repeated_steps(dynamics):
    model, _ = dynamics
    rng = np.random.default_rng(2)
    s = sample_initial_state(PAIR, rng)
    actions = rng.uniform(-0.2, 0.2, size=(3, 5, 4))
    out = model.rollout(PAIR, s.as_array(), actions)
    assert out.shape == (3, 5, 2, 3)
    for k in range(3):
        cur = s.as_array()[None]
        for t in range(5):
            cur = model.step_batch(PAIR, cur, actions[k, t][None])
            np.testing.assert_allclose(out[k, t], cur[0], atol=1e-12)
    states = dynamics_rollout(model, s, [PushAction.from_array(a) for a in actions[0]], PAIR)
    assert len(states) == 5 and states[-1].pair_id == PAIR.id
    with pytest.raises(ValueError):
        dynamics_rollout(model, s, [], PAIR)


def test_ensemble_mean_and_spread(dynamics):
    model, _ = dynamics
    rng = np.random.default_rng(4)
    s = sample_initial_state(PAIR, rng)
    actions = rng.uniform(-0.2, 0.2, size=(4, 2, 4))
    mean, spread = DynamicsEnsemble([model, model]).rollout_with_spread(PAIR, s.as_array(), actions)
    np.testing.assert_allclose(mean, model.rollout(PAIR, s.as_array(), actions), atol=1e-12)
    np.testing.assert_allclose(spread, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        DynamicsEnsemble([])


def test_dynamics_training_validation():
    with pytest.raises(ValueError):
        train_dynamics([], SEEN)
    with pytest.raises(ValueError):
        train_dynamics(collect_transitions(SEEN, 10, seed=0), SEEN, holdout_fraction=1.0)


def test_untrained_model_refuses_to_predict():
    with pytest.raises(Exception):
        DynamicsModel().step_batch(PAIR, np.zeros((1, 2, 3)), np.zeros((1, 4)))
    with pytest.raises(Exception):
        TimeReversalModel().predict_trajectory(sample_goal_state(PAIR, np.random.default_rng(0)), PAIR)
