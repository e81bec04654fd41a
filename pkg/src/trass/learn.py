"""Feed-forward tanh regressors trained with Adam, and the two models built on them.

``TimeReversalModel`` maps the current relative pose of a pair to the next
``horizon`` relative poses along a goal-bound trajectory. ``DynamicsModel``
predicts the effect of one push; multi-step rollouts apply it recursively.
Both are scikit-learn estimators over plain feature matrices, with
trajectory/transition helpers on top.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from trass.blocks import BlockPair
from trass.data import ReverseTrajectory, Transition, decode_relative, encode_relative
from trass.geometry import Pose2, compose, invert, pose_distance, relative_pose
from trass.sim import SimConfig, WorldState, block_sweep, first_contact

CHECKPOINT_VERSION = 1
DEFAULT_HORIZON = 10
# relative pose (x, y, cos, sin) plus the 3x3 female occupancy grid
TRM_FEATURES = 4 + 9
# push geometry (3), per-block contact features (2 x 12), kinematic guess (4), occupancy (9)
DYNAMICS_FEATURES = 3 + 2 * 12 + 4 + 9
DYNAMICS_OUTPUTS = 6
QUARTER = math.pi / 2


# ---------------------------------------------------------------- numerics

@dataclass
class RegressorParams:
    """Weights ``W[l]`` of shape (fan_in, fan_out) and biases ``b[l]`` of shape (fan_out,)."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} expects {w.shape[0]} inputs, previous layer gives "
                                 f"{self.weights[i - 1].shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite entries")

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator) -> "RegressorParams":
        """Glorot-uniform weights, zero biases."""
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "RegressorParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "RegressorParams":
        return RegressorParams.from_arrays([a.copy() for a in self.arrays()])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def _activations(params: RegressorParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def forward(params: RegressorParams, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.sizes[0] or x.ndim not in (1, 2):
        raise ValueError(f"expected input of size {params.sizes[0]}, got shape {x.shape}")
    return _activations(params, x)[-1]


def loss_and_grad(params: RegressorParams, x: np.ndarray, y: np.ndarray):
    """Mean squared error over all output entries and its exact gradient."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    acts = _activations(params, x)
    resid = acts[-1] - y
    loss = float(np.mean(resid**2))
    delta = 2.0 * resid / resid.size
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, RegressorParams(gw, gb)


def grad(params: RegressorParams, x, y) -> RegressorParams:
    return loss_and_grad(params, x, y)[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    # learning rate at the last epoch as a fraction of the initial one (cosine schedule)
    final_lr_fraction: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ValueError("invalid optimizer moments or epsilon")
        if not 0 < self.final_lr_fraction <= 1:
            raise ValueError("final_lr_fraction must be in (0, 1]")


@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params: RegressorParams) -> "AdamState":
        return cls(0, [np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def optimizer_step(params: RegressorParams, gradient: RegressorParams, opt_state: AdamState,
                   cfg: TrainConfig = TrainConfig(), learning_rate: Optional[float] = None):
    """One bias-corrected Adam update; returns new params and state."""
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    t = opt_state.step + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), gradient.arrays(), opt_state.m, opt_state.v):
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon))
        new_m.append(m)
        new_v.append(v)
    return RegressorParams.from_arrays(new_p), AdamState(t, new_m, new_v)


def gradient_check(params: RegressorParams, n_probes: int, rng: Optional[np.random.Generator] = None,
                   x=None, y=None, h: float = 1e-5) -> float:
    """Max relative error of ``grad`` against central differences on random parameters."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    if x is None:
        x = rng.standard_normal((16, params.sizes[0]))
    if y is None:
        y = rng.standard_normal((len(np.atleast_2d(x)), params.sizes[-1]))
    analytic = grad(params, x, y).arrays()
    probe = params.copy()
    arrays = probe.arrays()
    sizes = np.array([a.size for a in arrays])
    worst = 0.0
    for flat in rng.choice(sizes.sum(), size=min(n_probes, sizes.sum()), replace=False):
        k = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        idx = np.unravel_index(flat - (sizes[:k].sum() if k else 0), arrays[k].shape)
        orig = arrays[k][idx]
        arrays[k][idx] = orig + h
        up = loss_and_grad(probe, x, y)[0]
        arrays[k][idx] = orig - h
        down = loss_and_grad(probe, x, y)[0]
        arrays[k][idx] = orig
        numeric = (up - down) / (2 * h)
        a = analytic[k][idx]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    return worst


def fit_params(params: RegressorParams, x: np.ndarray, y: np.ndarray, cfg: TrainConfig):
    """Minibatch Adam on standardized data; returns params and per-epoch full-data loss."""
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(params)
    n = len(x)
    losses = []
    for epoch in range(cfg.epochs):
        frac = epoch / max(cfg.epochs - 1, 1)
        lr = cfg.learning_rate * (cfg.final_lr_fraction
                                  + (1 - cfg.final_lr_fraction) * 0.5 * (1 + math.cos(math.pi * frac)))
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, g = loss_and_grad(params, x[idx], y[idx])
            params, state = optimizer_step(params, g, state, cfg, lr)
        losses.append(float(np.mean((forward(params, x) - y) ** 2)))
    return params, losses


# ---------------------------------------------------------------- estimator

def _standardizer(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    scale = a.std(axis=0)
    scale[scale < 1e-12] = 1.0
    # exactly constant columns standardize to exact zeros; the rounded mean would
    # leave ~1e-17 residue that Adam's scale-free steps then chase
    const = np.all(a == a[:1], axis=0)
    mean[const] = a[0, const]
    return mean, scale


class TanhRegressor(RegressorMixin, BaseEstimator):
    """Multi-output MLP regressor with tanh hidden layers and standardized inputs/targets."""

    def __init__(self, hidden_layer_sizes=(64, 64), learning_rate=1e-3, batch_size=256, epochs=200,
                 beta1=0.9, beta2=0.999, epsilon=1e-8, final_lr_fraction=1.0, seed=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.final_lr_fraction = final_lr_fraction
        self.seed = seed

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.multi_output = True
        return tags

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.epochs, self.beta1, self.beta2,
                           self.epsilon, self.seed, self.final_lr_fraction)

    def fit(self, X, y):
        cfg = self.train_config()
        X, y = validate_data(self, X, y, multi_output=True, dtype=np.float64, y_numeric=True)
        y2 = y.reshape(len(y), -1)
        self.single_output_ = y.ndim == 1
        self.x_mean_, self.x_scale_ = _standardizer(X)
        self.y_mean_, self.y_scale_ = _standardizer(y2)
        xs = (X - self.x_mean_) / self.x_scale_
        ys = (y2 - self.y_mean_) / self.y_scale_
        sizes = (X.shape[1], *self.hidden_layer_sizes, y2.shape[1])
        init = RegressorParams.initialize(sizes, np.random.default_rng([cfg.seed, 1]))
        self.params_, self.loss_curve_ = fit_params(init, xs, ys, cfg)
        self.n_outputs_ = y2.shape[1]
        self.training_mse_ = float(np.mean((self._predict(X) - y2) ** 2))
        return self

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return forward(self.params_, (X - self.x_mean_) / self.x_scale_) * self.y_scale_ + self.y_mean_

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        out = self._predict(X)
        return out[:, 0] if getattr(self, "single_output_", False) else out

    # -- checkpoints

    def _state(self) -> dict:
        return {
            "x_mean": self.x_mean_.tolist(), "x_scale": self.x_scale_.tolist(),
            "y_mean": self.y_mean_.tolist(), "y_scale": self.y_scale_.tolist(),
            "loss_curve": self.loss_curve_, "training_mse": self.training_mse_,
        }

    def _restore(self, state: dict, arrays: list[np.ndarray]) -> None:
        self.x_mean_ = np.array(state["x_mean"])
        self.x_scale_ = np.array(state["x_scale"])
        self.y_mean_ = np.array(state["y_mean"])
        self.y_scale_ = np.array(state["y_scale"])
        self.loss_curve_ = list(state["loss_curve"])
        self.training_mse_ = state["training_mse"]
        self.params_ = RegressorParams.from_arrays(arrays)
        self.n_features_in_ = self.params_.sizes[0]
        self.n_outputs_ = self.params_.sizes[-1]


# ---------------------------------------------------------------- time-reversal model

def _quarter(k: int) -> Pose2:
    return Pose2(0.0, 0.0, k * QUARTER)


def symmetry_elements(pair: BlockPair) -> list[tuple[int, int]]:
    fsym, msym = pair.symmetries
    return [(kf, km) for kf in fsym for km in msym]


def apply_symmetry(rel: Pose2, element: tuple[int, int]) -> Pose2:
    """Relative pose after re-labelling both block frames by their own symmetries."""
    kf, km = element
    return compose(compose(invert(_quarter(kf)), rel), _quarter(km))


def undo_symmetry(rel: Pose2, element: tuple[int, int]) -> Pose2:
    kf, km = element
    return compose(compose(_quarter(kf), rel), invert(_quarter(km)))


def _closest_element(rel: Pose2, pair: BlockPair, target: Pose2) -> tuple[int, int]:
    elements = symmetry_elements(pair)
    dists = [pose_distance(apply_symmetry(rel, e), target, 0.05) for e in elements]
    return elements[int(np.argmin(dists))]


def _rel_vec(rel: Pose2) -> np.ndarray:
    return np.array([rel.x, rel.y, math.cos(rel.theta), math.sin(rel.theta)])


class TimeReversalModel(TanhRegressor):
    """Predicts the next ``horizon`` relative poses towards a mated configuration.

    With ``canonical`` the pair is first viewed in its canonical square turn,
    so rotated copies of one physical pair share inputs, and the block frames
    are then re-labelled by their rotational symmetries so that every training
    trajectory ends at the first mating offset. At inference the input is
    mapped to the labelling that puts it closest to that offset and
    predictions are mapped back. With ``shape_features`` the female occupancy
    grid (of the turned pair) is appended to the input.
    """

    def __init__(self, horizon=DEFAULT_HORIZON, canonical=True, shape_features=True,
                 hidden_layer_sizes=(128, 128), learning_rate=1e-3, batch_size=256, epochs=300,
                 beta1=0.9, beta2=0.999, epsilon=1e-8, final_lr_fraction=0.02, seed=0):
        super().__init__(hidden_layer_sizes, learning_rate, batch_size, epochs, beta1, beta2, epsilon,
                         final_lr_fraction, seed)
        self.horizon = horizon
        self.canonical = canonical
        self.shape_features = shape_features

    def _features(self, rel: Pose2, pair: BlockPair) -> np.ndarray:
        vec = _rel_vec(rel)
        if self.shape_features:
            vec = np.concatenate([vec, pair.female_occupancy])
        return vec

    def training_set(self, trajs: Sequence[ReverseTrajectory], pairs: Sequence[BlockPair]):
        """Every state of every trajectory as input, the following ``horizon`` states
        (padded with the goal) as target."""
        if not trajs:
            raise ValueError("empty dataset")
        catalog = {p.id: p for p in pairs}
        X, Y = [], []
        for traj in trajs:
            pair = catalog[traj.pair_id]
            rels = [s.relative for s in traj.states]
            if self.canonical:
                turn, pair = pair.canonical_turn
                rels = [apply_symmetry(r, (-turn % 4, -turn % 4)) for r in rels]
                element = _closest_element(rels[-1], pair, pair.mating_offsets[0])
                rels = [apply_symmetry(r, element) for r in rels]
            last = len(rels) - 1
            for i in range(len(rels)):
                X.append(self._features(rels[i], pair))
                Y.append(np.concatenate([_rel_vec(rels[min(i + j, last)]) for j in range(1, self.horizon + 1)]))
        return np.array(X), np.array(Y)

    def fit_trajectories(self, trajs: Sequence[ReverseTrajectory], pairs: Sequence[BlockPair]):
        return self.fit(*self.training_set(trajs, pairs))

    def fit(self, X, y):
        y = np.asarray(y)
        if y.ndim != 2 or y.shape[1] != 4 * self.horizon:
            raise ValueError(f"targets must have {4 * self.horizon} columns")
        return super().fit(X, y)

    def predict_trajectory(self, state: WorldState, pair: BlockPair) -> list[Pose2]:
        check_is_fitted(self, "params_")
        rel = state.relative
        turn, element = 0, (0, 0)
        if self.canonical:
            turn, pair = pair.canonical_turn
            rel = apply_symmetry(rel, (-turn % 4, -turn % 4))
            element = _closest_element(rel, pair, pair.mating_offsets[0])
            rel = apply_symmetry(rel, element)
        out = self._predict(self._features(rel, pair)[None])[0]
        back = (-turn % 4, -turn % 4)
        return [undo_symmetry(undo_symmetry(decode_relative(out[4 * j:4 * j + 4]), element), back)
                for j in range(self.horizon)]


TRM_TRAINING = TrainConfig(epochs=300, final_lr_fraction=0.02)
DYNAMICS_TRAINING = TrainConfig(epochs=30, final_lr_fraction=0.05)


def train_trm(trajs: Sequence[ReverseTrajectory], pairs: Sequence[BlockPair], horizon: int = DEFAULT_HORIZON,
              cfg: TrainConfig = TRM_TRAINING, **model_kw) -> TimeReversalModel:
    model = TimeReversalModel(horizon=horizon, learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                              epochs=cfg.epochs, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
                              final_lr_fraction=cfg.final_lr_fraction, seed=cfg.seed, **model_kw)
    return model.fit_trajectories(trajs, pairs)


def trm_predict(model: TimeReversalModel, state: WorldState, pair: BlockPair) -> list[Pose2]:
    return model.predict_trajectory(state, pair)


# ---------------------------------------------------------------- dynamics model

def _wall_margin(x: np.ndarray, y: np.ndarray, ux: np.ndarray, uy: np.ndarray, halfwidth: float) -> np.ndarray:
    # travel along u before the point leaves the square workspace, capped
    with np.errstate(divide="ignore", invalid="ignore"):
        mx = np.where(np.abs(ux) > 1e-9, (np.sign(ux) * halfwidth - x) / ux, np.inf)
        my = np.where(np.abs(uy) > 1e-9, (np.sign(uy) * halfwidth - y) / uy, np.inf)
    return np.clip(np.minimum(mx, my), 0.0, 2.0 * halfwidth)


def push_features(poses: np.ndarray, actions: np.ndarray, contact: np.ndarray, sweep: np.ndarray,
                  occupancy: np.ndarray, halfwidth: float) -> np.ndarray:
    """Features for poses (K, 2, 3), pushes (K, 4), first-contact data (K, 2, 3)
    and the block-to-block sweep distance (K,).

    Each block is described in the frame of the push (origin at the start,
    x along the push) and by where and how early the pusher first touches
    it, together with the push length and direction, the world positions
    and room left before the workspace edge (where pushes stall), and the
    female shape.
    """
    start = actions[:, :2]
    d = actions[:, 2:] - start
    length = np.hypot(d[:, 0], d[:, 1])
    safe = np.where(length > 1e-9, length, 1.0)
    ux = np.where(length > 1e-9, d[:, 0] / safe, 1.0)
    uy = np.where(length > 1e-9, d[:, 1] / safe, 0.0)
    heading = np.arctan2(uy, ux)
    cols = [length, ux, uy]
    for b in range(2):
        rx = poses[:, b, 0] - start[:, 0]
        ry = poses[:, b, 1] - start[:, 1]
        phi = poses[:, b, 2] - heading
        touched = np.isfinite(contact[:, b, 0])
        remaining = np.where(touched, length - np.where(touched, contact[:, b, 0], 0.0), 0.0)
        wall = halfwidth - np.maximum(np.abs(poses[:, b, 0]), np.abs(poses[:, b, 1]))
        cols += [ux * rx + uy * ry, -uy * rx + ux * ry, np.cos(phi), np.sin(phi), poses[:, b, 0], poses[:, b, 1],
                 touched.astype(float), remaining, contact[:, b, 1], contact[:, b, 2],
                 _wall_margin(poses[:, b, 0], poses[:, b, 1], ux, uy, halfwidth), wall]
    # kinematic guess: the first block touched slides rigidly along the push,
    # drags the other one along once they meet, and everything stops at the wall
    travel = contact[:, :, 0]
    first = np.argmin(np.where(np.isfinite(travel), travel, np.inf), axis=1)
    rows = np.arange(len(first))
    remaining = np.clip(length - np.where(np.isfinite(travel[rows, first]), travel[rows, first], length), 0.0, None)
    meet = sweep
    chained = np.isfinite(meet) & (meet < remaining)
    margins = [_wall_margin(poses[:, b, 0], poses[:, b, 1], ux, uy, halfwidth) for b in range(2)]
    lead = np.where(first == 0, margins[0], margins[1])
    trail = np.where(first == 0, margins[1], margins[0])
    stop = np.minimum(lead, np.where(chained, meet + trail, np.inf))
    cols += [chained.astype(float), np.where(chained, remaining - meet, 0.0),
             np.minimum(remaining, stop), (stop < remaining).astype(float)]
    feats = np.stack(cols, axis=1)
    return np.concatenate([feats, np.broadcast_to(occupancy, (len(feats), len(occupancy)))], axis=1)


def touches(contact: np.ndarray) -> np.ndarray:
    """Pushes that reach a block after starting clear of both; the rest leave the state unchanged."""
    travel = contact[:, :, 0]
    return np.isfinite(travel).any(axis=1) & (travel > 0).all(axis=1)


def push_targets(poses: np.ndarray, actions: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Per-block displacement in the push frame and wrapped rotation, (K, 6)."""
    d = actions[:, 2:] - actions[:, :2]
    heading = np.arctan2(d[:, 1], d[:, 0])
    ux, uy = np.cos(heading), np.sin(heading)
    cols = []
    for b in range(2):
        dx = nxt[:, b, 0] - poses[:, b, 0]
        dy = nxt[:, b, 1] - poses[:, b, 1]
        dth = np.remainder(nxt[:, b, 2] - poses[:, b, 2] + np.pi, 2 * np.pi) - np.pi
        cols += [ux * dx + uy * dy, -uy * dx + ux * dy, dth]
    return np.stack(cols, axis=1)


def apply_push_targets(poses: np.ndarray, actions: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    d = actions[:, 2:] - actions[:, :2]
    heading = np.arctan2(d[:, 1], d[:, 0])
    ux, uy = np.cos(heading), np.sin(heading)
    out = np.empty_like(poses)
    for b in range(2):
        du, dv, dth = deltas[:, 3 * b], deltas[:, 3 * b + 1], deltas[:, 3 * b + 2]
        out[:, b, 0] = poses[:, b, 0] + ux * du - uy * dv
        out[:, b, 1] = poses[:, b, 1] + uy * du + ux * dv
        out[:, b, 2] = np.remainder(poses[:, b, 2] + dth + np.pi, 2 * np.pi) - np.pi
    return out


class DynamicsModel(TanhRegressor):
    """Single-push forward model; ``rollout`` chains it for planning.

    Pushes whose path never reaches a block are predicted exactly as no-ops;
    the network is trained on and applied to the remaining pushes only.
    """

    def __init__(self, pusher_radius=0.01, clearance=0.002, workspace_halfwidth=0.28,
                 hidden_layer_sizes=(256, 256, 256),
                 learning_rate=1e-3, batch_size=256, epochs=30, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 final_lr_fraction=0.05, seed=0):
        super().__init__(hidden_layer_sizes, learning_rate, batch_size, epochs, beta1, beta2, epsilon,
                         final_lr_fraction, seed)
        self.pusher_radius = pusher_radius
        self.clearance = clearance
        self.workspace_halfwidth = workspace_halfwidth

    def _sim_config(self) -> SimConfig:
        return SimConfig(pusher_radius=self.pusher_radius, clearance=self.clearance,
                         step_length=min(SimConfig.step_length, 0.5 * self.pusher_radius))

    def _contact(self, pair: BlockPair, poses: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return first_contact(pair, poses, actions, self._sim_config())

    def _features(self, pair: BlockPair, poses: np.ndarray, actions: np.ndarray, contact: np.ndarray) -> np.ndarray:
        travel = contact[:, :, 0]
        first = np.argmin(np.where(np.isfinite(travel), travel, np.inf), axis=1)
        sweep = block_sweep(pair, poses, actions, first, self._sim_config())
        return push_features(poses, actions, contact, sweep, pair.female_occupancy, self.workspace_halfwidth)

    def training_set(self, transitions: Sequence[Transition], pairs: Sequence[BlockPair]):
        """Features and push-frame targets for the transitions whose push touches a block."""
        if not transitions:
            raise ValueError("empty dataset")
        catalog = {p.id: p for p in pairs}
        groups = []
        for pid in sorted({t.state.pair_id for t in transitions}):
            idx = [i for i, t in enumerate(transitions) if t.state.pair_id == pid]
            poses = np.array([transitions[i].state.as_array() for i in idx])
            actions = np.array([transitions[i].action.as_array() for i in idx])
            nxt = np.array([transitions[i].next_state.as_array() for i in idx])
            contact = self._contact(catalog[pid], poses, actions)
            groups.append((catalog[pid], poses, actions, nxt, contact, touches(contact)))
        # with no touching push at all, fit the (zero) displacement of the misses instead
        any_touch = any(g[5].any() for g in groups)
        X, Y = [], []
        for pair, poses, actions, nxt, contact, keep in groups:
            if not any_touch:
                keep = np.ones(len(poses), dtype=bool)
            X.append(self._features(pair, poses[keep], actions[keep], contact[keep]))
            Y.append(push_targets(poses[keep], actions[keep], nxt[keep]))
        return np.concatenate(X), np.concatenate(Y)

    def fit_transitions(self, transitions: Sequence[Transition], pairs: Sequence[BlockPair]):
        return self.fit(*self.training_set(transitions, pairs))

    def step_batch(self, pair: BlockPair, poses: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Next poses (K, 2, 3) for poses (K, 2, 3) and pushes (K, 4)."""
        check_is_fitted(self, "params_")
        poses = np.ascontiguousarray(poses, dtype=np.float64)
        actions = np.ascontiguousarray(actions, dtype=np.float64)
        contact = self._contact(pair, poses, actions)
        hit = touches(contact)
        out = poses.copy()
        if hit.any():
            feats = self._features(pair, poses[hit], actions[hit], contact[hit])
            out[hit] = apply_push_targets(poses[hit], actions[hit], self._predict(feats))
        return out

    def rollout(self, pair: BlockPair, poses: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Poses (2, 3) and action sequences (K, N, 4) -> predicted poses (K, N, 2, 3)."""
        actions = np.asarray(actions, dtype=np.float64)
        k, n = actions.shape[:2]
        cur = np.broadcast_to(np.asarray(poses, dtype=np.float64), (k, 2, 3)).copy()
        out = np.empty((k, n, 2, 3))
        for t in range(n):
            cur = self.step_batch(pair, cur, actions[:, t])
            out[:, t] = cur
        return out


class DynamicsEnsemble:
    """Independently trained dynamics models; plans against their mean and their spread."""

    def __init__(self, members: Sequence[DynamicsModel]):
        if not members:
            raise ValueError("an ensemble needs at least one member")
        self.members = list(members)

    def rollout_with_spread(self, pair: BlockPair, poses: np.ndarray, actions: np.ndarray):
        """Mean rollout (K, N, 2, 3) and per-sequence spread (K,): worst-step positional std, in meters."""
        preds = np.stack([m.rollout(pair, poses, actions) for m in self.members])
        mean = preds.mean(axis=0)
        mean[..., 2] = np.arctan2(np.sin(preds[..., 2]).mean(axis=0), np.cos(preds[..., 2]).mean(axis=0))
        var = preds[..., :2].var(axis=0).sum(axis=-1)
        spread = np.sqrt(var).mean(axis=-1).max(axis=-1)
        return mean, spread

    def rollout(self, pair: BlockPair, poses: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.rollout_with_spread(pair, poses, actions)[0]


@dataclass
class DynamicsReport:
    heldout_mse: float
    median_position_error: float
    n_train: int
    n_heldout: int
    # median over held-out pushes that touch a block
    contact_median_position_error: float = math.nan


def position_errors(model: DynamicsModel, transitions: Sequence[Transition], pairs: Sequence[BlockPair]) -> np.ndarray:
    """Per-block position error (m) of single-step predictions, shape (n, 2)."""
    catalog = {p.id: p for p in pairs}
    errs = np.empty((len(transitions), 2))
    for i, t in enumerate(transitions):
        pred = model.step_batch(catalog[t.state.pair_id], t.state.as_array()[None], t.action.as_array()[None])[0]
        errs[i] = np.hypot(*(pred[:, :2] - t.next_state.as_array()[:, :2]).T)
    return errs


def train_dynamics(transitions: Sequence[Transition], pairs: Sequence[BlockPair], cfg: TrainConfig = DYNAMICS_TRAINING,
                   holdout_fraction: float = 0.1, **model_kw) -> tuple[DynamicsModel, DynamicsReport]:
    """Fit on a seeded random split of the transitions and report held-out error."""
    if not transitions:
        raise ValueError("empty dataset")
    if not 0 <= holdout_fraction < 1:
        raise ValueError("holdout_fraction must be in [0, 1)")
    model = DynamicsModel(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, epochs=cfg.epochs,
                          beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
                          final_lr_fraction=cfg.final_lr_fraction, seed=cfg.seed, **model_kw)
    order = np.random.default_rng([cfg.seed, 2]).permutation(len(transitions))
    n_held = int(round(holdout_fraction * len(transitions)))
    held = [transitions[i] for i in np.sort(order[:n_held])]
    train = [transitions[i] for i in np.sort(order[n_held:])]
    model.fit_transitions(train, pairs)
    if not held:
        return model, DynamicsReport(math.nan, math.nan, len(train), 0)
    catalog = {p.id: p for p in pairs}
    errs, sq, touched = [], [], []
    for pid in sorted({t.state.pair_id for t in held}):
        group = [t for t in held if t.state.pair_id == pid]
        poses = np.array([t.state.as_array() for t in group])
        actions = np.array([t.action.as_array() for t in group])
        nxt = np.array([t.next_state.as_array() for t in group])
        pred = model.step_batch(catalog[pid], poses, actions)
        errs.append(np.hypot(pred[:, :, 0] - nxt[:, :, 0], pred[:, :, 1] - nxt[:, :, 1]))
        sq.append(np.mean((encode_poses(pred) - encode_poses(nxt)) ** 2, axis=1))
        touched.append(touches(model._contact(catalog[pid], poses, actions)))
    errs = np.concatenate(errs)
    sq = np.concatenate(sq)
    touched = np.concatenate(touched)
    contact_median = float(np.median(errs[touched])) if touched.any() else math.nan
    return model, DynamicsReport(float(np.mean(sq)), float(np.median(errs)), len(train), len(held), contact_median)


def encode_poses(poses: np.ndarray) -> np.ndarray:
    """Absolute 8-vector encoding of (..., 2, 3) pose arrays."""
    poses = np.asarray(poses, dtype=np.float64)
    per_block = np.stack([poses[..., 0], poses[..., 1], np.cos(poses[..., 2]), np.sin(poses[..., 2])], axis=-1)
    return per_block.reshape(*poses.shape[:-2], 8)


def dynamics_rollout(model: DynamicsModel, state: WorldState, actions, pair: BlockPair) -> list[WorldState]:
    acts = np.array([a.as_array() if hasattr(a, "as_array") else a for a in actions], dtype=np.float64)
    if len(acts) == 0:
        raise ValueError("actions must be non-empty")
    pred = model.rollout(pair, state.as_array(), acts[None])[0]
    return [WorldState.from_array(state.pair_id, p) for p in pred]


# ---------------------------------------------------------------- checkpoints

_KINDS = {"trm": TimeReversalModel, "dynamics": DynamicsModel}


def save_checkpoint(model: TanhRegressor, path, dataset_digest: str = "") -> None:
    """JSON header line, then one JSON line per weight/bias array (row-major).

    Floats are written in shortest round-trip form, so reloading is bit-exact.
    """
    check_is_fitted(model, "params_")
    kind = next(k for k, cls in _KINDS.items() if type(model) is cls)
    params = model.get_params()
    params["hidden_layer_sizes"] = list(params["hidden_layer_sizes"])
    header = {
        "format": "trass-checkpoint", "version": CHECKPOINT_VERSION, "kind": kind,
        "sizes": list(model.params_.sizes), "estimator": params, "seed": model.seed,
        "dataset_digest": dataset_digest, "state": model._state(),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for a in model.params_.arrays():
        lines.append(json.dumps({"shape": list(a.shape), "data": a.ravel().tolist()}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns (model, header)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty checkpoint")
    header = json.loads(lines[0])
    if header.get("format") != "trass-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    params = dict(header["estimator"])
    params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
    model = _KINDS[header["kind"]](**params)
    arrays = []
    for line in lines[1:]:
        rec = json.loads(line)
        arrays.append(np.array(rec["data"], dtype=np.float64).reshape(rec["shape"]))
    model._restore(header["state"], arrays)
    if list(model.params_.sizes) != header["sizes"]:
        raise ValueError(f"{path}: layer sizes do not match header")
    return model, header
