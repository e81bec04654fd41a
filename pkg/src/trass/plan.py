"""Cross-entropy-method planning and the closed-loop block-mating policy."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from trass.blocks import BlockPair
from trass.geometry import Pose2, ang_dist, convex_hull_area
from trass.sim import (
    ACTION_HIGH, ACTION_LOW, HORIZON, PushAction, SimConfig, WorldState, is_success,
    rollout_array, step,
)

# Pose metric weight: meters per radian.
ANG_WEIGHT = 0.05
SENTINEL_COST = 1e6
TRM_TARGET_STEP = 5


class PolicyKind(str, enum.Enum):
    TRM = "trm"
    SHAPED_HULL = "hull"
    GROUND_TRUTH = "gt"


@dataclass(frozen=True)
class CemConfig:
    population: int = 200
    elite_fraction: float = 0.125
    iterations: int = 5
    plan_horizon: int = 2
    init_std: float = 0.1
    low: float = ACTION_LOW
    high: float = ACTION_HIGH
    # soft fence on predicted block centers; blocks pinned at a wall cannot be pushed back
    fence: float = 0.20
    fence_weight: float = 0.0
    # penalty on ensemble disagreement, when the model provides it
    spread_weight: float = 0.0

    def __post_init__(self):
        if not 0 < self.elite_fraction <= 1:
            raise ValueError("elite_fraction must be in (0, 1]")
        if self.population < 2 / self.elite_fraction:
            raise ValueError("population must be >= 2 / elite_fraction")
        if not 1 <= self.iterations <= 5:
            raise ValueError("iterations must be between 1 and 5")
        if self.plan_horizon < 1:
            raise ValueError("plan_horizon must be >= 1")

    @property
    def n_elite(self) -> int:
        return math.ceil(self.elite_fraction * self.population)


@dataclass
class CemResult:
    actions: np.ndarray
    cost: float
    best_per_iteration: list = field(default_factory=list)


def cem_optimize(cost: Callable, cfg: CemConfig, rng: np.random.Generator,
                 batched: bool = True) -> CemResult:
    """Minimize ``cost`` over action sequences of shape (plan_horizon, 4).

    With ``batched`` the cost maps a (K, N, 4) array to K costs; otherwise it
    is called once per (N, 4) sequence. The first population is uniform over
    the action box, later ones are clipped diagonal Gaussians refit to the elites.
    """
    shape = (cfg.plan_horizon, 4)
    best_cost = math.inf
    best = None
    history = []
    mean = std = None
    for it in range(cfg.iterations):
        if it == 0:
            cand = rng.uniform(cfg.low, cfg.high, size=(cfg.population, *shape))
        else:
            cand = mean + std * rng.standard_normal((cfg.population, *shape))
            np.clip(cand, cfg.low, cfg.high, out=cand)
        if batched:
            costs = np.asarray(cost(cand), dtype=float)
        else:
            costs = np.array([cost(c) for c in cand], dtype=float)
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost:
            best_cost = float(costs[order[0]])
            best = cand[order[0]].copy()
        history.append(best_cost)
        elites = cand[order[: cfg.n_elite]]
        mean = elites.mean(axis=0)
        std = elites.std(axis=0) + 1e-6
    return CemResult(best, best_cost, history)


def relative_poses(poses: np.ndarray) -> np.ndarray:
    """(..., 2, 3) world poses -> (..., 3) male pose in the female frame."""
    f, m = poses[..., 0, :], poses[..., 1, :]
    c, s = np.cos(f[..., 2]), np.sin(f[..., 2])
    dx, dy = m[..., 0] - f[..., 0], m[..., 1] - f[..., 1]
    dth = np.remainder(m[..., 2] - f[..., 2] + np.pi, 2 * np.pi) - np.pi
    return np.stack([c * dx + s * dy, -s * dx + c * dy, dth], axis=-1)


def pose_metric(rel: np.ndarray, target) -> np.ndarray:
    """Position distance plus ANG_WEIGHT times angular distance, vectorized over rel."""
    tx, ty, tth = target
    dpos = np.hypot(rel[..., 0] - tx, rel[..., 1] - ty)
    dang = np.abs(np.remainder(rel[..., 2] - tth + np.pi, 2 * np.pi) - np.pi)
    return dpos + ANG_WEIGHT * dang


def trm_cost_batch(final_poses: np.ndarray, trm_target: Pose2) -> np.ndarray:
    return pose_metric(relative_poses(final_poses), trm_target.as_tuple())


def gt_cost_batch(final_poses: np.ndarray, pair: BlockPair) -> np.ndarray:
    rel = relative_poses(final_poses)
    return np.min([pose_metric(rel, g.as_tuple()) for g in pair.mating_offsets], axis=0)


def hull_cost_batch(final_poses: np.ndarray, pair: BlockPair) -> np.ndarray:
    female, male = pair.polygons
    out = np.empty(len(final_poses))
    for k, poses in enumerate(final_poses):
        pts = []
        for verts, (x, y, th) in ((female.vertices, poses[0]), (male.vertices, poses[1])):
            c, s = math.cos(th), math.sin(th)
            pts.append(verts @ np.array([[c, s], [-s, c]]) + (x, y))
        out[k] = convex_hull_area(np.vstack(pts))
    return out


def _final(dynamics, pair, state: WorldState, actions) -> Optional[np.ndarray]:
    acts = np.asarray([a.as_array() if isinstance(a, PushAction) else a for a in actions])
    try:
        final = dynamics.rollout(pair, state.as_array(), acts[None])[0, -1]
    except FloatingPointError:
        return None
    return final if np.all(np.isfinite(final)) else None


def trm_cost(dynamics, trm_traj: Sequence[Pose2], state: WorldState, actions, pair: BlockPair) -> float:
    """Distance between the predicted final relative pose and the 5th TRM step."""
    if len(trm_traj) < TRM_TARGET_STEP:
        raise ValueError("TRM trajectory shorter than the target step")
    final = _final(dynamics, pair, state, actions)
    if final is None:
        return SENTINEL_COST
    return float(trm_cost_batch(final[None], trm_traj[TRM_TARGET_STEP - 1])[0])


def hull_cost(dynamics, pair: BlockPair, state: WorldState, actions) -> float:
    final = _final(dynamics, pair, state, actions)
    if final is None:
        return SENTINEL_COST
    return float(hull_cost_batch(final[None], pair)[0])


def gt_cost(dynamics, pair: BlockPair, state: WorldState, actions) -> float:
    final = _final(dynamics, pair, state, actions)
    if final is None:
        return SENTINEL_COST
    return float(gt_cost_batch(final[None], pair)[0])


class OracleDynamics:
    """The simulator itself used as the planning model."""

    def __init__(self, cfg: SimConfig = SimConfig()):
        self.cfg = cfg

    def rollout(self, pair: BlockPair, poses: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return rollout_array(pair, poses, actions, self.cfg)


@dataclass
class EpisodeResult:
    success: bool
    steps_used: int
    trace: list


def fence_penalty(pred: np.ndarray, fence: float) -> np.ndarray:
    """Summed overshoot of predicted block centers past +-fence, over all steps."""
    over = np.clip(np.abs(np.nan_to_num(pred[..., :2])) - fence, 0.0, None)
    return over.reshape(len(pred), -1).sum(axis=1)


def _batch_cost(kind: PolicyKind, dynamics, pair, state, trm_target, all_steps,
                fence: float = 0.20, fence_weight: float = 0.0, spread_weight: float = 0.0):
    poses = state.as_array()
    with_spread = spread_weight > 0 and hasattr(dynamics, "rollout_with_spread")

    def cost(actions):
        if with_spread:
            pred, spread = dynamics.rollout_with_spread(pair, poses, actions)
        else:
            pred, spread = dynamics.rollout(pair, poses, actions), None
        bad = ~np.all(np.isfinite(pred), axis=(1, 2, 3))
        final = np.nan_to_num(pred[:, -1])
        if kind is PolicyKind.TRM:
            if all_steps:
                costs = sum(trm_cost_batch(pred[:, t], trm_target[t]) for t in range(pred.shape[1]))
            else:
                costs = trm_cost_batch(final, trm_target)
        elif kind is PolicyKind.SHAPED_HULL:
            costs = hull_cost_batch(final, pair)
        else:
            costs = gt_cost_batch(final, pair)
        if fence_weight:
            costs = costs + fence_weight * fence_penalty(pred, fence)
        if spread is not None:
            costs = costs + spread_weight * np.nan_to_num(spread, nan=SENTINEL_COST)
        costs[bad] = SENTINEL_COST
        return costs

    return cost


def run_episode(pair: BlockPair, initial: WorldState, kind: PolicyKind, dynamics, rng: np.random.Generator,
                trm=None, sim_cfg: SimConfig = SimConfig(), cem_cfg: CemConfig = CemConfig(),
                horizon: int = HORIZON, match_all_steps: bool = False) -> EpisodeResult:
    """Receding-horizon control: plan with CEM, execute the first push, replan."""
    kind = PolicyKind(kind)
    if dynamics is None:
        raise ValueError("a dynamics model is required")
    if kind is PolicyKind.TRM and trm is None:
        raise ValueError("the TRM policy needs a trained time-reversal model")
    state = initial
    trace = [state]
    if is_success(state, pair, sim_cfg):
        return EpisodeResult(True, 0, trace)
    for t in range(horizon):
        target = None
        if kind is PolicyKind.TRM:
            traj = trm.predict_trajectory(state, pair)
            if match_all_steps:
                target = [traj[min(i, len(traj) - 1)] for i in range(cem_cfg.plan_horizon)]
            else:
                target = traj[TRM_TARGET_STEP - 1]
        cost = _batch_cost(kind, dynamics, pair, state, target, match_all_steps,
                          cem_cfg.fence, cem_cfg.fence_weight, cem_cfg.spread_weight)
        plan = cem_optimize(cost, cem_cfg, rng)
        state = step(state, PushAction.from_array(plan.actions[0]), pair, sim_cfg)
        trace.append(state)
        if is_success(state, pair, sim_cfg):
            return EpisodeResult(True, t + 1, trace)
    return EpisodeResult(False, horizon, trace)
