"""Deterministic quasi-static push environment for one block pair on a tabletop."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from trass import _kernels
from trass.blocks import BlockPair, collision_parts
from trass.geometry import (
    Polygon, Pose2, ang_dist, compose, polygon_area, polygon_overlap, relative_pose, transform_polygon,
)

ACTION_LOW = -0.2
ACTION_HIGH = 0.2
HORIZON = 20


@dataclass(frozen=True)
class SimConfig:
    cell_size: float = 0.05
    pusher_radius: float = 0.01
    step_length: float = 0.002
    rotation_gain: float = 0.5
    workspace_halfwidth: float = 0.28
    success_pos_tol: float = 0.005
    success_ang_tol: float = 0.10
    max_resolve_iters: int = 32
    clearance: float = 0.002
    spawn_halfwidth: float = 0.15
    goal_halfwidth: float = 0.15

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0 or (value == 0 and name != "clearance"):
                raise ValueError(f"{name} must be positive")
        if self.step_length >= self.pusher_radius:
            raise ValueError("step_length must be smaller than pusher_radius")


@dataclass(frozen=True)
class WorldState:
    pair_id: str
    female_pose: Pose2
    male_pose: Pose2

    def as_array(self) -> np.ndarray:
        return np.array([self.female_pose.as_tuple(), self.male_pose.as_tuple()])

    @classmethod
    def from_array(cls, pair_id: str, arr) -> "WorldState":
        arr = np.asarray(arr, dtype=float)
        return cls(pair_id, Pose2(*arr[0]), Pose2(*arr[1]))

    @property
    def relative(self) -> Pose2:
        return relative_pose(self.female_pose, self.male_pose)

    @property
    def separation(self) -> float:
        return math.hypot(self.male_pose.x - self.female_pose.x, self.male_pose.y - self.female_pose.y)


@dataclass(frozen=True)
class PushAction:
    start: tuple[float, float]
    end: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))

    def as_array(self) -> np.ndarray:
        return np.array([*self.start, *self.end])

    @classmethod
    def from_array(cls, a) -> "PushAction":
        return cls((a[0], a[1]), (a[2], a[3]))

    def in_bounds(self) -> bool:
        return all(ACTION_LOW <= v <= ACTION_HIGH for v in self.as_array())


@lru_cache(maxsize=None)
def _packed(pair: BlockPair, clearance: float):
    female = collision_parts(pair.female, pair.cell_size, clearance)
    male = collision_parts(pair.male, pair.cell_size, clearance)
    lf, cf = _kernels.pack_parts(female)
    lm, cm = _kernels.pack_parts(male)
    radii = np.array([
        max(np.max(np.linalg.norm(p, axis=1)) for p in female),
        max(np.max(np.linalg.norm(p, axis=1)) for p in male),
    ])
    return lf, cf, lm, cm, radii


def collision_polygons(pair: BlockPair, cfg: SimConfig) -> tuple[Polygon, Polygon]:
    """Physical block bodies in their local frames (outlines inset by the clearance)."""
    out = []
    for shape, outline in zip((pair.female, pair.male), pair.polygons):
        parts = collision_parts(shape, pair.cell_size, cfg.clearance)
        out.append(Polygon(outline.vertices, tuple(parts)))
    return out[0], out[1]


def _cfg_args(cfg: SimConfig):
    return (cfg.pusher_radius, cfg.step_length, cfg.rotation_gain,
            cfg.workspace_halfwidth, cfg.max_resolve_iters)


def step_array(pair: BlockPair, poses: np.ndarray, action: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Array form of :func:`step` on a (2, 3) pose array and a length-4 action."""
    lf, cf, lm, cm, radii = _packed(pair, cfg.clearance)
    return _kernels.push_step(np.asarray(poses, dtype=float), lf, cf, lm, cm, radii,
                              np.asarray(action, dtype=float), *_cfg_args(cfg))


def rollout_array(pair: BlockPair, poses: np.ndarray, actions: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Simulate (K, N, 4) action sequences from one start; returns (K, N, 2, 3) poses."""
    lf, cf, lm, cm, radii = _packed(pair, cfg.clearance)
    actions = np.ascontiguousarray(actions, dtype=float)
    return _kernels.rollout_batch(np.asarray(poses, dtype=float), lf, cf, lm, cm, radii,
                                  actions, *_cfg_args(cfg))


def step(state: WorldState, action: PushAction, pair: BlockPair, cfg: SimConfig) -> WorldState:
    """Push linearly from ``action.start`` to ``action.end`` and settle the blocks."""
    if state.pair_id != pair.id:
        raise ValueError(f"state is for {state.pair_id}, not {pair.id}")
    out = step_array(pair, state.as_array(), action.as_array(), cfg)
    return WorldState.from_array(state.pair_id, out)


def block_polygons(state: WorldState, pair: BlockPair, cfg: SimConfig | None = None):
    """World-frame block polygons: nominal outlines, or physical bodies given ``cfg``."""
    female, male = pair.polygons if cfg is None else collision_polygons(pair, cfg)
    return transform_polygon(state.female_pose, female), transform_polygon(state.male_pose, male)


def overlap_depth(state: WorldState, pair: BlockPair, cfg: SimConfig | None = None) -> float:
    hit = polygon_overlap(*block_polygons(state, pair, cfg))
    return 0.0 if hit is None else hit.depth


def success_error(relative: Pose2, pair: BlockPair) -> tuple[float, float]:
    """(position error, angle error) to the mating offset that best matches ``relative``."""
    best = None
    for g in pair.mating_offsets:
        err = (math.hypot(relative.x - g.x, relative.y - g.y), ang_dist(relative.theta, g.theta))
        if best is None or err[0] + err[1] < best[0] + best[1]:
            best = err
    return best


def is_success(state: WorldState, pair: BlockPair, cfg: SimConfig) -> bool:
    if state.pair_id != pair.id:
        raise ValueError(f"state is for {state.pair_id}, not {pair.id}")
    rel = state.relative
    return any(
        math.hypot(rel.x - g.x, rel.y - g.y) <= cfg.success_pos_tol
        and ang_dist(rel.theta, g.theta) <= cfg.success_ang_tol
        for g in pair.mating_offsets
    )


def sample_goal_state(pair: BlockPair, rng: np.random.Generator, cfg: SimConfig = SimConfig()) -> WorldState:
    h = cfg.goal_halfwidth
    x, y = rng.uniform(-h, h, size=2)
    theta = math.pi - rng.uniform(0.0, 2.0 * math.pi)
    female = Pose2(x, y, theta)
    offset = pair.mating_offsets[rng.integers(len(pair.mating_offsets))]
    return WorldState(pair.id, female, compose(female, offset))


def sample_initial_state(pair: BlockPair, rng: np.random.Generator, min_separation: float = 0.0,
                         cfg: SimConfig = SimConfig(), max_separation: float = math.inf,
                         max_tries: int = 10_000) -> WorldState:
    """Uniform independent placements, rejected until disjoint and far enough apart."""
    if min_separation < 0:
        raise ValueError("min_separation must be >= 0")
    h = cfg.spawn_halfwidth
    for _ in range(max_tries):
        xy = rng.uniform(-h, h, size=4)
        thetas = math.pi - rng.uniform(0.0, 2.0 * math.pi, size=2)
        state = WorldState(pair.id, Pose2(xy[0], xy[1], thetas[0]), Pose2(xy[2], xy[3], thetas[1]))
        sep = state.separation
        if sep < min_separation or sep > max_separation:
            continue
        if sep <= pair.diameter and overlap_depth(state, pair) > 0.0:
            continue
        return state
    raise RuntimeError(f"could not place blocks {min_separation} m apart after {max_tries} tries")


def pusher_overlaps(pair: BlockPair, poses: np.ndarray, x: float, y: float, cfg: SimConfig) -> bool:
    """Whether a pusher lowered at (x, y) would land on either block."""
    lf, cf, lm, cm, _ = _packed(pair, cfg.clearance)
    for local, counts, pose in ((lf, cf, poses[0]), (lm, cm, poses[1])):
        world = np.empty_like(local)
        _kernels.place_parts(local, counts, pose[0], pose[1], pose[2], world)
        if _kernels.circle_overlap(x, y, cfg.pusher_radius, world, counts)[0]:
            return True
    return False


def random_perturbation(state: WorldState, pair: BlockPair, rng: np.random.Generator,
                        cfg: SimConfig = SimConfig()) -> PushAction:
    """A push aimed at a uniformly chosen point inside a uniformly chosen block."""
    which = rng.integers(2)
    pose = state.female_pose if which == 0 else state.male_pose
    poly = pair.polygons[which]
    parts = poly.parts
    areas = np.array([polygon_area(p) for p in parts])
    part = parts[rng.choice(len(parts), p=areas / areas.sum())]
    lo, hi = part.min(axis=0), part.max(axis=0)
    # cells are axis-aligned rectangles in the local frame
    local = lo + rng.uniform(size=2) * (hi - lo)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    target = np.array([pose.x + c * local[0] - s * local[1], pose.y + s * local[0] + c * local[1]])
    radius = float(np.max(np.linalg.norm(poly.vertices, axis=1))) + cfg.pusher_radius + 0.01
    poses = state.as_array()
    # A start that lands on a block would void the push. Back off along the ray
    # past the partner block, and redraw the direction when the action-box clamp
    # pulls the start back onto a block.
    for _ in range(20):
        phi = rng.uniform(0.0, 2.0 * math.pi)
        direction = np.array([math.cos(phi), math.sin(phi)])
        standoff = radius
        while standoff < 1.0 and pusher_overlaps(pair, poses, *(target + standoff * direction), cfg):
            standoff += 0.01
        start = np.clip(target + standoff * direction, ACTION_LOW, ACTION_HIGH)
        if not pusher_overlaps(pair, poses, start[0], start[1], cfg):
            break
    end = np.clip(target - rng.uniform(0.02, 0.08) * direction, ACTION_LOW, ACTION_HIGH)
    return PushAction(tuple(start), tuple(end))


def uniform_action(rng: np.random.Generator) -> PushAction:
    return PushAction.from_array(rng.uniform(ACTION_LOW, ACTION_HIGH, size=4))


def first_contact(pair: BlockPair, poses: np.ndarray, actions: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Pusher travel to first contact with each block for poses (K, 2, 3) and pushes (K, 4).

    Returns (K, 2, 3): travel (inf when the push never touches the block)
    and the pusher center at contact in the block frame.
    """
    lf, cf, lm, cm, _ = _packed(pair, cfg.clearance)
    return _kernels.first_contact(np.ascontiguousarray(poses, dtype=float), np.ascontiguousarray(actions, dtype=float),
                                  lf, cf, lm, cm, cfg.pusher_radius)


def block_sweep(pair: BlockPair, poses: np.ndarray, actions: np.ndarray, first: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Rigid translation along each push before block ``first[k]`` meets the other block."""
    lf, cf, lm, cm, _ = _packed(pair, cfg.clearance)
    return _kernels.block_sweep(np.ascontiguousarray(poses, dtype=float), np.ascontiguousarray(actions, dtype=float),
                                np.ascontiguousarray(first, dtype=np.int64), lf, cf, lm, cm)
