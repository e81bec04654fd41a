"""Reverse-exploration and random-push datasets, feature encodings and file formats."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from trass.blocks import BlockPair
from trass.geometry import Pose2, relative_pose
from trass.sim import (
    PushAction, SimConfig, WorldState, is_success, random_perturbation, sample_goal_state,
    sample_initial_state, step_array, uniform_action,
)

FORMAT_VERSION = 1
EPISODE_LENGTH = 10


@dataclass
class ReverseTrajectory:
    """States already reversed: ``states[-1]`` is the goal the rollout started from.

    ``actions[i]`` is the forward perturbation that produced
    ``states[-(i + 2)]`` from ``states[-(i + 1)]``.
    """

    pair_id: str
    states: list
    actions: list = field(default_factory=list)
    offset_index: int = 0

    def forward_states(self) -> list:
        return self.states[::-1]


@dataclass(frozen=True)
class Transition:
    state: WorldState
    action: PushAction
    next_state: WorldState


def episode_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one shard/episode, derived from the master seed."""
    return np.random.default_rng([seed, *key])


def _by_id(pairs: Sequence[BlockPair]) -> dict:
    return {p.id: p for p in pairs}


def realized_offset(state: WorldState, pair: BlockPair) -> int:
    rel = state.relative
    errs = [math.hypot(rel.x - g.x, rel.y - g.y) + abs(math.remainder(rel.theta - g.theta, 2 * math.pi))
            for g in pair.mating_offsets]
    return int(np.argmin(errs))


def collect_reverse(pairs: Sequence[BlockPair], n_traj: int, M: int, seed: int,
                    cfg: SimConfig = SimConfig()) -> list[ReverseTrajectory]:
    """Start at random goals, apply M random perturbations, store each rollout reversed."""
    if n_traj < 1 or M < 1:
        raise ValueError("n_traj and M must be >= 1")
    out = []
    for i in range(n_traj):
        rng = episode_rng(seed, i)
        pair = pairs[rng.integers(len(pairs))]
        state = sample_goal_state(pair, rng, cfg)
        offset = realized_offset(state, pair)
        states = [state]
        actions = []
        for _ in range(M):
            action = random_perturbation(state, pair, rng, cfg)
            state = WorldState.from_array(pair.id, step_array(pair, state.as_array(), action.as_array(), cfg))
            states.append(state)
            actions.append(action)
        out.append(ReverseTrajectory(pair.id, states[::-1], actions, offset))
    return out


def collect_transitions(pairs: Sequence[BlockPair], n: int, seed: int,
                        cfg: SimConfig = SimConfig(), episode_length: int = EPISODE_LENGTH) -> list[Transition]:
    """Uniform random pushes in short episodes from random initial states."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    episode = 0
    while len(out) < n:
        rng = episode_rng(seed, episode)
        episode += 1
        pair = pairs[rng.integers(len(pairs))]
        state = sample_initial_state(pair, rng, 0.0, cfg)
        for _ in range(min(episode_length, n - len(out))):
            action = uniform_action(rng)
            nxt = WorldState.from_array(pair.id, step_array(pair, state.as_array(), action.as_array(), cfg))
            out.append(Transition(state, action, nxt))
            state = nxt
    return out


def encode_relative(state: WorldState) -> np.ndarray:
    rel = relative_pose(state.female_pose, state.male_pose)
    return np.array([rel.x, rel.y, math.cos(rel.theta), math.sin(rel.theta)])


def decode_relative(v) -> Pose2:
    v = np.asarray(v, dtype=float)
    norm = math.hypot(v[2], v[3])
    if not norm >= 1e-6:
        raise ValueError(f"degenerate angle slot ({v[2]}, {v[3]})")
    return Pose2(v[0], v[1], math.atan2(v[3] / norm, v[2] / norm))


def encode_absolute(state: WorldState) -> np.ndarray:
    f, m = state.female_pose, state.male_pose
    return np.array([f.x, f.y, math.cos(f.theta), math.sin(f.theta),
                     m.x, m.y, math.cos(m.theta), math.sin(m.theta)])


def decode_absolute(v, pair_id: str) -> WorldState:
    return WorldState(pair_id, decode_relative(v[:4]), decode_relative(v[4:]))


def check_reverse_dataset(trajs: Sequence[ReverseTrajectory], pairs: Sequence[BlockPair],
                          cfg: SimConfig = SimConfig()) -> list[int]:
    """Indices of trajectories that fail to end in success or fail to replay exactly."""
    catalog = _by_id(pairs)
    bad = []
    for i, traj in enumerate(trajs):
        pair = catalog[traj.pair_id]
        fwd = traj.forward_states()
        ok = is_success(traj.states[-1], pair, cfg)
        for s0, a, s1 in zip(fwd, traj.actions, fwd[1:]):
            replay = step_array(pair, s0.as_array(), a.as_array(), cfg)
            ok = ok and np.array_equal(WorldState.from_array(pair.id, replay).as_array(), s1.as_array())
        if not ok:
            bad.append(i)
    return bad


# ---------------------------------------------------------------- file formats

def _state_rec(s: WorldState) -> list:
    return [*s.female_pose.as_tuple(), *s.male_pose.as_tuple()]


def _state_from(pair_id: str, rec) -> WorldState:
    return WorldState(pair_id, Pose2(*rec[:3]), Pose2(*rec[3:]))


def _header(kind: str, cfg: SimConfig, seed: int, **extra) -> str:
    head = {"format": kind, "version": FORMAT_VERSION, "sim_config": asdict(cfg), "seed": seed}
    head.update(extra)
    return json.dumps(head, sort_keys=True)


def write_reverse(path, trajs: Sequence[ReverseTrajectory], cfg: SimConfig, seed: int) -> None:
    lines = [_header("reverse", cfg, seed, count=len(trajs))]
    for t in trajs:
        lines.append(json.dumps({
            "pair_id": t.pair_id,
            "offset_index": t.offset_index,
            "states": [_state_rec(s) for s in t.states],
            "actions": [list(a.as_array()) for a in t.actions],
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_lines(path, kind: str):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    head = json.loads(lines[0])
    if head.get("format") != kind or head.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: expected {kind} v{FORMAT_VERSION}, got {head.get('format')}")
    return head, [json.loads(line) for line in lines[1:] if line.strip()]


def read_reverse(path) -> tuple[list[ReverseTrajectory], dict]:
    head, recs = _read_lines(path, "reverse")
    trajs = [
        ReverseTrajectory(
            r["pair_id"],
            [_state_from(r["pair_id"], s) for s in r["states"]],
            [PushAction.from_array(a) for a in r["actions"]],
            r["offset_index"],
        )
        for r in recs
    ]
    return trajs, head


def write_transitions(path, transitions: Sequence[Transition], cfg: SimConfig, seed: int) -> None:
    lines = [_header("transitions", cfg, seed, count=len(transitions))]
    for t in transitions:
        lines.append(json.dumps({
            "pair_id": t.state.pair_id,
            "state": _state_rec(t.state),
            "action": list(t.action.as_array()),
            "next_state": _state_rec(t.next_state),
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_transitions(path) -> tuple[list[Transition], dict]:
    head, recs = _read_lines(path, "transitions")
    out = [
        Transition(_state_from(r["pair_id"], r["state"]), PushAction.from_array(r["action"]),
                   _state_from(r["pair_id"], r["next_state"]))
        for r in recs
    ]
    return out, head


def sim_config_from_header(head: dict) -> SimConfig:
    return SimConfig(**head["sim_config"])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
