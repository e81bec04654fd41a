import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trass.blocks import enumerate_pairs, split_catalog
from trass.data import (
    check_reverse_dataset, collect_reverse, collect_transitions, decode_absolute, decode_relative,
    encode_absolute, encode_relative, read_reverse, read_transitions, write_reverse, write_transitions,
)
from trass.geometry import Pose2, compose
from trass.sim import SimConfig, WorldState, is_success, sample_initial_state, step

CFG = SimConfig()
SEEN, _ = split_catalog(enumerate_pairs(), 0)

angles = st.floats(-math.pi, math.pi)
coords = st.floats(-0.5, 0.5)


@pytest.fixture(scope="module")
def reverse():
    return collect_reverse(SEEN, 60, 12, seed=3, cfg=CFG)


def test_reverse_shape_and_goal_last(reverse):
    assert len(reverse) == 60
    catalog = {p.id: p for p in SEEN}
    for t in reverse:
        assert len(t.states) == 13 and len(t.actions) == 12
        assert is_success(t.states[-1], catalog[t.pair_id], CFG)
        assert all(a.in_bounds() for a in t.actions)


def test_reverse_replays_exactly(reverse):
    assert check_reverse_dataset(reverse, SEEN, CFG) == []
    broken = [replace(t, states=list(t.states)) for t in reverse[:3]]
    broken[1].states[4] = broken[1].states[5]
    assert 1 in check_reverse_dataset(broken, SEEN, CFG)


def test_reverse_start_distribution_resembles_initial_states():
    trajs = collect_reverse(SEEN, 200, 12, seed=4, cfg=CFG)
    rng = np.random.default_rng(0)
    starts = np.mean([t.states[0].separation for t in trajs])
    initial = np.mean([sample_initial_state(SEEN[i % len(SEEN)], rng, 0.0, CFG).separation for i in range(200)])
    assert 0.5 <= starts / initial <= 2.0


def test_collection_rejects_bad_sizes():
    with pytest.raises(ValueError):
        collect_reverse(SEEN, 0, 12, 0)
    with pytest.raises(ValueError):
        collect_reverse(SEEN, 2, 0, 0)
    with pytest.raises(ValueError):
        collect_transitions(SEEN, 0, 0)


def test_transitions_are_simulator_consistent():
    trans = collect_transitions(SEEN, 95, seed=2, cfg=CFG)
    assert len(trans) == 95
    catalog = {p.id: p for p in SEEN}
    for t in trans:
        assert np.all(np.abs(t.action.as_array()) <= 0.2)
        assert step(t.state, t.action, catalog[t.state.pair_id], CFG) == t.next_state
    # episodes of ten chained pushes
    assert trans[1].state == trans[0].next_state


def test_files_round_trip_and_are_deterministic(tmp_path, reverse):
    write_reverse(tmp_path / "a.jsonl", reverse, CFG, 3)
    write_reverse(tmp_path / "b.jsonl", collect_reverse(SEEN, 60, 12, seed=3, cfg=CFG), CFG, 3)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back, head = read_reverse(tmp_path / "a.jsonl")
    assert head["seed"] == 3 and head["sim_config"]["workspace_halfwidth"] == CFG.workspace_halfwidth
    for a, b in zip(reverse, back):
        assert a.states == b.states and a.actions == b.actions and a.offset_index == b.offset_index

    trans = collect_transitions(SEEN, 30, seed=1, cfg=CFG)
    write_transitions(tmp_path / "t.jsonl", trans, CFG, 1)
    again, _ = read_transitions(tmp_path / "t.jsonl")
    assert again == trans
    with pytest.raises(ValueError):
        read_transitions(tmp_path / "a.jsonl")


def test_relative_encoding_examples():
    pair = SEEN[0]
    g = pair.mating_offsets[0]
    f = Pose2(0.1, -0.1, 0.7)
    v = encode_relative(WorldState(pair.id, f, compose(f, g)))
    np.testing.assert_allclose(v, [g.x, g.y, math.cos(g.theta), math.sin(g.theta)], atol=1e-12)
    np.testing.assert_array_equal(encode_relative(WorldState(pair.id, f, f)), [0, 0, 1, 0])
    assert decode_relative([0, 0, 2, 0]) == Pose2(0, 0, 0)
    with pytest.raises(ValueError):
        decode_relative([1, 1, 0, 0])


@given(coords, coords, angles, coords, coords, angles, coords, coords, angles)
def test_relative_encoding_is_rigid_invariant(x0, y0, t0, x1, y1, t1, gx, gy, gt):
    s = WorldState("p", Pose2(x0, y0, t0), Pose2(x1, y1, t1))
    g = Pose2(gx, gy, gt)
    moved = WorldState("p", compose(g, s.female_pose), compose(g, s.male_pose))
    np.testing.assert_allclose(encode_relative(moved), encode_relative(s), atol=1e-9)
    v = encode_relative(s)
    assert v[2] ** 2 + v[3] ** 2 == pytest.approx(1.0, abs=1e-9)


@given(coords, coords, angles, coords, coords, angles)
def test_decode_inverts_encode(x0, y0, t0, x1, y1, t1):
    s = WorldState("p", Pose2(x0, y0, t0), Pose2(x1, y1, t1))
    rel = decode_relative(encode_relative(s))
    assert abs(rel.x - s.relative.x) < 1e-9 and abs(rel.y - s.relative.y) < 1e-9
    assert abs(math.remainder(rel.theta - s.relative.theta, 2 * math.pi)) < 1e-9
    back = decode_absolute(encode_absolute(s), "p")
    np.testing.assert_allclose(back.as_array()[:, :2], s.as_array()[:, :2], atol=1e-12)
