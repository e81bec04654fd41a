import math
from itertools import product

import numpy as np
import pytest

from trass.blocks import (
    SQUARE, BlockPair, BlockShape, enumerate_pairs, mating_offsets, read_catalog, rotational_symmetries,
    shape_polygon, split_catalog, write_catalog,
)
from trass.geometry import Pose2, compose, invert


def connected(cells):
    cells = set(cells)
    if not cells:
        return False
    todo, seen = [next(iter(cells))], set()
    while todo:
        c = todo.pop()
        if c in seen:
            continue
        seen.add(c)
        todo += [n for n in ((c[0] + 1, c[1]), (c[0] - 1, c[1]), (c[0], c[1] + 1), (c[0], c[1] - 1))
                 if n in cells]
    return seen == cells


def brute_force_pair_count(min_cells):
    cells = sorted(SQUARE)
    found = set()
    for mask in range(2**9):
        a = frozenset(c for i, c in enumerate(cells) if mask >> i & 1)
        b = frozenset(SQUARE - a)
        if len(a) >= min_cells and len(b) >= min_cells and connected(a) and connected(b):
            found.add(frozenset((a, b)))
    return len(found)


def placed_cells(pair, offset):
    """Male cells, in female grid coordinates, after applying ``offset``."""
    fc = pair.female.centroid
    out = set()
    c, s = math.cos(offset.theta), math.sin(offset.theta)
    for lx, ly in pair.male.local_cells(1.0):
        x = offset.x / pair.cell_size + c * lx - s * ly + fc[0]
        y = offset.y / pair.cell_size + s * lx + c * ly + fc[1]
        out.add((round(x), round(y)))
        assert abs(x - round(x)) < 1e-9 and abs(y - round(y)) < 1e-9
    return out


def brute_force_offsets(pair):
    """Every quarter turn and whole-cell shift within 4 cells that tiles the square."""
    fc, mc = pair.female.centroid, pair.male.centroid
    found = []
    for k, sx, sy in product(range(4), range(-4, 5), range(-4, 5)):
        c, s = round(math.cos(k * math.pi / 2)), round(math.sin(k * math.pi / 2))
        cells = {(c * x - s * y + sx, s * x + c * y + sy) for x, y in pair.male.cells}
        union = cells | set(pair.female.cells)
        xs, ys = [u[0] for u in union], [u[1] for u in union]
        if len(union) == 9 and max(xs) - min(xs) == 2 and max(ys) - min(ys) == 2:
            tx = c * mc[0] - s * mc[1] + sx - fc[0]
            ty = s * mc[0] + c * mc[1] + sy - fc[1]
            found.append(Pose2(tx * pair.cell_size, ty * pair.cell_size, k * math.pi / 2))
    return found


def as_key(p: Pose2):
    return (round(p.x, 9), round(p.y, 9), round(math.remainder(p.theta, 2 * math.pi), 9) % round(2 * math.pi, 9))


def test_shape_requires_connected_cells():
    with pytest.raises(ValueError):
        BlockShape(frozenset({(0, 0), (2, 0), (0, 2)}))
    with pytest.raises(ValueError):
        BlockShape(frozenset({(0, 0), (1, 0)}))


@pytest.mark.parametrize("min_cells", [3, 4])
def test_enumeration_matches_brute_force(min_cells):
    pairs = enumerate_pairs(min_cells)
    assert len(pairs) == brute_force_pair_count(min_cells)
    assert [p.id for p in pairs] == sorted(p.id for p in pairs)
    assert len({p.id for p in pairs}) == len(pairs)


def test_enumerate_rejects_bad_min_cells():
    with pytest.raises(ValueError):
        enumerate_pairs(2)


def test_documented_pair_is_listed():
    female = frozenset({(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2)})
    male = frozenset({(2, 1), (1, 2), (2, 2)})
    pair = next(p for p in enumerate_pairs() if p.female.cells == female)
    assert pair.male.cells == male


def test_labels_larger_piece_female():
    for p in enumerate_pairs():
        assert len(p.female.cells) >= len(p.male.cells)
        assert p.female.cells | p.male.cells == SQUARE


def test_offsets_match_brute_force_and_tile_square():
    for pair in enumerate_pairs():
        offsets = pair.mating_offsets
        assert offsets
        assert {as_key(o) for o in offsets} == {as_key(o) for o in brute_force_offsets(pair)}
        for o in offsets:
            assert min(abs(math.remainder(o.theta - k * math.pi / 2, 2 * math.pi)) for k in range(4)) < 1e-12
            assert len(placed_cells(pair, o) | set(pair.female.cells)) == 9


def test_symmetric_bar_has_offsets_half_a_turn_apart():
    # a middle-row bar would split its complement, so use the edge row
    bar = BlockShape(frozenset({(0, 0), (1, 0), (2, 0)}))
    rest = BlockShape(SQUARE - bar.cells)
    offsets = mating_offsets(rest, bar)
    assert len(offsets) >= 2
    thetas = sorted(o.theta for o in offsets)
    assert any(abs(abs(a - b) - math.pi) < 1e-9 for a in thetas for b in thetas)


def test_invalid_pair_raises():
    a = BlockShape(frozenset({(0, 0), (1, 0), (2, 0)}))
    with pytest.raises(ValueError):
        mating_offsets(a, a)


def test_rotational_symmetries():
    assert rotational_symmetries(BlockShape(frozenset({(0, 1), (1, 1), (2, 1)}))) == (0, 2)
    assert rotational_symmetries(BlockShape(frozenset({(0, 0), (1, 0), (0, 1)}))) == (0,)
    plus = BlockShape(frozenset({(1, 0), (0, 1), (1, 1), (2, 1), (1, 2)}))
    assert rotational_symmetries(plus) == (0, 1, 2, 3)


def test_canonical_turn_groups_rotated_copies():
    pairs = enumerate_pairs()
    ids = {p.id for p in pairs}
    canon = {p.canonical_turn[1].id for p in pairs}
    assert len(canon) == 8 and canon <= ids
    for pair in pairs:
        k, turned = pair.canonical_turn
        assert turned.canonical_turn[0] == 0
        # the same physical offsets, seen in frames turned by k quarter turns
        q = Pose2(0.0, 0.0, k * math.pi / 2)
        got = sorted(as_key(compose(compose(q, o), invert(q))) for o in pair.mating_offsets)
        assert got == sorted(as_key(o) for o in turned.mating_offsets)


def test_shape_polygon_examples():
    one = shape_polygon(BlockShape(frozenset({(0, 0), (1, 0), (2, 0)})), 0.05)
    assert one.area == pytest.approx(0.0075)
    span = one.vertices.max(axis=0) - one.vertices.min(axis=0)
    np.testing.assert_allclose(sorted(span), [0.05, 0.15])
    for p in enumerate_pairs():
        for shape, poly in zip((p.female, p.male), p.polygons):
            assert poly.area == pytest.approx(len(shape.cells) * 0.0025)
            v, w = poly.vertices, np.roll(poly.vertices, -1, axis=0)
            cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
            centroid = ((v + w) * cross[:, None]).sum(axis=0) / (6 * poly.area)
            np.testing.assert_allclose(centroid, 0, atol=1e-12)


def test_split_sizes_and_determinism():
    pairs = enumerate_pairs()[:10]
    seen, unseen = split_catalog(pairs, 3, 0.2)
    assert (len(seen), len(unseen)) == (8, 2)
    assert split_catalog(pairs, 3, 0.2) == (seen, unseen)
    for seed in (1, 2):
        s, u = split_catalog(pairs, seed, 0.2)
        assert len(u) == 2
        assert {p.id for p in s} | {p.id for p in u} == {p.id for p in pairs}
        assert not {p.id for p in s} & {p.id for p in u}


def test_split_rejects_bad_input():
    pairs = enumerate_pairs()
    with pytest.raises(ValueError):
        split_catalog(pairs[:1], 0)
    with pytest.raises(ValueError):
        split_catalog(pairs, 0, 1.0)


def test_catalog_round_trip(tmp_path):
    pairs = enumerate_pairs()
    write_catalog(pairs, tmp_path / "c.jsonl")
    back = read_catalog(tmp_path / "c.jsonl")
    assert [p.id for p in back] == [p.id for p in pairs]
    for a, b in zip(pairs, back):
        assert a.female.cells == b.female.cells and a.male.cells == b.male.cells
        assert [o.as_tuple() for o in a.mating_offsets] == [o.as_tuple() for o in b.mating_offsets]
    write_catalog(back, tmp_path / "d.jsonl")
    assert (tmp_path / "c.jsonl").read_bytes() == (tmp_path / "d.jsonl").read_bytes()


def test_pair_equality_is_by_id():
    a, b = enumerate_pairs()[0], enumerate_pairs()[0]
    assert a == b and hash(a) == hash(b)
    assert isinstance(a, BlockPair)
