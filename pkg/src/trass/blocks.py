"""Tetris-style block pairs: two connected pieces that complete a 3x3 square."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from pathlib import Path
from typing import Iterable

import numpy as np

from trass.geometry import Polygon, Pose2

CELL_SIZE = 0.05
SQUARE = frozenset(product(range(3), range(3)))

Cell = tuple[int, int]


def is_connected(cells: Iterable[Cell]) -> bool:
    cells = set(cells)
    if not cells:
        return False
    start = next(iter(cells))
    seen = {start}
    stack = [start]
    while stack:
        x, y = stack.pop()
        for nxt in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if nxt in cells and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(cells)


@dataclass(frozen=True)
class BlockShape:
    """Edge-connected set of unit cells; the local frame sits at the cell centroid."""

    cells: frozenset

    def __post_init__(self):
        cells = frozenset((int(x), int(y)) for x, y in self.cells)
        if len(cells) < 3 or not is_connected(cells):
            raise ValueError(f"shape must be >= 3 edge-connected cells, got {sorted(cells)}")
        object.__setattr__(self, "cells", cells)

    @property
    def centroid(self) -> np.ndarray:
        return np.mean(np.array(sorted(self.cells), dtype=float), axis=0)

    def local_cells(self, cell_size: float = CELL_SIZE) -> np.ndarray:
        """Cell centers in the local frame, in meters."""
        return (np.array(sorted(self.cells), dtype=float) - self.centroid) * cell_size

    def sorted_cells(self) -> list[Cell]:
        return sorted(self.cells)


def _rotate_cell(cell: Cell, k: int) -> Cell:
    x, y = cell
    for _ in range(k % 4):
        x, y = -y, x
    return (x, y)


def _turn_square(cells: Iterable[Cell], k: int) -> frozenset:
    # quarter turns about the center of the 3x3 square
    return frozenset((x + 2 * (k % 4 in (1, 2)), y + 2 * (k % 4 in (2, 3)))
                     for x, y in (_rotate_cell(c, k) for c in cells))


def rotational_symmetries(shape: BlockShape) -> tuple[int, ...]:
    """Quarter turns k (about the centroid) that map the shape onto itself."""
    cells = shape.sorted_cells()
    out = []
    for k in range(4):
        rotated = [_rotate_cell(c, k) for c in cells]
        dx = min(c[0] for c in cells) - min(c[0] for c in rotated)
        dy = min(c[1] for c in cells) - min(c[1] for c in rotated)
        if sorted((x + dx, y + dy) for x, y in rotated) == cells:
            out.append(k)
    return tuple(out)


def mating_offsets(female: BlockShape, male: BlockShape, cell_size: float = CELL_SIZE) -> list[Pose2]:
    """All quarter-turn, whole-cell placements of ``male`` that complete a 3x3 square."""
    fcells = female.cells
    fx = [c[0] for c in fcells]
    fy = [c[1] for c in fcells]
    fc = female.centroid
    mc = male.centroid
    offsets = []
    for k in range(4):
        rotated = [_rotate_cell(c, k) for c in male.sorted_cells()]
        rx = [c[0] for c in rotated]
        ry = [c[1] for c in rotated]
        for sx in range(min(fx) - max(rx) - 3, max(fx) - min(rx) + 4):
            for sy in range(min(fy) - max(ry) - 3, max(fy) - min(ry) + 4):
                placed = {(x + sx, y + sy) for x, y in rotated}
                if placed & fcells:
                    continue
                union = placed | fcells
                ux = min(c[0] for c in union)
                uy = min(c[1] for c in union)
                if union != {(x + ux, y + uy) for x, y in SQUARE}:
                    continue
                c, s = (round(math.cos(k * math.pi / 2)), round(math.sin(k * math.pi / 2)))
                mcx = c * mc[0] - s * mc[1] + sx
                mcy = s * mc[0] + c * mc[1] + sy
                offsets.append(
                    Pose2((mcx - fc[0]) * cell_size, (mcy - fc[1]) * cell_size, k * math.pi / 2)
                )
    if not offsets:
        raise ValueError("pieces do not mate into a 3x3 square")
    return offsets


@dataclass(frozen=True, eq=False)
class BlockPair:
    female: BlockShape
    male: BlockShape
    mating_offsets: tuple = field(default=())
    id: str = ""
    cell_size: float = CELL_SIZE

    def __post_init__(self):
        if not self.mating_offsets:
            object.__setattr__(
                self, "mating_offsets", tuple(mating_offsets(self.female, self.male, self.cell_size))
            )
        if not self.id:
            object.__setattr__(self, "id", pair_id(self.female))

    def __eq__(self, other):
        return isinstance(other, BlockPair) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    @cached_property
    def polygons(self) -> tuple[Polygon, Polygon]:
        return shape_polygon(self.female, self.cell_size), shape_polygon(self.male, self.cell_size)

    @cached_property
    def female_occupancy(self) -> np.ndarray:
        """Female cells as a 9-vector over the square, row-major; a shape descriptor."""
        return np.array([1.0 if (x, y) in self.female.cells else 0.0
                         for y in range(3) for x in range(3)])

    @cached_property
    def canonical_turn(self) -> tuple[int, "BlockPair"]:
        """Quarter turn k of the whole square that brings the female cells to their
        smallest orientation, and the pair so turned. Turned pairs are the same
        physical blocks, seen in frames rotated by k quarter turns."""
        best = min(range(4), key=lambda k: sorted(_turn_square(self.female.cells, k)))
        if best == 0:
            return 0, self
        turned = BlockPair(BlockShape(_turn_square(self.female.cells, best)),
                           BlockShape(_turn_square(self.male.cells, best)), cell_size=self.cell_size)
        return best, turned

    @cached_property
    def symmetries(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return rotational_symmetries(self.female), rotational_symmetries(self.male)

    @cached_property
    def diameter(self) -> float:
        fr = np.max(np.linalg.norm(self.polygons[0].vertices, axis=1))
        mr = np.max(np.linalg.norm(self.polygons[1].vertices, axis=1))
        return float(fr + mr)


def pair_id(female: BlockShape) -> str:
    bits = "".join("1" if (x, y) in female.cells else "0" for y in range(3) for x in range(3))
    return f"pair-{bits}"


def _label(a: frozenset, b: frozenset) -> tuple[frozenset, frozenset]:
    if len(a) != len(b):
        return (a, b) if len(a) > len(b) else (b, a)
    return (a, b) if sorted(a) < sorted(b) else (b, a)


def enumerate_pairs(min_cells: int = 3, cell_size: float = CELL_SIZE) -> list[BlockPair]:
    """Every split of the 3x3 square into two connected pieces of >= min_cells cells."""
    if not 3 <= min_cells <= 4:
        raise ValueError("min_cells must be 3 or 4")
    ordered = sorted(SQUARE)
    seen = set()
    pairs = []
    for mask in range(1, 2**9 - 1):
        piece = frozenset(c for i, c in enumerate(ordered) if mask >> i & 1)
        rest = SQUARE - piece
        if len(piece) < min_cells or len(rest) < min_cells:
            continue
        if not (is_connected(piece) and is_connected(rest)):
            continue
        female, male = _label(piece, rest)
        if female in seen:
            continue
        seen.add(female)
        pairs.append(BlockPair(BlockShape(female), BlockShape(male), cell_size=cell_size))
    return sorted(pairs, key=lambda p: p.id)


def split_catalog(pairs: list[BlockPair], seed: int, unseen_fraction: float = 0.2):
    """Deterministic seen/unseen partition keyed on (pair id, seed)."""
    if len(pairs) < 2:
        raise ValueError("need at least two pairs to split")
    if not 0.0 < unseen_fraction < 1.0:
        raise ValueError("unseen_fraction must be in (0, 1)")
    n_unseen = min(len(pairs) - 1, max(1, round(unseen_fraction * len(pairs))))

    def key(p):
        return hashlib.sha256(f"{seed}:{p.id}".encode()).hexdigest()

    unseen_ids = {p.id for p in sorted(pairs, key=key)[:n_unseen]}
    seen = [p for p in pairs if p.id not in unseen_ids]
    unseen = [p for p in pairs if p.id in unseen_ids]
    return seen, unseen


def _outline(cells: frozenset) -> list[tuple[int, int]]:
    # directed CCW unit edges of every cell; interior edges cancel in pairs
    edges = set()
    for x, y in cells:
        for e in (((x, y), (x + 1, y)), ((x + 1, y), (x + 1, y + 1)),
                  ((x + 1, y + 1), (x, y + 1)), ((x, y + 1), (x, y))):
            rev = (e[1], e[0])
            if rev in edges:
                edges.remove(rev)
            else:
                edges.add(e)
    outgoing: dict = {}
    for a, b in edges:
        outgoing.setdefault(a, []).append(b)
    start = min(outgoing)
    loop = [start]
    prev_dir = (1, 0)
    cur = start
    while True:
        options = outgoing[cur]
        if len(options) == 1:
            nxt = options.pop()
        else:
            # pinch vertex: keep the boundary hugging the piece by turning left first
            def turn(b):
                d = (b[0] - cur[0], b[1] - cur[1])
                return -(prev_dir[0] * d[1] - prev_dir[1] * d[0])
            options.sort(key=turn)
            nxt = options.pop(0)
        prev_dir = (nxt[0] - cur[0], nxt[1] - cur[1])
        cur = nxt
        if cur == start:
            break
        loop.append(cur)
    # drop collinear vertices
    out = []
    n = len(loop)
    for i in range(n):
        a, b, c = loop[i - 1], loop[i], loop[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            out.append(b)
    return out


def shape_polygon(shape: BlockShape, cell_size: float = CELL_SIZE) -> Polygon:
    """Outer outline of the shape in its local frame, with one convex part per cell."""
    origin = shape.centroid + 0.5
    verts = (np.array(_outline(shape.cells), dtype=float) - origin) * cell_size
    half = 0.5 * cell_size
    square = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    parts = tuple(square + c for c in shape.local_cells(cell_size))
    return Polygon(verts, parts)


def collision_parts(shape: BlockShape, cell_size: float = CELL_SIZE,
                    clearance: float = 0.0) -> list[np.ndarray]:
    """Per-cell rectangles with exterior sides inset by ``clearance``.

    Interior sides are left flush so the union stays free of slits.
    """
    half = 0.5 * cell_size
    parts = []
    for (x, y), center in zip(shape.sorted_cells(), shape.local_cells(cell_size)):
        x0 = -half + (clearance if (x - 1, y) not in shape.cells else 0.0)
        x1 = half - (clearance if (x + 1, y) not in shape.cells else 0.0)
        y0 = -half + (clearance if (x, y - 1) not in shape.cells else 0.0)
        y1 = half - (clearance if (x, y + 1) not in shape.cells else 0.0)
        parts.append(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]) + center)
    return parts


def write_catalog(pairs: list[BlockPair], path) -> None:
    """One JSON record per line; floats use shortest round-trip form."""
    lines = []
    for p in pairs:
        rec = {
            "id": p.id,
            "female": [list(c) for c in p.female.sorted_cells()],
            "male": [list(c) for c in p.male.sorted_cells()],
            "mating_offsets": [[float(o.x), float(o.y), float(o.theta)] for o in p.mating_offsets],
            "cell_size": p.cell_size,
        }
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_catalog(path) -> list[BlockPair]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        pairs.append(BlockPair(
            BlockShape(frozenset(map(tuple, rec["female"]))),
            BlockShape(frozenset(map(tuple, rec["male"]))),
            tuple(Pose2(*o) for o in rec["mating_offsets"]),
            rec["id"],
            rec.get("cell_size", CELL_SIZE),
        ))
    return pairs
