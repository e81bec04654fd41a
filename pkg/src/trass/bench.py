"""Experiment harness: seeded evaluation episodes, result tables and PPM rendering."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from trass.blocks import BlockPair, enumerate_pairs, split_catalog
from trass.geometry import Pose2, compose
from trass.plan import CemConfig, OracleDynamics, PolicyKind, run_episode
from trass.sim import SimConfig, WorldState, sample_initial_state


class Variant(str, enum.Enum):
    SEEN = "seen"
    SEEN_FAR = "seen-far"
    UNSEEN = "unseen"


MIN_SEPARATION = {Variant.SEEN: 0.10, Variant.SEEN_FAR: 0.30, Variant.UNSEEN: 0.10}
_VARIANT_KEY = {Variant.SEEN: 0, Variant.SEEN_FAR: 1, Variant.UNSEEN: 2}
_KIND_KEY = {PolicyKind.TRM: 0, PolicyKind.SHAPED_HULL: 1, PolicyKind.GROUND_TRUTH: 2}


def success_rate_with_se(successes: int, episodes: int) -> tuple[float, float]:
    """Binomial rate and its standard error."""
    if episodes < 1 or not 0 <= successes <= episodes:
        raise ValueError(f"need 0 <= successes <= episodes and episodes >= 1, got {successes}/{episodes}")
    rate = successes / episodes
    return rate, math.sqrt(rate * (1.0 - rate) / episodes)


@dataclass(frozen=True)
class ExperimentSpec:
    variants: tuple = (Variant.SEEN,)
    kinds: tuple = (PolicyKind.TRM, PolicyKind.SHAPED_HULL, PolicyKind.GROUND_TRUTH)
    episodes: int = 100
    seed: int = 0
    dynamics: str = "learned"
    trm_checkpoint: Optional[str] = None
    dynamics_checkpoints: tuple = ()
    split_seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    cem: CemConfig = field(default_factory=CemConfig)

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.dynamics not in ("learned", "oracle"):
            raise ValueError(f"dynamics must be 'learned' or 'oracle', got {self.dynamics!r}")
        object.__setattr__(self, "variants", tuple(Variant(v) for v in self.variants))
        object.__setattr__(self, "kinds", tuple(PolicyKind(k) for k in self.kinds))
        object.__setattr__(self, "dynamics_checkpoints", tuple(str(p) for p in self.dynamics_checkpoints))
        if not self.variants or not self.kinds:
            raise ValueError("at least one variant and one policy kind are required")

    def digest(self) -> str:
        rec = asdict(self)
        rec["variants"] = [v.value for v in self.variants]
        rec["kinds"] = [k.value for k in self.kinds]
        return hashlib.sha256(json.dumps(rec, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class Cell:
    variant: Variant
    kind: PolicyKind
    successes: int
    episodes: int

    @property
    def rate(self) -> float:
        return success_rate_with_se(self.successes, self.episodes)[0]

    @property
    def se(self) -> float:
        return success_rate_with_se(self.successes, self.episodes)[1]


@dataclass
class ResultsTable:
    cells: list
    provenance: dict = field(default_factory=dict)

    def cell(self, variant, kind) -> Cell:
        variant, kind = Variant(variant), PolicyKind(kind)
        for c in self.cells:
            if c.variant is variant and c.kind is kind:
                return c
        raise KeyError(f"no cell for ({variant.value}, {kind.value})")

    def rate(self, variant, kind) -> float:
        return self.cell(variant, kind).rate

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "kind", "successes", "episodes", "rate", "se"])
        for c in self.cells:
            w.writerow([c.variant.value, c.kind.value, c.successes, c.episodes, repr(c.rate), repr(c.se)])
        return buf.getvalue()

    def write(self, path) -> tuple[Path, Path]:
        """CSV at ``path`` plus a JSON sidecar with provenance next to it."""
        path = Path(path)
        path.write_text(self.to_csv())
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(self.provenance, sort_keys=True, indent=1) + "\n")
        return path, sidecar


def episode_seeds(master: int, variant: Variant, kind: PolicyKind, index: int):
    """(initial-state rng, planner rng). The initial state ignores the kind, so
    every policy faces the same starts."""
    v = _VARIANT_KEY[Variant(variant)]
    k = _KIND_KEY[PolicyKind(kind)]
    return np.random.default_rng([master, v, index]), np.random.default_rng([master, v, index, k])


def _require(path, what: str) -> Path:
    if path is None:
        raise FileNotFoundError(f"missing {what} checkpoint: none given")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing {what} checkpoint: {path}")
    return path


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_models(spec: ExperimentSpec):
    """(trm, dynamics, checkpoint digests) as required by ``spec``."""
    from trass.learn import DynamicsEnsemble, load_checkpoint

    digests = {}
    trm = None
    if PolicyKind.TRM in spec.kinds:
        path = _require(spec.trm_checkpoint, "time-reversal model")
        trm = load_checkpoint(path)[0]
        digests[str(path)] = _file_digest(path)
    if spec.dynamics == "oracle":
        return trm, OracleDynamics(spec.sim), digests
    if not spec.dynamics_checkpoints:
        _require(None, "dynamics model")
    members = []
    for p in spec.dynamics_checkpoints:
        path = _require(p, "dynamics model")
        members.append(load_checkpoint(path)[0])
        digests[str(path)] = _file_digest(path)
    dyn = members[0] if len(members) == 1 else DynamicsEnsemble(members)
    return trm, dyn, digests


def run_experiment(spec: ExperimentSpec, pairs: Optional[Sequence[BlockPair]] = None,
                   trm=None, dynamics=None) -> ResultsTable:
    """Run every (variant, kind) cell; models passed in override the spec's checkpoints."""
    pairs = list(pairs) if pairs is not None else enumerate_pairs()
    seen, unseen = split_catalog(pairs, spec.split_seed)
    digests = {}
    if dynamics is None or (trm is None and PolicyKind.TRM in spec.kinds):
        loaded_trm, loaded_dyn, digests = load_models(spec)
        trm = trm if trm is not None else loaded_trm
        dynamics = dynamics if dynamics is not None else loaded_dyn
    cells = []
    for variant in spec.variants:
        pool = unseen if variant is Variant.UNSEEN else seen
        for kind in spec.kinds:
            wins = 0
            for i in range(spec.episodes):
                init_rng, plan_rng = episode_seeds(spec.seed, variant, kind, i)
                pair = pool[init_rng.integers(len(pool))]
                start = sample_initial_state(pair, init_rng, MIN_SEPARATION[variant], spec.sim)
                result = run_episode(pair, start, kind, dynamics, plan_rng, trm=trm,
                                     sim_cfg=spec.sim, cem_cfg=spec.cem)
                wins += result.success
            cells.append(Cell(variant, kind, wins, spec.episodes))
    provenance = {
        "spec_digest": spec.digest(),
        "seed": spec.seed,
        "split_seed": spec.split_seed,
        "episodes": spec.episodes,
        "dynamics": spec.dynamics,
        "sim_config": asdict(spec.sim),
        "cem_config": asdict(spec.cem),
        "checkpoints": digests,
        "unseen_pairs": [p.id for p in unseen],
    }
    return ResultsTable(cells, provenance)


# ---------------------------------------------------------------- rendering

BACKGROUND = (255, 255, 255)
FEMALE_FILL = (214, 96, 77)
MALE_FILL = (67, 147, 195)
BOUNDARY = (0, 0, 0)
PATH_COLOR = (60, 160, 60)


def _pixel_centers(size: int, extent: float) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size) + 0.5) / size * 2 * extent - extent
    x, y = np.meshgrid(coords, coords[::-1])
    return x, y


def _fill_parts(img, px, py, pose: Pose2, parts, color):
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    # pixel centers in the block frame
    lx = c * (px - pose.x) + s * (py - pose.y)
    ly = -s * (px - pose.x) + c * (py - pose.y)
    mask = np.zeros(px.shape, dtype=bool)
    for part in parts:
        inside = np.ones(px.shape, dtype=bool)
        for a, b in zip(part, np.roll(part, -1, axis=0)):
            inside &= (b[0] - a[0]) * (ly - a[1]) - (b[1] - a[1]) * (lx - a[0]) >= 0
        mask |= inside
    img[mask] = color
    return int(mask.sum())


def _write_ppm(img: np.ndarray, path) -> Path:
    h, w, _ = img.shape
    rows = [" ".join(str(v) for v in row.ravel()) for row in img]
    path = Path(path)
    path.write_text(f"P3\n{w} {h}\n255\n" + "\n".join(rows) + "\n")
    return path


def rasterize(state: WorldState, pair: BlockPair, size: int = 400, cfg: SimConfig = SimConfig(),
              trm_trajectory: Optional[Sequence[Pose2]] = None) -> np.ndarray:
    """(size, size, 3) uint8 top-down image of the workspace, with a one-pixel margin frame."""
    if size < 8:
        raise ValueError("size must be >= 8")
    extent = cfg.workspace_halfwidth * size / (size - 2)
    px, py = _pixel_centers(size, extent)
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    img[0, :] = img[-1, :] = img[:, 0] = img[:, -1] = BOUNDARY
    female, male = pair.polygons
    _fill_parts(img, px, py, state.female_pose, female.parts, FEMALE_FILL)
    _fill_parts(img, px, py, state.male_pose, male.parts, MALE_FILL)
    if trm_trajectory:
        scale = size / (2 * extent)
        for rel in trm_trajectory:
            world = compose(state.female_pose, rel)
            col = int(math.floor((world.x + extent) * scale))
            row = size - 1 - int(math.floor((world.y + extent) * scale))
            img[max(row - 1, 0):row + 2, max(col - 1, 0):col + 2] = PATH_COLOR
    return img


def render_state(state: WorldState, pair: BlockPair, path, trm_trajectory: Optional[Sequence[Pose2]] = None,
                 size: int = 400, cfg: SimConfig = SimConfig()) -> Path:
    """Write a plain (P3) PPM of the scene; blocks outside the workspace are clipped."""
    return _write_ppm(rasterize(state, pair, size, cfg, trm_trajectory), path)


def render_trajectory(trace: Sequence[WorldState], pair: BlockPair, directory,
                      size: int = 400, cfg: SimConfig = SimConfig()) -> list[Path]:
    if not trace:
        raise ValueError("trace is empty")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(trace) - 1)))
    return [render_state(s, pair, directory / f"{i:0{width}d}.ppm", size=size, cfg=cfg)
            for i, s in enumerate(trace)]


def colored_area(img: np.ndarray, cfg: SimConfig = SimConfig()) -> float:
    """Area (m^2) covered by either block fill."""
    size = img.shape[0]
    extent = cfg.workspace_halfwidth * size / (size - 2)
    n = int(np.sum(np.all(img == FEMALE_FILL, axis=-1) | np.all(img == MALE_FILL, axis=-1)))
    return n * (2 * extent / size) ** 2
