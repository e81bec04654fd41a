"""Command-line entry point: ``trass <command> [options]``.

Every stage reads and writes plain files under ``--out``. A ``--config`` file
holds flat ``section.key = value`` lines, for example::

    sim.workspace_halfwidth = 0.28
    cem.population = 200
    dyn.epochs = 30
    data.n_transitions = 800000
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from trass.blocks import enumerate_pairs, read_catalog, split_catalog, write_catalog
from trass.plan import CemConfig

DEFAULTS = {
    "data": {"n_traj": 2000, "M": 12, "n_transitions": 800_000},
    "split": {"seed": 0, "unseen_fraction": 0.2},
    "trm": {"epochs": 300, "final_lr_fraction": 0.02, "learning_rate": 1e-3, "batch_size": 256,
            "hidden_layer_sizes": "128x128", "horizon": 10},
    "dyn": {"epochs": 30, "final_lr_fraction": 0.05, "learning_rate": 1e-3, "batch_size": 256,
            "hidden_layer_sizes": "256x256x256", "ensemble": 1, "holdout_fraction": 0.1},
    "bench": {"episodes": 100},
}


class ConfigError(ValueError):
    pass


def _coerce(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _dataclass_defaults(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def load_config(path=None) -> dict:
    """Nested {section: {key: value}} with file overrides applied to the defaults."""
    from trass.sim import SimConfig

    cfg = {name: dict(values) for name, values in DEFAULTS.items()}
    cfg["sim"] = _dataclass_defaults(SimConfig)
    cfg["cem"] = _dataclass_defaults(CemConfig)
    if path is None:
        return cfg
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"{path}:{n}: expected 'section.key = value'")
        if section not in cfg or name not in cfg[section]:
            raise ConfigError(f"{path}:{n}: unknown key {key.strip()!r}")
        try:
            cfg[section][name] = _coerce(value.strip(), cfg[section][name])
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: {exc}") from None
    return cfg


def _sizes(spec) -> tuple:
    return tuple(int(h) for h in str(spec).split("x") if h)


def _train_config(section: dict, seed: int):
    from trass.learn import TrainConfig

    return TrainConfig(learning_rate=section["learning_rate"], batch_size=section["batch_size"],
                       epochs=section["epochs"], final_lr_fraction=section["final_lr_fraction"], seed=seed)


def _pairs(args):
    return read_catalog(args.pairs) if args.pairs else enumerate_pairs()


def _split(args, cfg):
    return split_catalog(_pairs(args), cfg["split"]["seed"], cfg["split"]["unseen_fraction"])


def _sim(cfg):
    from trass.sim import SimConfig

    return SimConfig(**cfg["sim"])


def _cem(cfg):
    return CemConfig(**cfg["cem"])


def _dyn_paths(out: Path, n: int) -> list:
    return [out / "dynamics.ckpt"] if n == 1 else [out / f"dynamics-{i}.ckpt" for i in range(n)]


# ---------------------------------------------------------------- commands

def cmd_gen_blocks(args, cfg, out):
    pairs = enumerate_pairs()
    write_catalog(pairs, out / "blocks.jsonl")
    seen, unseen = split_catalog(pairs, cfg["split"]["seed"], cfg["split"]["unseen_fraction"])
    print(f"{len(pairs)} pairs ({len(seen)} seen, {len(unseen)} unseen) -> {out / 'blocks.jsonl'}")


def cmd_collect_reverse(args, cfg, out):
    from trass.data import check_reverse_dataset, collect_reverse, write_reverse

    seen, _ = _split(args, cfg)
    sim = _sim(cfg)
    trajs = collect_reverse(seen, cfg["data"]["n_traj"], cfg["data"]["M"], args.seed, sim)
    bad = check_reverse_dataset(trajs, seen, sim)
    if bad:
        raise RuntimeError(f"{len(bad)} reverse trajectories fail validation, first {bad[0]}")
    write_reverse(out / "reverse.jsonl", trajs, sim, args.seed)
    print(f"{len(trajs)} reverse trajectories -> {out / 'reverse.jsonl'}")


def cmd_collect_transitions(args, cfg, out):
    from trass.data import collect_transitions, write_transitions

    seen, _ = _split(args, cfg)
    sim = _sim(cfg)
    transitions = collect_transitions(seen, cfg["data"]["n_transitions"], args.seed, sim)
    write_transitions(out / "transitions.jsonl", transitions, sim, args.seed)
    print(f"{len(transitions)} transitions -> {out / 'transitions.jsonl'}")


def cmd_train_trm(args, cfg, out):
    from trass.data import file_digest, read_reverse
    from trass.learn import save_checkpoint, train_trm

    path = Path(args.data) if args.data else out / "reverse.jsonl"
    trajs, _ = read_reverse(path)
    seen, _ = _split(args, cfg)
    sec = cfg["trm"]
    model = train_trm(trajs, seen, sec["horizon"], _train_config(sec, args.seed),
                      hidden_layer_sizes=_sizes(sec["hidden_layer_sizes"]))
    save_checkpoint(model, out / "trm.ckpt", file_digest(path))
    print(f"trm trained, training mse {model.training_mse_:.6g} -> {out / 'trm.ckpt'}")


def cmd_train_dyn(args, cfg, out):
    from trass.data import file_digest, read_transitions
    from trass.learn import save_checkpoint, train_dynamics

    path = Path(args.data) if args.data else out / "transitions.jsonl"
    transitions, head = read_transitions(path)
    seen, _ = _split(args, cfg)
    sec = cfg["dyn"]
    digest = file_digest(path)
    for i, target in enumerate(_dyn_paths(out, sec["ensemble"])):
        model, report = train_dynamics(
            transitions, seen, _train_config(sec, args.seed + i), sec["holdout_fraction"],
            hidden_layer_sizes=_sizes(sec["hidden_layer_sizes"]),
            pusher_radius=cfg["sim"]["pusher_radius"], clearance=cfg["sim"]["clearance"],
            workspace_halfwidth=cfg["sim"]["workspace_halfwidth"])
        save_checkpoint(model, target, digest)
        print(f"dynamics held-out median error {report.median_position_error:.4g} m "
              f"(pushes that touch: {report.contact_median_position_error:.4g} m) -> {target}")


def _variants(name):
    from trass.bench import Variant

    return tuple(Variant) if name == "all" else (Variant(name),)


def _kinds(name):
    from trass.plan import PolicyKind

    return tuple(PolicyKind) if name == "all" else (PolicyKind(name),)


def _spec(args, cfg, out, variants, kinds, episodes):
    from trass.bench import ExperimentSpec

    return ExperimentSpec(
        variants=variants, kinds=kinds, episodes=episodes, seed=args.seed, dynamics=args.dynamics,
        trm_checkpoint=str(args.trm or out / "trm.ckpt"),
        dynamics_checkpoints=tuple(map(str, args.dyn or _dyn_paths(out, cfg["dyn"]["ensemble"]))),
        split_seed=cfg["split"]["seed"], sim=_sim(cfg), cem=_cem(cfg))


def cmd_eval(args, cfg, out):
    from trass.bench import run_experiment

    episodes = args.episodes if args.episodes is not None else cfg["bench"]["episodes"]
    spec = _spec(args, cfg, out, _variants(args.variant), _kinds(args.policy), episodes)
    table = run_experiment(spec, _pairs(args))
    csv_path, _ = table.write(out / "results.csv")
    for c in table.cells:
        print(f"{c.variant.value:9s} {c.kind.value:5s} {c.successes:4d}/{c.episodes:<4d} "
              f"rate {c.rate:.3f} +- {c.se:.3f}")
    print(f"-> {csv_path}")


def cmd_render(args, cfg, out):
    from trass.bench import (MIN_SEPARATION, episode_seeds, load_models, render_state,
                             render_trajectory)
    from trass.plan import PolicyKind, run_episode
    from trass.sim import sample_initial_state

    variant = _variants(args.variant)[0]
    kind = _kinds(args.policy)[0]
    spec = _spec(args, cfg, out, (variant,), (kind,), 1)
    trm, dynamics, _ = load_models(spec)
    seen, unseen = _split(args, cfg)
    pool = unseen if variant.value == "unseen" else seen
    init_rng, plan_rng = episode_seeds(args.seed, variant, kind, args.index)
    pair = pool[init_rng.integers(len(pool))]
    start = sample_initial_state(pair, init_rng, MIN_SEPARATION[variant], spec.sim)
    result = run_episode(pair, start, kind, dynamics, plan_rng, trm=trm, sim_cfg=spec.sim, cem_cfg=spec.cem)
    frames = render_trajectory(result.trace, pair, out / "frames", cfg=spec.sim)
    if trm is not None:
        render_state(start, pair, out / "trm_plan.ppm", trm.predict_trajectory(start, pair), cfg=spec.sim)
    print(f"{pair.id} {kind.value} success={result.success} steps={result.steps_used} "
          f"{len(frames)} frames -> {out / 'frames'}")


def cmd_grad_check(args, cfg, out):
    import numpy as np

    from trass.learn import DYNAMICS_FEATURES, DYNAMICS_OUTPUTS, TRM_FEATURES, RegressorParams, gradient_check

    worst = 0.0
    rng = np.random.default_rng(args.seed)
    arch = {
        "trm": (TRM_FEATURES, *_sizes(cfg["trm"]["hidden_layer_sizes"]), 4 * cfg["trm"]["horizon"]),
        "dynamics": (DYNAMICS_FEATURES, *_sizes(cfg["dyn"]["hidden_layer_sizes"]), DYNAMICS_OUTPUTS),
        "default 2x64": (12, 64, 64, 8),
    }
    for name, sizes in arch.items():
        err = gradient_check(RegressorParams.initialize(sizes, rng), 100, rng=rng)
        worst = max(worst, err)
        print(f"{name} {sizes}: max relative error {err:.3g}")
    if not worst < 1e-4:
        raise RuntimeError(f"gradient check failed: {worst:.3g} >= 1e-4")


COMMANDS = {
    "gen-blocks": cmd_gen_blocks,
    "collect-reverse": cmd_collect_reverse,
    "collect-transitions": cmd_collect_transitions,
    "train-trm": cmd_train_trm,
    "train-dyn": cmd_train_dyn,
    "eval": cmd_eval,
    "render": cmd_render,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trass", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--pairs", help="block catalog written by gen-blocks")
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--variant", default="seen", choices=["seen", "seen-far", "unseen", "all"])
    parser.add_argument("--policy", default="trm", choices=["trm", "hull", "gt", "all"])
    parser.add_argument("--dynamics", default="learned", choices=["learned", "oracle"])
    parser.add_argument("--data", help="dataset file for the training commands")
    parser.add_argument("--trm", help="time-reversal model checkpoint (default <out>/trm.ckpt)")
    parser.add_argument("--dyn", action="append", help="dynamics checkpoint; repeat for an ensemble")
    parser.add_argument("--index", type=int, default=0, help="episode index for render")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"trass {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
