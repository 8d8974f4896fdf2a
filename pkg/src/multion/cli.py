"""``multion`` command line interface."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .agents import AGENT_KINDS
from .env import EpisodeSpec, Pose
from .errors import ConfigError, MultiONError
from .scene import load_scene, save_scene

# command-line flags that map onto RunConfig keys
_OVERRIDES = (
    "scene_dir", "scenes", "scene_width", "scene_height", "room_count", "episodes_per_scene", "k", "max_steps",
    "success_radius", "success_metric", "require_seen", "psm_opportunistic", "psm_sequence", "checkpoint",
    "gspl_radius", "budgets", "strict_decrease", "seed", "out",
)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key, e.g. train.episodes=50")
    p.add_argument("-v", "--verbose", action="store_true")


def _scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene-dir", help="directory of *.scene files (default: generate)")
    p.add_argument("--scenes", type=int, help="number of generated scenes")
    p.add_argument("--scene-width", type=int)
    p.add_argument("--scene-height", type=int)
    p.add_argument("--room-count", type=int)


def _episode_flags(p: argparse.ArgumentParser) -> None:
    _scene_flags(p)
    p.add_argument("--dataset", help="episode dataset directory written by make-dataset")
    p.add_argument("--episodes-per-scene", type=int)
    p.add_argument("--k", help="targets per episode, N or LO-HI")
    p.add_argument("--max-steps", type=int, help="step cap (0 = 600 for k=2, 1000 for k=3)")
    p.add_argument("--success-radius", type=float)
    p.add_argument("--success-metric", choices=("geodesic", "euclidean"))
    p.add_argument("--require-seen", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--strict-decrease", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--psm-opportunistic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--psm-sequence", help="comma-separated category labels")
    p.add_argument("--gspl-radius", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multion", description="Multi-object navigation gridworld experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="write procedurally generated scene files")
    _common(p)
    _scene_flags(p)

    p = sub.add_parser("make-dataset", help="write an episode dataset")
    _common(p)
    _episode_flags(p)

    p = sub.add_parser("train", help="train a learned goal policy")
    _common(p)
    _episode_flags(p)
    p.add_argument("--agent", default="learned-sam", choices=[a for a in AGENT_KINDS if a.startswith("learned-")])
    p.add_argument("--episodes", type=int, help="training episodes")

    p = sub.add_parser("eval", help="evaluate agents and report the five measures")
    _common(p)
    _episode_flags(p)
    p.add_argument("--agent", action="append", choices=AGENT_KINDS, help="repeatable; default from config")
    p.add_argument("--checkpoint")

    p = sub.add_parser("paired", help="SAM run, then PSM on SAM's realized order")
    _common(p)
    _episode_flags(p)
    p.add_argument("--sam-agent", default="sam-oracle", choices=("sam-oracle", "learned-sam"))
    p.add_argument("--psm-agent", default="psm-oracle", choices=("psm-oracle", "learned-psm"))
    p.add_argument("--checkpoint", help="checkpoint for a learned SAM agent")
    p.add_argument("--psm-checkpoint", help="checkpoint for a learned PSM agent")

    p = sub.add_parser("ablate", help="re-score one run at several step budgets")
    _common(p)
    _episode_flags(p)
    p.add_argument("--agent", default="sam-oracle", choices=AGENT_KINDS)
    p.add_argument("--checkpoint")
    p.add_argument("--budgets", help="comma-separated budgets, e.g. 200,300,600")

    p = sub.add_parser("gspl", help="print the optimal multi-goal length g")
    _common(p)
    p.add_argument("--dataset", help="dataset directory (with --episode)")
    p.add_argument("--episode", help="episode id")
    p.add_argument("--scene", help="scene file (with --start and --targets)")
    p.add_argument("--start", help="start cell X,Y")
    p.add_argument("--targets", help="comma-separated category labels")
    p.add_argument("--radius", type=float, help="leg end radius (default success radius)")
    return ap


def _config(args: argparse.Namespace) -> harness.RunConfig:
    overrides = {}
    for key in _OVERRIDES:
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v if isinstance(v, (bool, str)) else str(v)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "episodes", None) is not None:
        overrides["train.episodes"] = str(args.episodes)
    return harness.load_config(args.config, overrides)


def _dataset(args, cfg: harness.RunConfig) -> harness.EpisodeDataset:
    if getattr(args, "dataset", None):
        return harness.load_dataset(args.dataset)
    return harness.make_dataset(cfg)


def _out(cfg: harness.RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def cmd_gen_scenes(args, cfg) -> None:
    out = _out(cfg)
    scenes = harness.build_scenes(cfg)
    (out / "scenes").mkdir(exist_ok=True)
    for name, scene in scenes:
        save_scene(scene, out / "scenes" / f"{name}.scene")
        print(f"{name}: {scene.width}x{scene.height}, {len(scene.objects)} objects")


def cmd_make_dataset(args, cfg) -> None:
    ds = harness.make_dataset(cfg)
    harness.save_dataset(ds, _out(cfg))
    print(f"{len(ds)} episodes written to {cfg.out}")


def cmd_train(args, cfg) -> None:
    variant = args.agent[len("learned-"):]
    out = _out(cfg)

    def progress(row):
        if row.episode % 50 == 0:
            print(f"episode {row.episode}: return {row.ret:.3f} success {row.success} steps {row.steps}", flush=True)

    res = harness.train_from_config(cfg, variant, out, progress)
    wins = sum(r.success for r in res.log)
    print(f"trained {args.agent} on {len(res.log)} episodes ({wins} successes); checkpoint {out / 'checkpoint.npz'}")


def cmd_eval(args, cfg) -> None:
    agents = tuple(args.agent) if args.agent else cfg.agents
    ds = _dataset(args, cfg)
    objects = {a: harness.make_agent(a, cfg, args.checkpoint) for a in agents}
    rep = harness.run_comparison(ds, agents, cfg, _out(cfg), objects)
    print(harness.format_table(rep["summary"]))


def cmd_paired(args, cfg) -> None:
    ds = _dataset(args, cfg)
    objects = {
        args.sam_agent: harness.make_agent(args.sam_agent, cfg, args.checkpoint),
        args.psm_agent: harness.make_agent(args.psm_agent, cfg, args.psm_checkpoint or args.checkpoint),
    }
    rep = harness.run_paired(ds, cfg, args.sam_agent, args.psm_agent, _out(cfg), objects)
    print(harness.format_paired(rep, args.sam_agent, args.psm_agent))


def cmd_ablate(args, cfg) -> None:
    budgets = cfg.budgets
    if not budgets:
        raise ConfigError("no budgets given (--budgets or budgets = ... in the config)")
    ds = _dataset(args, cfg)
    agent = harness.make_agent(args.agent, cfg, args.checkpoint)
    rep = harness.run_ablation(ds, args.agent, budgets, cfg, _out(cfg), agent)
    print(harness.format_ablation(rep["table"]))
    flagged = sorted({e for entry in rep["table"].values() for e in entry["rerun_required"]})
    if flagged:
        print(f"warning: {len(flagged)} episodes hit the step cap below the largest budget; re-run required for exact values", file=sys.stderr)


def cmd_gspl(args, cfg) -> None:
    radius = args.radius if args.radius is not None else cfg.success_radius
    if args.dataset:
        if not args.episode:
            raise ConfigError("--dataset needs --episode")
        spec = harness.load_dataset(args.dataset).by_id(args.episode)
    elif args.scene:
        if not (args.start and args.targets):
            raise ConfigError("--scene needs --start and --targets")
        scene = load_scene(args.scene)
        try:
            x, y = (int(v) for v in args.start.split(","))
        except ValueError:
            raise ConfigError(f"--start expects X,Y, got {args.start!r}") from None
        targets = tuple(scene.catalog.index(t.strip()) for t in args.targets.split(","))
        spec = EpisodeSpec(scene, Pose.at_cell((x, y)), targets, 1, radius)
    else:
        raise ConfigError("gspl needs --dataset/--episode or --scene/--start/--targets")
    g = harness.optimal_length(spec, radius)
    print(json.dumps({"episode_id": spec.episode_id, "g": g}))


COMMANDS = {
    "gen-scenes": cmd_gen_scenes,
    "make-dataset": cmd_make_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "paired": cmd_paired,
    "ablate": cmd_ablate,
    "gspl": cmd_gspl,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except MultiONError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
