"""Experiment orchestration: run configs, episode datasets, evaluation,
paired SAM/PSM runs and timestep-budget ablations."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .agents import AGENT_KINDS, OracleAgent, PSMOracleAgent, RandomAgent, episode_rng
from .env import EnvOptions, EpisodeSpec, MultiONEnv, Pose
from .errors import ConfigError, GenerationError
from .geodesy import DEFAULT_CACHE, MultiGoalQuery, optimal_multigoal_length
from .metrics import EpisodeMetrics, aggregate, score_episode
from .reward import RewardConfig
from .rollout import EpisodeResult, run_episode
from .scene import GridScene, SceneGenSpec, generate_scene, load_scene, save_scene

log = logging.getLogger("multion")

DEFAULT_MAX_STEPS = {1: 500, 2: 600, 3: 1000, 4: 800}


# --------------------------------------------------------------------------
# run configuration


def _parse_bool(v: str) -> bool:
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_range(v: str) -> tuple[int, int]:
    parts = v.replace("..", "-").replace(",", "-").split("-")
    if len(parts) == 1:
        n = int(parts[0])
        return n, n
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise ConfigError(f"not an integer range: {v!r}")


def _parse_ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    # scenes: a directory of scene files, or the generator
    scene_dir: str = ""
    scenes: int = 5
    scene_width: int = 32
    scene_height: int = 32
    room_count: int = 4
    instances: tuple[int, int] = (1, 3)
    # episodes
    episodes_per_scene: int = 200
    k: tuple[int, int] = (3, 3)
    max_steps: int = 0  # 0 = per-k default (600 for k=2, 1000 for k=3)
    success_radius: float = 1.0
    success_metric: str = "geodesic"
    require_seen: bool = False
    map_size: int = 0
    # agents
    agents: tuple[str, ...] = ("sam-oracle",)
    psm_sequence: tuple[str, ...] = ()
    psm_opportunistic: bool = False
    checkpoint: str = ""
    gspl_radius: float = 0.0  # 0 = success radius
    budgets: tuple[int, ...] = ()
    # reward
    r_subgoal: float = 2.0
    alpha_process: float = 0.1
    cnr: float = -0.01
    alpha_semexp: float = 1.0
    strict_decrease: bool = True
    # training (keys prefixed with "train." in files)
    train: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        for a in self.agents:
            if a not in AGENT_KINDS:
                raise ConfigError(f"unknown agent {a!r}; choose from {', '.join(AGENT_KINDS)}")
        lo, hi = self.k
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid k range {self.k}")
        if self.success_metric not in ("geodesic", "euclidean"):
            raise ConfigError(f"unknown success metric {self.success_metric!r}")
        if self.episodes_per_scene < 1 or self.scenes < 1:
            raise ConfigError("scenes and episodes_per_scene must be positive")
        if not self.success_radius > 0 or self.gspl_radius < 0:
            raise ConfigError("radii must be positive")
        if any(b < 1 for b in self.budgets):
            raise ConfigError("budgets must be positive")

    # -- derived -----------------------------------------------------------
    def max_steps_for(self, k: int) -> int:
        if self.max_steps > 0:
            return self.max_steps
        return DEFAULT_MAX_STEPS.get(k, 1000)

    @property
    def effective_gspl_radius(self) -> float:
        return self.gspl_radius or self.success_radius

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.r_subgoal, self.alpha_process, self.cnr, self.alpha_semexp, self.strict_decrease)

    def env_options(self) -> EnvOptions:
        return EnvOptions(success_metric=self.success_metric, require_seen=self.require_seen, map_size=self.map_size or None)

    def train_config(self):
        from .learn.td3 import TrainConfig

        return TrainConfig.from_dict({"seed": self.seed, **self.train})

    # -- text form -----------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "train":
                for tk in sorted(v):
                    lines.append(f"train.{tk} = {v[tk]}")
                continue
            lines.append(f"{f.name} = {_format_value(v)}")
        return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


_RANGE_KEYS = {"instances", "k"}


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    default = RunConfig.__dataclass_fields__[name].default
    raw = raw.strip()
    try:
        if name in _RANGE_KEYS:
            return _parse_range(raw)
        if name == "budgets":
            return _parse_ints(raw)
        if name in ("agents", "psm_sequence"):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {raw!r} ({e})") from None
    return raw


def _coerce_train(name: str, raw: str):
    from .learn.td3 import TrainConfig

    defaults = {f.name: f.default for f in fields(TrainConfig)}
    if name not in defaults:
        raise ConfigError(f"unknown train config key {name!r}")
    d = defaults[name]
    try:
        if isinstance(d, bool):
            return _parse_bool(raw)
        if isinstance(d, int):
            return int(raw)
        if isinstance(d, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for train.{name}: {raw!r} ({e})") from None
    return raw.strip()


def parse_config_text(text: str, overrides: dict | None = None) -> RunConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; ``train.<key>``
    sets training hyperparameters."""
    values: dict = {}
    train: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key.startswith("train."):
            train[key[6:]] = _coerce_train(key[6:], raw)
        else:
            values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        key = key.replace("-", "_")
        if key.startswith("train."):
            train[key[6:]] = _coerce_train(key[6:], str(raw))
        else:
            values[key] = _coerce(key, str(raw)) if isinstance(raw, str) else raw
    if train:
        values["train"] = train
    return RunConfig(**values)


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config_text(text, overrides)


# --------------------------------------------------------------------------
# datasets


@dataclass
class EpisodeDataset:
    specs: list[EpisodeSpec]
    provenance: dict
    scene_names: dict = field(default_factory=dict)  # scene -> name

    def __len__(self) -> int:
        return len(self.specs)

    def by_id(self, episode_id: str) -> EpisodeSpec:
        for s in self.specs:
            if s.episode_id == episode_id:
                return s
        raise ConfigError(f"no episode {episode_id!r} in dataset")

    def scene_of(self, spec: EpisodeSpec) -> str:
        return self.scene_names.get(spec.scene, "")


def scene_seeds(master_seed: int, n: int) -> list[int]:
    rng = np.random.default_rng(master_seed)
    return [int(s) for s in rng.integers(0, 2**62, size=n)]


def build_scenes(cfg: RunConfig) -> list[tuple[str, GridScene]]:
    if cfg.scene_dir:
        paths = sorted(Path(cfg.scene_dir).glob("*.scene"))
        if not paths:
            raise ConfigError(f"no *.scene files in {cfg.scene_dir}")
        return [(p.stem, load_scene(p)) for p in paths]
    out = []
    for i, s in enumerate(scene_seeds(cfg.seed, cfg.scenes)):
        spec = SceneGenSpec(
            width=cfg.scene_width,
            height=cfg.scene_height,
            room_count=cfg.room_count,
            instances_per_category=cfg.instances,
            seed=s,
        )
        out.append((f"scene{i:03d}", generate_scene(spec)))
    return out


def sample_episode(
    scene: GridScene,
    rng: np.random.Generator,
    k: int,
    max_steps: int,
    success_radius: float,
    episode_id: str,
    max_tries: int = 200,
) -> EpisodeSpec:
    """Uniform free start cell and heading, k distinct present categories.

    Starts from which some target is already within the success radius are
    resampled, so every sub-goal is earned by at least one step.
    """
    cats = scene.categories_present()
    if len(cats) < k:
        raise GenerationError(f"scene has {len(cats)} categories, need {k}")
    free = scene.free_cells()
    for _ in range(max_tries):
        targets = tuple(int(c) for c in rng.choice(cats, size=k, replace=False))
        start = free[int(rng.integers(len(free)))]
        heading = int(rng.integers(12)) * 30
        d = [DEFAULT_CACHE.category_field(scene, c).at(start) for c in targets]
        if all(math.isfinite(x) and x > success_radius for x in d):
            return EpisodeSpec(scene, Pose.at_cell(start, heading), targets, max_steps, success_radius, episode_id=episode_id)
    raise GenerationError(f"no valid start for episode {episode_id} after {max_tries} tries")


def make_dataset(cfg: RunConfig, scenes: list[tuple[str, GridScene]] | None = None) -> EpisodeDataset:
    scenes = scenes if scenes is not None else build_scenes(cfg)
    specs: list[EpisodeSpec] = []
    names: dict = {}
    skipped = []
    k_lo, k_hi = cfg.k
    for si, (name, scene) in enumerate(scenes):
        names[scene] = name
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, si])
        if len(scene.categories_present()) < k_lo:
            log.warning("skipping %s: only %d categories present, k=%d requested", name, len(scene.categories_present()), k_lo)
            skipped.append(name)
            continue
        hi = min(k_hi, len(scene.categories_present()))
        for e in range(cfg.episodes_per_scene):
            k = int(rng.integers(k_lo, hi + 1))
            specs.append(sample_episode(scene, rng, k, cfg.max_steps_for(k), cfg.success_radius, f"{name}-e{e:04d}"))
    if not specs:
        raise GenerationError(f"every scene lacks {k_lo} distinct present categories")
    prov = {"seed": cfg.seed, "scenes": [n for n, _ in scenes], "skipped_scenes": skipped, "k": list(cfg.k)}
    return EpisodeDataset(specs, prov, names)


_EPISODE_FIELDS = ["episode_id", "scene", "start_x", "start_y", "heading", "targets", "max_steps", "success_radius", "sequence"]


def save_dataset(ds: EpisodeDataset, directory: str | os.PathLike) -> None:
    d = Path(directory)
    (d / "scenes").mkdir(parents=True, exist_ok=True)
    written = set()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_EPISODE_FIELDS)
    for s in ds.specs:
        name = ds.scene_of(s)
        if not name:
            raise ConfigError(f"episode {s.episode_id} has an unnamed scene")
        if name not in written:
            save_scene(s.scene, d / "scenes" / f"{name}.scene")
            written.add(name)
        lab = s.scene.catalog.label
        w.writerow([
            s.episode_id, name, repr(s.start.x), repr(s.start.y), s.start.heading,
            "|".join(lab(c) for c in s.targets), s.max_steps, repr(s.success_radius),
            "|".join(lab(c) for c in s.sequence) if s.sequence else "",
        ])
    (d / "episodes.csv").write_text(buf.getvalue())
    (d / "provenance.json").write_text(json.dumps(ds.provenance, indent=2, sort_keys=True) + "\n")


def load_dataset(directory: str | os.PathLike) -> EpisodeDataset:
    d = Path(directory)
    scenes = {p.stem: load_scene(p) for p in sorted((d / "scenes").glob("*.scene"))}
    specs = []
    with open(d / "episodes.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            scene = scenes[row["scene"]]
            idx = scene.catalog.index
            seq = tuple(idx(x) for x in row["sequence"].split("|")) if row["sequence"] else None
            specs.append(
                EpisodeSpec(
                    scene,
                    Pose(float(row["start_x"]), float(row["start_y"]), int(row["heading"])),
                    tuple(idx(x) for x in row["targets"].split("|")),
                    int(row["max_steps"]),
                    float(row["success_radius"]),
                    sequence=seq,
                    episode_id=row["episode_id"],
                )
            )
    prov_path = d / "provenance.json"
    prov = json.loads(prov_path.read_text()) if prov_path.exists() else {}
    return EpisodeDataset(specs, prov, {sc: n for n, sc in scenes.items()})


# --------------------------------------------------------------------------
# agents and single runs


def psm_sequence_for(spec: EpisodeSpec, cfg: RunConfig) -> tuple[int, ...]:
    """The configured label order restricted to the targets, else a uniformly
    random permutation seeded by the episode."""
    if cfg.psm_sequence:
        idx = spec.scene.catalog.index
        order = [idx(label) for label in cfg.psm_sequence]
        seq = tuple(c for c in order if c in spec.targets)
        if sorted(seq) != list(spec.targets):
            raise ConfigError(f"psm_sequence does not cover targets of {spec.episode_id}")
        return seq
    rng = episode_rng(cfg.seed ^ 0x5053, spec.episode_id)
    return tuple(int(c) for c in rng.permutation(list(spec.targets)))


def make_agent(kind: str, cfg: RunConfig, checkpoint: str | None = None):
    if kind == "random":
        return RandomAgent(cfg.seed)
    if kind == "sam-oracle":
        return OracleAgent()
    if kind == "psm-oracle":
        return PSMOracleAgent()
    if kind.startswith("learned-"):
        from .learn.train import learned_agent, load_checkpoint, variant_of

        path = checkpoint or cfg.checkpoint
        if not path:
            raise ConfigError(f"agent {kind} needs a checkpoint")
        ck = load_checkpoint(path)
        variant = variant_of(kind)
        if ck.variant != variant:
            log.warning("checkpoint was trained as %s, evaluating as %s", ck.variant, variant)
        return learned_agent(ck.net, variant)
    raise ConfigError(f"unknown agent {kind!r}")


def reward_kind_for(agent_kind: str) -> str:
    return {"learned-psm": "psm", "psm-oracle": "psm", "learned-msemexp": "semexp"}.get(agent_kind, "sam")


def prepare_spec(spec: EpisodeSpec, agent_kind: str, cfg: RunConfig) -> EpisodeSpec:
    if agent_kind in ("psm-oracle", "learned-psm"):
        return replace(spec, sequence=spec.sequence or psm_sequence_for(spec, cfg), opportunistic=cfg.psm_opportunistic)
    return replace(spec, sequence=None, opportunistic=False)


def optimal_length(spec: EpisodeSpec, radius: float) -> float:
    q = MultiGoalQuery.for_categories(spec.scene, spec.start.cell, spec.targets, radius)
    return optimal_multigoal_length(q)


@dataclass
class EvalRecord:
    agent: str
    scene: str
    result: EpisodeResult
    metrics: EpisodeMetrics

    def row(self) -> dict:
        m = self.metrics
        return {
            "agent": self.agent,
            "episode_id": self.result.episode_id,
            "scene": self.scene,
            "k": m.k,
            "success": m.success,
            "sub_success": repr(m.sub_success),
            "timesteps": m.timesteps,
            "path_length": repr(m.path_length),
            "g": repr(m.g),
            "gspl": repr(m.gspl),
            "cause": self.result.cause,
            "found_order": "|".join(self.result.labels[c] for c in self.result.found_order),
        }


REPORT_FIELDS = ["agent", "episode_id", "scene", "k", "success", "sub_success", "timesteps", "path_length", "g", "gspl", "cause", "found_order"]


def evaluate(
    dataset: EpisodeDataset,
    agent_kind: str,
    cfg: RunConfig,
    agent=None,
    max_steps: int | None = None,
    progress: Callable[[EvalRecord], None] | None = None,
) -> list[EvalRecord]:
    agent = agent or make_agent(agent_kind, cfg)
    env = MultiONEnv(cfg.env_options())
    rcfg = cfg.reward_config()
    out = []
    for spec in sorted(dataset.specs, key=lambda s: s.episode_id):
        spec = prepare_spec(spec, agent_kind, cfg)
        if max_steps is not None:
            spec = replace(spec, max_steps=max_steps)
        result = run_episode(env, agent, spec, reward_kind_for(agent_kind), rcfg)
        g = optimal_length(spec, cfg.effective_gspl_radius)
        rec = EvalRecord(agent_kind, dataset.scene_of(spec), result, score_episode(result, g))
        out.append(rec)
        if progress:
            progress(rec)
    return out


# --------------------------------------------------------------------------
# reports


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{x:.1f}"


def summarize(records: Sequence[EvalRecord]) -> dict:
    """Per agent and per k: the five measures (full precision)."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.agent, r.metrics.k), []).append(r.metrics)
        groups.setdefault((r.agent, "all"), []).append(r.metrics)
    out = {}
    for (agent, k), ms in sorted(groups.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        out.setdefault(agent, {})[str(k)] = aggregate(ms).as_dict()
    return out


def format_table(summary: dict) -> str:
    head = f"{'agent':<18}{'k':>4}{'episodes':>10}{'success%':>10}{'sub%':>8}{'gspl%':>8}{'steps':>9}{'path m':>9}"
    lines = [head, "-" * len(head)]
    for agent, per_k in summary.items():
        for k, s in per_k.items():
            steps = "-" if s["mean_timesteps"] is None else f"{s['mean_timesteps']:.1f}"
            path = "-" if s["mean_path_length"] is None else f"{s['mean_path_length']:.2f}"
            lines.append(
                f"{agent:<18}{k:>4}{s['episodes']:>10}{_pct(s['success_pct']):>10}{_pct(s['sub_success_pct']):>8}"
                f"{_pct(s['gspl_pct']):>8}{steps:>9}{path:>9}"
            )
    return "\n".join(lines)


def write_csv(path: Path, fieldnames: list[str], rows: Iterable[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    path.write_text(buf.getvalue())


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_trajectories(out: Path, records: Sequence[EvalRecord]) -> None:
    for r in records:
        d = out / "trajectories" / r.agent
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{r.result.episode_id}.log").write_text("".join(line + "\n" for line in r.result.log_lines()))


def run_comparison(dataset: EpisodeDataset, agents: Sequence[str], cfg: RunConfig, out: str | os.PathLike | None = None, agent_objects: dict | None = None) -> dict:
    """Evaluate every agent on every episode; success, sub-success and
    G-SPL over all episodes, timesteps and path over successes."""
    records: list[EvalRecord] = []
    for kind in agents:
        records += evaluate(dataset, kind, cfg, agent=(agent_objects or {}).get(kind))
    summary = summarize(records)
    if out is not None:
        o = Path(out)
        o.mkdir(parents=True, exist_ok=True)
        write_csv(o / "report.csv", REPORT_FIELDS, (r.row() for r in records))
        write_json(o / "report.json", {"summary": summary, "episodes": len(dataset), "agents": list(agents)})
        write_trajectories(o, records)
    return {"summary": summary, "records": records}


@dataclass
class PairedRow:
    episode_id: str
    scene: str
    sam: EpisodeMetrics
    psm: EpisodeMetrics
    sequence: tuple[str, ...]


def run_paired(
    dataset: EpisodeDataset,
    cfg: RunConfig,
    sam_kind: str = "sam-oracle",
    psm_kind: str = "psm-oracle",
    out: str | os.PathLike | None = None,
    agent_objects: dict | None = None,
) -> dict:
    """Run SAM; when it succeeds, give PSM its realized category order on the
    identical episode. SAM failures are excluded and tallied."""
    agents = agent_objects or {}
    sam = agents.get(sam_kind) or make_agent(sam_kind, cfg)
    psm = agents.get(psm_kind) or make_agent(psm_kind, cfg)
    env = MultiONEnv(cfg.env_options())
    rcfg = cfg.reward_config()
    rows: list[PairedRow] = []
    excluded: list[str] = []
    for spec in sorted(dataset.specs, key=lambda s: s.episode_id):
        s_spec = prepare_spec(spec, sam_kind, cfg)
        g = optimal_length(s_spec, cfg.effective_gspl_radius)
        rs = run_episode(env, sam, s_spec, reward_kind_for(sam_kind), rcfg)
        if not rs.success:
            excluded.append(spec.episode_id)
            log.info("excluded %s: SAM run failed (%s)", spec.episode_id, rs.cause)
            continue
        p_spec = replace(spec, sequence=rs.found_order, opportunistic=cfg.psm_opportunistic)
        rp = run_episode(env, psm, p_spec, reward_kind_for(psm_kind), rcfg)
        labels = tuple(spec.scene.catalog.label(c) for c in rs.found_order)
        rows.append(PairedRow(spec.episode_id, dataset.scene_of(spec), score_episode(rs, g), score_episode(rp, g), labels))
    per_scene: dict = {}
    for r in rows:
        per_scene.setdefault(r.scene, []).append(r)
    table = {}
    for scene, rs_ in sorted(per_scene.items()):
        sam_s = aggregate([r.sam for r in rs_])
        psm_s = aggregate([r.psm for r in rs_])
        table[scene] = {"pairs": len(rs_), sam_kind: sam_s.as_dict(), psm_kind: psm_s.as_dict()}
    report = {"per_scene": table, "excluded": excluded, "excluded_count": len(excluded), "pairs": len(rows)}
    if out is not None:
        o = Path(out)
        o.mkdir(parents=True, exist_ok=True)
        fields_ = ["episode_id", "scene", "sequence", "sam_success", "sam_timesteps", "sam_path_length", "psm_success", "psm_timesteps", "psm_path_length", "g"]
        write_csv(
            o / "report.csv",
            fields_,
            (
                {
                    "episode_id": r.episode_id, "scene": r.scene, "sequence": "|".join(r.sequence),
                    "sam_success": r.sam.success, "sam_timesteps": r.sam.timesteps, "sam_path_length": repr(r.sam.path_length),
                    "psm_success": r.psm.success, "psm_timesteps": r.psm.timesteps, "psm_path_length": repr(r.psm.path_length),
                    "g": repr(r.sam.g),
                }
                for r in rows
            ),
        )
        write_json(o / "report.json", report)
    report["rows"] = rows
    return report


def format_paired(report: dict, sam_kind: str = "sam-oracle", psm_kind: str = "psm-oracle") -> str:
    head = f"{'scene':<12}{'pairs':>6}{'PSM steps':>11}{'SAM steps':>11}{'PSM path':>10}{'SAM path':>10}"
    lines = [head, "-" * len(head)]
    for scene, row in report["per_scene"].items():
        p, s = row[psm_kind], row[sam_kind]

        def f(v, spec):
            return "-" if v is None else format(v, spec)

        lines.append(
            f"{scene:<12}{row['pairs']:>6}{f(p['mean_timesteps'], '.1f'):>11}{f(s['mean_timesteps'], '.1f'):>11}"
            f"{f(p['mean_path_length'], '.2f'):>10}{f(s['mean_path_length'], '.2f'):>10}"
        )
    lines.append(f"excluded (SAM failed): {report['excluded_count']}")
    return "\n".join(lines)


def rescore(records: Sequence[EvalRecord], budgets: Sequence[int]) -> dict:
    """Success and sub-success per budget from recorded trajectories.

    A budget beyond an episode's recorded cap (when it ran out of steps) can
    not be answered by truncation; such (budget, episode) pairs are flagged.
    """
    out: dict = {}
    for b in sorted(set(budgets), reverse=True):
        per_k: dict = {}
        flagged = []
        for r in records:
            res = r.result
            if b > res.timesteps and res.cause == "max-steps":
                flagged.append(res.episode_id)
            t = res.truncate(b)
            per_k.setdefault(str(res.k), []).append(score_episode(t, r.metrics.g) if r.metrics.g > 0 else r.metrics)
        out[b] = {
            "per_k": {k: {"success_pct": aggregate(ms).success_pct, "sub_success_pct": aggregate(ms).sub_success_pct, "episodes": len(ms)} for k, ms in sorted(per_k.items())},
            "rerun_required": flagged,
        }
    return out


def run_ablation(
    dataset: EpisodeDataset,
    agent_kind: str,
    budgets: Sequence[int],
    cfg: RunConfig,
    out: str | os.PathLike | None = None,
    agent=None,
) -> dict:
    """Run once with the largest budget as the step cap, then re-score the
    recorded trajectories at every budget."""
    if not budgets:
        raise ConfigError("budget grid is empty")
    records = evaluate(dataset, agent_kind, cfg, agent=agent, max_steps=max(budgets))
    table = rescore(records, budgets)
    if out is not None:
        o = Path(out)
        o.mkdir(parents=True, exist_ok=True)
        rows = []
        for b, entry in table.items():
            for k, s in entry["per_k"].items():
                rows.append({"budget": b, "k": k, "episodes": s["episodes"], "success_pct": repr(s["success_pct"]), "sub_success_pct": repr(s["sub_success_pct"])})
        write_csv(o / "report.csv", ["budget", "k", "episodes", "success_pct", "sub_success_pct"], rows)
        write_json(o / "report.json", {"agent": agent_kind, "budgets": {str(b): e for b, e in table.items()}})
        write_trajectories(o, records)
    return {"table": table, "records": records}


def format_ablation(table: dict) -> str:
    lines = [f"{'budget':>8}{'k':>4}{'success%':>10}{'sub%':>8}", "-" * 30]
    for b, entry in table.items():
        for k, s in entry["per_k"].items():
            lines.append(f"{b:>8}{k:>4}{s['success_pct']:>10.1f}{s['sub_success_pct']:>8.1f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# training


def train_from_config(cfg: RunConfig, variant: str, out: str | os.PathLike | None = None, progress=None):
    """Train one learned variant on episodes drawn from the configured
    dataset and write ``checkpoint.npz`` plus ``train_log.csv`` to ``out``."""
    from .learn.train import log_csv, save_checkpoint, train

    tcfg = cfg.train_config()
    dataset = make_dataset(cfg)
    specs = sorted(dataset.specs, key=lambda s: s.episode_id)
    order = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 0x7452]).integers(0, len(specs), size=tcfg.episodes)

    def source(i: int) -> EpisodeSpec:
        return prepare_spec(specs[int(order[i])], "learned-" + variant, cfg)

    result = train(source, tcfg, variant, cfg.env_options(), cfg.reward_config(), progress)
    if out is not None:
        o = Path(out)
        o.mkdir(parents=True, exist_ok=True)
        save_checkpoint(o / "checkpoint.npz", result.learner, variant, {"seed": cfg.seed, "episodes": len(result.log)})
        (o / "train_log.csv").write_text(log_csv(result.log))
    return result
