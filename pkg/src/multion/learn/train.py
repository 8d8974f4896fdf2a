"""Training loop, checkpoints and evaluation-time learned agents."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..agents import MacroGoalAgent
from ..env import EnvOptions, EpisodeSpec, MultiONEnv
from ..errors import ConfigError
from ..reward import RewardConfig
from ..rollout import run_episode
from .networks import ActorCritic, NetSpec
from .replay import ReplayBuffer, Transition
from .td3 import Learner, TrainConfig

CHECKPOINT_VERSION = 1

# variant -> (reward kind, target encoding)
VARIANTS = {
    "sam": ("sam", "multi"),
    "psm": ("psm", "single"),
    "msemexp": ("semexp", "multi"),
}


def variant_of(agent_kind: str) -> str:
    if not agent_kind.startswith("learned-"):
        raise ConfigError(f"{agent_kind!r} is not a learned agent")
    v = agent_kind[len("learned-"):]
    if v not in VARIANTS:
        raise ConfigError(f"unknown learned variant {v!r}")
    return v


@dataclass(frozen=True)
class TrainLogRow:
    episode: int
    ret: float
    success: int
    sub_success: float
    steps: int
    path_length: float


def log_csv(rows: list[TrainLogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "return", "success", "sub_success", "steps", "path_length"])
    for r in rows:
        w.writerow([r.episode, repr(r.ret), r.success, repr(r.sub_success), r.steps, repr(r.path_length)])
    return buf.getvalue()


@dataclass
class TrainResult:
    learner: Learner
    log: list[TrainLogRow]
    variant: str
    transitions: int


def net_spec_for(num_categories: int, encoding_width: int, m_in: int) -> NetSpec:
    return NetSpec(in_channels=num_categories + 5, m_in=m_in, enc_width=encoding_width)


def train(
    episode_source: Callable[[int], EpisodeSpec],
    cfg: TrainConfig = TrainConfig(),
    variant: str = "sam",
    env_options: EnvOptions | None = None,
    reward_cfg: RewardConfig | None = None,
    progress: Callable[[TrainLogRow], None] | None = None,
) -> TrainResult:
    """Train a goal policy on ``cfg.episodes`` episodes from ``episode_source(i)``.

    Goals are uniform at random until the buffer holds
    ``cfg.warmup_transitions`` transitions; afterwards they come from the
    actor plus Gaussian noise whose std decays linearly over training.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    reward_kind, encoding = VARIANTS[variant]
    rng = np.random.default_rng(cfg.seed)
    env = MultiONEnv(env_options)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    learner: Learner | None = None
    log: list[TrainLogRow] = []
    count = 0

    def record(t: Transition) -> None:
        nonlocal count
        buffer.add(t)
        count += 1
        if len(buffer) >= max(cfg.batch_size, cfg.warmup_transitions):
            for _ in range(cfg.updates_per_transition):
                learner.update(buffer.sample(cfg.batch_size, rng), rng)

    for ep in range(cfg.episodes):
        spec = episode_source(ep)
        if learner is None:
            cat = spec.scene.catalog
            learner = Learner(net_spec_for(len(cat), cat.encoding_width, cfg.m_in), cfg)
        frac = ep / max(1, cfg.episodes - 1)
        std = cfg.explore_std + (cfg.explore_std_final - cfg.explore_std) * frac

        def goal_fn(img, enc, std=std):
            if len(buffer) < cfg.warmup_transitions:
                return rng.random(2)
            a = learner.online.act(img[None], enc[None])[0].astype(np.float64)
            return np.clip(a + rng.normal(0.0, std, 2), 0.0, 1.0)

        agent = MacroGoalAgent(goal_fn, encoding, cfg.goal_period, cfg.m_in, recorder=record)
        result = run_episode(env, agent, spec, reward_kind, reward_cfg, on_step=lambda rec: agent.add_reward(rec.reward))
        row = TrainLogRow(
            episode=ep,
            ret=result.total_reward,
            success=int(result.success),
            sub_success=result.found_count / result.k,
            steps=result.timesteps,
            path_length=result.path_length,
        )
        log.append(row)
        if progress is not None:
            progress(row)
    return TrainResult(learner, log, variant, count)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | os.PathLike, learner: Learner, variant: str, extra: dict | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "variant": variant,
        "net_spec": learner.spec.as_dict(),
        "train_config": learner.cfg.as_dict(),
        "critic_updates": learner.critic_updates,
        "actor_updates": learner.actor_updates,
    }
    if extra:
        meta.update(extra)
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, v in learner.online.state_dict().items():
        arrays["online/" + name] = v
    for name, v in learner.target.state_dict().items():
        arrays["target/" + name] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


@dataclass
class Checkpoint:
    net: ActorCritic
    variant: str
    meta: dict


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        spec = NetSpec(**meta["net_spec"])
        net = ActorCritic(spec, 0)
        net.load_state_dict({k[len("online/"):]: z[k] for k in z.files if k.startswith("online/")})
    return Checkpoint(net, meta["variant"], meta)


def learned_agent(net: ActorCritic, variant: str, goal_period: int = 25) -> MacroGoalAgent:
    """Deterministic evaluation agent: the actor's goal without noise."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    _, encoding = VARIANTS[variant]

    def goal_fn(img, enc):
        return net.act(img[None], enc[None])[0]

    agent = MacroGoalAgent(goal_fn, encoding, goal_period, net.spec.m_in)
    agent.kind = "learned-" + variant
    return agent
