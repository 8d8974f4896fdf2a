"""Run one agent through one episode and record everything needed for
scoring, replay and budget truncation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .env import Action, EpisodeSpec, MultiONEnv, Pose, format_log_line
from .errors import ConfigError
from .reward import RewardConfig, semexp_reward, step_reward

REWARD_KINDS = ("sam", "psm", "semexp")


@dataclass(frozen=True)
class StepRecord:
    t: int
    action: Action
    pose: Pose
    collided: bool
    found: tuple[int, ...]
    reward: float
    subgoal_reward: float
    forward_moves: int


@dataclass
class EpisodeResult:
    episode_id: str
    targets: tuple[int, ...]
    found_log: tuple[tuple[int, int, tuple[int, int]], ...]
    timesteps: int
    path_length: float
    cause: str
    steps: list[StepRecord] = field(default_factory=list)
    labels: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return len(self.targets)

    @property
    def found_count(self) -> int:
        return len(self.found_log)

    @property
    def success(self) -> bool:
        return self.found_count == self.k

    @property
    def found_order(self) -> tuple[int, ...]:
        return tuple(cid for cid, _, _ in self.found_log)

    @property
    def total_reward(self) -> float:
        return math.fsum(s.reward for s in self.steps)

    @property
    def subgoal_reward(self) -> float:
        return math.fsum(s.subgoal_reward for s in self.steps)

    def truncate(self, budget: int) -> "EpisodeResult":
        """The same trajectory as if the episode had been capped at ``budget`` steps."""
        if budget < 0:
            raise ConfigError("budget must be non-negative")
        if budget >= self.timesteps:
            return self
        steps = self.steps[:budget]
        log = tuple(entry for entry in self.found_log if entry[1] <= budget)
        moves = steps[-1].forward_moves if steps else 0
        return EpisodeResult(
            episode_id=self.episode_id,
            targets=self.targets,
            found_log=log,
            timesteps=budget,
            path_length=0.25 * moves,
            cause="max-steps",
            steps=steps,
            labels=self.labels,
        )

    def log_lines(self) -> list[str]:
        return [
            format_log_line(s.t, s.action, s.pose, s.collided, [self.labels[c] for c in s.found], s.reward)
            for s in self.steps
        ]


def step_reward_for(kind: str, before: dict, after: dict, found: Sequence[int], active: Sequence[int], cfg: RewardConfig) -> tuple[float, float]:
    """(reward, sub-goal part) for one step under a reward kind.

    ``psm`` restricts the distances and sub-goal credit to the active
    sequence category.
    """
    if kind == "sam":
        n = len(found)
        return step_reward(before, after, n, cfg), n * cfg.r_subgoal
    if kind == "psm":
        keep = set(active)
        b = {c: v for c, v in before.items() if c in keep}
        a = {c: v for c, v in after.items() if c in keep}
        n = sum(1 for c in found if c in keep)
        return step_reward(b, a, n, cfg), n * cfg.r_subgoal
    if kind == "semexp":
        return semexp_reward(before, after, cfg), 0.0
    raise ConfigError(f"unknown reward kind {kind!r}")


def run_episode(
    env: MultiONEnv,
    agent,
    spec: EpisodeSpec,
    reward_kind: str = "sam",
    reward_cfg: RewardConfig | None = None,
    on_step=None,
) -> EpisodeResult:
    """Reset, then step ``agent`` until termination. ``on_step(record)`` is
    called after every step; ``agent.end(state, obs)`` once at the end."""
    if reward_kind not in REWARD_KINDS:
        raise ConfigError(f"unknown reward kind {reward_kind!r}")
    cfg = reward_cfg or RewardConfig()
    state, obs = env.reset(spec)
    agent.reset(env, state, obs)
    steps: list[StepRecord] = []
    while not state.terminated:
        active = env.active_targets(state)
        action = Action(agent.act(state, obs))
        state, obs, events = env.step(action)
        agent.observe(state, action, events)
        r, rs = step_reward_for(reward_kind, events.dtg_before, events.dtg_after, events.categories_found, active, cfg)
        rec = StepRecord(state.t, action, state.pose, events.collided, events.categories_found, r, rs, state.forward_moves)
        steps.append(rec)
        if on_step is not None:
            on_step(rec)
    agent.end(state, obs)
    return EpisodeResult(
        episode_id=spec.episode_id,
        targets=spec.targets,
        found_log=state.found_log,
        timesteps=state.t,
        path_length=state.path_length,
        cause=state.cause,
        steps=steps,
        labels=spec.scene.catalog.names,
    )
