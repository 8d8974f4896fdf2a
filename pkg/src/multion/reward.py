"""Step rewards: the sequence-agnostic reward, the M-SemExp baseline reward
and per-macro-step accumulation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import RewardError


@dataclass(frozen=True)
class RewardConfig:
    r_subgoal: float = 2.0
    alpha_process: float = 0.1
    cnr: float = -0.01
    alpha_semexp: float = 1.0
    strict_decrease: bool = True

    def __post_init__(self):
        if not self.r_subgoal > 0:
            raise RewardError("r_subgoal must be positive")
        if not self.alpha_process > 0:
            raise RewardError("alpha_process must be positive")
        if not self.cnr < 0:
            raise RewardError("cnr must be negative")


@dataclass(frozen=True)
class RewardTerms:
    subgoal: float
    process: float
    cnr: float

    @property
    def total(self) -> float:
        return self.subgoal + self.process + self.cnr


DtgSnapshot = Mapping[int, float]


def _deltas(prev: DtgSnapshot, curr: DtgSnapshot) -> list[float]:
    if set(prev) != set(curr):
        raise RewardError(f"snapshots cover different categories: {sorted(prev)} vs {sorted(curr)}")
    if not prev:
        raise RewardError("snapshot is empty (N must be at least 1)")
    out = []
    for cid in sorted(prev):
        a, b = prev[cid], curr[cid]
        if not (math.isfinite(a) and math.isfinite(b)):
            raise RewardError(f"category {cid} is unreachable (infinite distance)")
        if a < 0 or b < 0:
            raise RewardError(f"category {cid} has a negative distance")
        out.append(a - b)
    return out


def process_reward(prev: DtgSnapshot, curr: DtgSnapshot, strict_decrease: bool = True) -> float:
    """n/N + d_t when n > 0 categories got closer, else d_t."""
    deltas = _deltas(prev, curr)
    d_t = math.fsum(deltas)
    n = sum(1 for d in deltas if (d > 0 if strict_decrease else d >= 0))
    if n >= 1:
        return n / len(deltas) + d_t
    return d_t


def reward_terms(prev: DtgSnapshot, curr: DtgSnapshot, subgoals_reached: int, cfg: RewardConfig = RewardConfig()) -> RewardTerms:
    if subgoals_reached < 0:
        raise RewardError("subgoals_reached must be non-negative")
    return RewardTerms(
        subgoal=subgoals_reached * cfg.r_subgoal,
        process=cfg.alpha_process * process_reward(prev, curr, cfg.strict_decrease),
        cnr=cfg.cnr,
    )


def step_reward(prev: DtgSnapshot, curr: DtgSnapshot, subgoals_reached: int, cfg: RewardConfig = RewardConfig()) -> float:
    """Sub-goal reward + alpha_process * process reward + constant negative reward.

    ``prev`` and ``curr`` map category id to geodesic distance (m) for the
    categories remaining at the start of the step.
    """
    return reward_terms(prev, curr, subgoals_reached, cfg).total


def semexp_reward(prev: DtgSnapshot, curr: DtgSnapshot, cfg: RewardConfig = RewardConfig()) -> float:
    return cfg.alpha_semexp * math.fsum(_deltas(prev, curr))


def macro_reward(per_step_rewards: Sequence[float]) -> float:
    if len(per_step_rewards) == 0:
        raise RewardError("macro-step has no rewards")
    return math.fsum(per_step_rewards)
