"""Per-episode and aggregate performance measures."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .errors import MetricsError


@dataclass(frozen=True)
class EpisodeMetrics:
    success: int
    sub_success: float
    timesteps: int
    path_length: float
    g: float
    gspl: float
    k: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def gspl(success: int, g: float, path_length: float) -> float:
    if not success:
        return 0.0
    denom = max(g, path_length)
    if denom == 0.0:
        # already satisfied at the start: optimal by definition
        return 1.0
    return g / denom


def score_episode(result, g: float) -> EpisodeMetrics:
    """Score a finished episode.

    ``result`` needs ``k``, ``found_count``, ``success``, ``timesteps`` and
    ``path_length`` attributes (see :class:`multion.rollout.EpisodeResult`).
    """
    if result.path_length < 0:
        raise MetricsError(f"negative path length {result.path_length}")
    if g < 0 or not math.isfinite(g):
        raise MetricsError(f"invalid optimal length g={g}")
    if result.k < 1:
        raise MetricsError("episode has no targets")
    success = 1 if result.success else 0
    if g == 0.0 and not (success and result.timesteps == 0):
        raise MetricsError("g = 0 requires an episode satisfied at t=0")
    return EpisodeMetrics(
        success=success,
        sub_success=result.found_count / result.k,
        timesteps=int(result.timesteps),
        path_length=float(result.path_length),
        g=float(g),
        gspl=gspl(success, g, result.path_length),
        k=int(result.k),
    )


@dataclass(frozen=True)
class Summary:
    episodes: int
    successes: int
    success_pct: float
    sub_success_pct: float
    gspl_pct: float
    mean_timesteps: float | None
    mean_path_length: float | None

    def as_dict(self) -> dict:
        return asdict(self)


def aggregate(metrics: Sequence[EpisodeMetrics] | Iterable[EpisodeMetrics]) -> Summary:
    """Success, sub-success and G-SPL over all episodes; timesteps and path
    length over successful episodes only (``None`` when there are none)."""
    ms = list(metrics)
    if not ms:
        raise MetricsError("cannot aggregate an empty episode list")
    n = len(ms)
    wins = [m for m in ms if m.success]
    return Summary(
        episodes=n,
        successes=len(wins),
        success_pct=100.0 * len(wins) / n,
        sub_success_pct=100.0 * math.fsum(m.sub_success for m in ms) / n,
        gspl_pct=100.0 * math.fsum(m.gspl for m in ms) / n,
        mean_timesteps=math.fsum(m.timesteps for m in wins) / len(wins) if wins else None,
        mean_path_length=math.fsum(m.path_length for m in wins) / len(wins) if wins else None,
    )
