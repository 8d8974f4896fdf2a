"""Agents: the shared goal-following local policy, the Random baseline and
the ground-truth oracles used as evaluation instruments.

Agents follow a small protocol driven by :func:`multion.rollout.run_episode`:
``reset(env, state, obs)`` once, then ``act(state, obs) -> Action`` and
``observe(state, action, events)`` every step.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import TURN_ANGLE, Action, MultiONEnv, Pose, SemanticMapState, StepEvents, _STEP
from .errors import ConfigError, ReplanNeeded, UnreachableError
from .geodesy import DEFAULT_CACHE, NEIGHBORS, DistanceField, FieldCache, distance_field_fmm
from .scene import CELL_SIZE, Cell, GridScene

AGENT_KINDS = ("random", "sam-oracle", "psm-oracle", "learned-sam", "learned-psm", "learned-msemexp")
GOAL_PERIOD = 25
TURN_THRESHOLD = 15.0


@dataclass(frozen=True)
class LongTermGoal:
    cell: Cell
    issued_at: int = 0


def _wrap(deg: float) -> float:
    """Angle in (-180, 180]."""
    d = math.fmod(deg, 360.0)
    if d <= -180.0:
        d += 360.0
    elif d > 180.0:
        d -= 360.0
    return d


def _turn_toward(err: float) -> Action:
    # positive error is counter-clockwise; a 180 degree tie turns left
    return Action.TURN_RIGHT if err < 0 else Action.TURN_LEFT


def _landing(pose: Pose, heading: int) -> tuple[float, float]:
    dx, dy = _STEP[heading]
    return pose.x + dx, pose.y + dy


def _cell_of(x: float, y: float) -> Cell:
    return int(math.floor(x / CELL_SIZE)), int(math.floor(y / CELL_SIZE))


def ground_truth_map(scene: GridScene, size: int | None = None) -> SemanticMapState:
    """A fully explored map of ``scene`` (used by the oracles)."""
    M = size or max(scene.width, scene.height)
    m = SemanticMapState.empty(len(scene.catalog), M)
    m.channels[SemanticMapState.OBSTACLE].fill(1)
    m.channels[SemanticMapState.OBSTACLE, : scene.height, : scene.width] = scene.occupancy
    m.channels[SemanticMapState.EXPLORED].fill(1)
    for cid, (x, y) in scene.objects:
        m.channels[2 + cid, y, x] = 1
    return m


_AXIS_HEADING = {(1, 0): 0, (0, -1): 90, (-1, 0): 180, (0, 1): 270}


class LocalPolicy:
    """Deterministic controller that follows the FMM field to a goal cell.

    Planning uses the obstacle channel of the map it is given, with
    unexplored cells treated as free, plus cells this policy has bumped
    into during the episode. Motion is executed along the four axis
    headings only: a diagonal step of the plan becomes two axis moves
    through a free flank cell. The agent therefore stays on cell centers
    and its path length never undercuts the grid metric. State is per
    episode; call :meth:`reset`.
    """

    def __init__(self, turn_threshold: float = TURN_THRESHOLD, cache_size: int = 64):
        self.turn_threshold = turn_threshold
        self.cache_size = cache_size
        self._fields: dict = {}
        self.reset()

    def reset(self) -> None:
        self._bumped: set[Cell] = set()
        self._pending: Cell | None = None
        self._target: tuple[Cell, Cell, Cell] | None = None
        self._fields.clear()

    # -- planning ---------------------------------------------------------
    def planning_free(self, map_state: SemanticMapState, pose: Pose | None = None) -> np.ndarray:
        free = map_state.planning_free()
        if self._bumped:
            free = free.copy()
            for x, y in self._bumped:
                free[y, x] = False
        if pose is not None:
            cx, cy = pose.cell
            if not free[cy, cx]:
                free = free.copy()
                free[cy, cx] = True
        return free

    def field(self, map_state: SemanticMapState, goal: Cell, pose: Pose | None = None) -> DistanceField:
        free = self.planning_free(map_state, pose)
        gx, gy = goal
        if not (0 <= gx < free.shape[1] and 0 <= gy < free.shape[0]) or not free[gy, gx]:
            raise ReplanNeeded(f"goal {goal} is an obstacle on the current map")
        key = (goal, np.packbits(free).tobytes())
        f = self._fields.get(key)
        if f is None:
            if len(self._fields) >= self.cache_size:
                self._fields.clear()
            f = distance_field_fmm(free, [goal], CELL_SIZE)
            self._fields[key] = f
        return f

    def next_cell(self, U: np.ndarray, free: np.ndarray, cell: Cell, heading: int) -> Cell:
        """Axis-adjacent cell to move into next."""
        x, y = cell
        H, W = U.shape
        here = U[y, x]

        def ok(c: Cell) -> bool:
            return 0 <= c[0] < W and 0 <= c[1] < H and bool(free[c[1], c[0]])

        if self._pending is not None:
            px, py = self._pending
            if abs(px - x) + abs(py - y) == 1 and ok(self._pending):
                nxt, self._pending = self._pending, None
                return nxt
            self._pending = None
        downhill = []
        for (dx, dy), h in _AXIS_HEADING.items():
            c = (x + dx, y + dy)
            if ok(c) and U[c[1], c[0]] < here:
                turns = abs(_wrap(h - heading)) / TURN_ANGLE
                downhill.append((turns, U[c[1], c[0]], h, c))
        if downhill:
            # straight ahead wins when it still descends, otherwise the lowest
            straight = [d for d in downhill if d[0] == 0]
            if straight:
                return straight[0][3]
            return min(downhill, key=lambda d: (d[1], d[0], d[2]))[3]
        # only a diagonal descends: go through the lower flank, then finish the diagonal
        best = None
        for dx, dy in NEIGHBORS:
            if not (dx and dy):
                continue
            n = (x + dx, y + dy)
            fa, fb = (x + dx, y), (x, y + dy)
            if ok(n) and ok(fa) and ok(fb) and U[n[1], n[0]] < here:
                key = (U[n[1], n[0]], dy, dx)
                if best is None or key < best[0]:
                    best = (key, n, fa, fb)
        if best is None:
            raise ReplanNeeded(f"no descent direction at {cell}")
        _, n, fa, fb = best
        flank = fa if (U[fa[1], fa[0]], 0) <= (U[fb[1], fb[0]], 1) else fb
        self._pending = n
        return flank

    def step(self, map_state: SemanticMapState, pose: Pose, goal: LongTermGoal | Cell) -> Action:
        goal_cell = goal.cell if isinstance(goal, LongTermGoal) else tuple(goal)
        cell = pose.cell
        if max(abs(cell[0] - goal_cell[0]), abs(cell[1] - goal_cell[1])) <= 1:
            self._pending = None
            self._target = None
            return Action.STOP
        F = self.field(map_state, goal_cell, pose)
        U = F.values
        if not math.isfinite(U[cell[1], cell[0]]):
            raise ReplanNeeded(f"goal {goal_cell} unreachable on the current map")
        free = self.planning_free(map_state, pose)
        # hold the chosen neighbor while turning in place toward it
        held = self._target
        if held is not None and held[:2] == (cell, goal_cell) and free[held[2][1], held[2][0]]:
            nxt = held[2]
        else:
            nxt = self.next_cell(U, free, cell, pose.heading)
            self._target = (cell, goal_cell, nxt)
        tx, ty = (nxt[0] + 0.5) * CELL_SIZE, (nxt[1] + 0.5) * CELL_SIZE
        desired = math.degrees(math.atan2(-(ty - pose.y), tx - pose.x))
        err = _wrap(desired - pose.heading)
        if abs(err) > self.turn_threshold:
            return _turn_toward(err)
        return Action.MOVE_FORWARD

    def observe(self, pose_before: Pose, action: Action, events: StepEvents, map_state: SemanticMapState) -> None:
        """Remember the cells a failed forward move could have hit."""
        if action != Action.MOVE_FORWARD or not events.collided:
            return
        (ox, oy) = pose_before.cell
        nx, ny = _cell_of(*_landing(pose_before, pose_before.heading))
        suspects = [(nx, ny)]
        if nx != ox and ny != oy:
            suspects += [(nx, oy), (ox, ny)]
        M = map_state.size
        for x, y in suspects:
            if not (0 <= x < M and 0 <= y < M):
                continue
            known_free = map_state.explored[y, x] and not map_state.obstacle[y, x]
            if not known_free:
                self._bumped.add((x, y))
        self._pending = None
        self._target = None


def local_policy_step(map_state: SemanticMapState, pose: Pose, goal: LongTermGoal | Cell) -> Action:
    """Stateless single step of the local policy (no collision memory)."""
    return LocalPolicy().step(map_state, pose, goal)


# --------------------------------------------------------------------------
# goal selection for the oracles


def sam_oracle_goal(
    scene: GridScene, pose: Pose | Cell, remaining: Sequence[int], cache: FieldCache | None = None, t: int = 0
) -> LongTermGoal:
    """Nearest instance over all remaining categories (ground-truth geodesic);
    ties go to the lower category id, then row-major cell order."""
    if not remaining:
        raise UnreachableError("no remaining categories")
    cache = cache or DEFAULT_CACHE
    cell = pose.cell if isinstance(pose, Pose) else tuple(pose)
    best = None
    for cid in sorted(remaining):
        for inst in scene.instances(cid):
            d = cache.instance_field(scene, inst).at(cell)
            if not math.isfinite(d):
                continue
            key = (d, cid, inst[1], inst[0])
            if best is None or key < best[0]:
                best = (key, inst)
    if best is None:
        raise UnreachableError("every remaining category is unreachable")
    return LongTermGoal(best[1], t)


def psm_oracle_goal(
    scene: GridScene, pose: Pose | Cell, sequence: Sequence[int], cursor: int, cache: FieldCache | None = None, t: int = 0
) -> LongTermGoal:
    """Nearest instance of the category at ``sequence[cursor]``."""
    if not 0 <= cursor < len(sequence):
        raise UnreachableError(f"cursor {cursor} outside sequence of length {len(sequence)}")
    return sam_oracle_goal(scene, pose, [sequence[cursor]], cache, t)


def random_agent_step(rng: np.random.Generator) -> Action:
    return Action(int(rng.integers(3)))


def episode_rng(seed: int, episode_id: str) -> np.random.Generator:
    """Per-episode generator so results do not depend on episode order."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(episode_id.encode())])


# --------------------------------------------------------------------------
# agents


class Agent:
    kind = "base"

    def reset(self, env: MultiONEnv, state, obs) -> None:
        self.env = env

    def act(self, state, obs) -> Action:
        raise NotImplementedError

    def observe(self, state, action: Action, events: StepEvents) -> None:
        pass

    def end(self, state, obs) -> None:
        pass


class RandomAgent(Agent):
    kind = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def reset(self, env, state, obs) -> None:
        super().reset(env, state, obs)
        self.rng = episode_rng(self.seed, env.spec.episode_id)

    def act(self, state, obs) -> Action:
        return random_agent_step(self.rng)


class OracleAgent(Agent):
    """Plans on the ground-truth map toward the nearest instance of the
    currently active categories (all remaining for SAM, the sequence head
    for PSM)."""

    kind = "sam-oracle"

    def __init__(self, cache: FieldCache | None = None):
        self.cache = cache
        self.policy = LocalPolicy()

    def reset(self, env, state, obs) -> None:
        super().reset(env, state, obs)
        self.policy.reset()
        self.map = ground_truth_map(env.spec.scene, env.map.size)
        self._pose = state.pose

    def goal(self, state) -> LongTermGoal:
        return sam_oracle_goal(self.env.spec.scene, state.pose, self.env.active_targets(state), self.cache or self.env.cache, state.t)

    def act(self, state, obs) -> Action:
        self._pose = state.pose
        action = self.policy.step(self.map, state.pose, self.goal(state))
        # credit is automatic, so stopping would only end the episode early
        return Action.TURN_LEFT if action == Action.STOP else action

    def observe(self, state, action, events) -> None:
        self.policy.observe(self._pose, action, events, self.map)


class PSMOracleAgent(OracleAgent):
    kind = "psm-oracle"

    def goal(self, state) -> LongTermGoal:
        seq = self.env.spec.sequence
        if seq is None:
            raise ConfigError("psm-oracle needs an episode with a category sequence")
        return psm_oracle_goal(self.env.spec.scene, state.pose, seq, state.cursor, self.cache or self.env.cache, state.t)


# --------------------------------------------------------------------------
# goal-emitting (learned) agents


def map_image(map_state: SemanticMapState, m_in: int) -> np.ndarray:
    """Network input: all map and aux planes pooled to (m_in, m_in, C+5) uint8."""
    from .learn.augment import downsample_map

    return downsample_map(np.concatenate([map_state.channels, map_state.aux]), m_in)


def decode_goal(action: Sequence[float], size: int) -> Cell:
    u = min(max(float(action[0]), 0.0), 1.0)
    v = min(max(float(action[1]), 0.0), 1.0)
    return min(int(u * size), size - 1), min(int(v * size), size - 1)


def snap_goal(free: np.ndarray, start: Cell, cell: Cell) -> Cell:
    """Nearest cell to ``cell`` that is free and connected to ``start``
    (4-connectivity, which matches 8-connectivity without corner cutting);
    ties go row-major."""
    from scipy import ndimage

    labels, _ = ndimage.label(free)
    lab = labels[start[1], start[0]]
    if lab == 0:
        return start
    ys, xs = np.nonzero(labels == lab)
    d = (xs - cell[0]) ** 2 + (ys - cell[1]) ** 2
    i = int(np.argmin(d))  # nonzero() is row-major, so argmin keeps the first tie
    return int(xs[i]), int(ys[i])


class MacroGoalAgent(Agent):
    """Emits a long-term goal from ``goal_fn`` every ``goal_period`` steps (or
    on arrival or replan) and follows it with the local policy.

    ``goal_fn(image, encoding) -> (u, v)`` in [0, 1]^2. ``encoding`` is
    ``"multi"`` (all remaining targets) or ``"single"`` (the active sequence
    category). If ``recorder`` is set it receives one
    :class:`~multion.learn.replay.Transition` per finished macro-step; feed
    per-step rewards through :meth:`add_reward`.
    """

    kind = "learned-sam"

    def __init__(self, goal_fn, encoding: str = "multi", goal_period: int = GOAL_PERIOD, m_in: int = 24, recorder=None):
        if encoding not in ("multi", "single"):
            raise ConfigError(f"unknown target encoding {encoding!r}")
        self.goal_fn = goal_fn
        self.encoding = encoding
        self.goal_period = goal_period
        self.m_in = m_in
        self.recorder = recorder
        self.policy = LocalPolicy()

    def reset(self, env, state, obs) -> None:
        super().reset(env, state, obs)
        self.policy.reset()
        self.goal: LongTermGoal | None = None
        self.macro_steps = 0
        self._pose = state.pose
        self._open = None  # (image, encoding, action) of the running macro-step
        self._rewards: list[float] = []
        self.goals: list[LongTermGoal] = []

    def target_encoding(self, state) -> np.ndarray:
        cats = state.remaining if self.encoding == "multi" else self.env.active_targets(state)
        return self.env.spec.scene.catalog.encode(cats)

    def _close(self, obs, state, done: bool) -> None:
        if self._open is None:
            return
        if self.recorder is not None and self._rewards:
            from .learn.replay import Transition
            from .reward import macro_reward

            img, enc, action = self._open
            self.recorder(
                Transition(img, enc, action, macro_reward(self._rewards), map_image(obs.map, self.m_in), self.target_encoding(state), done)
            )
        self._open = None
        self._rewards = []

    def _new_macro(self, state, obs) -> None:
        self._close(obs, state, False)
        img = map_image(obs.map, self.m_in)
        enc = self.target_encoding(state)
        action = np.asarray(self.goal_fn(img, enc), dtype=np.float32)
        free = self.policy.planning_free(obs.map, state.pose)
        cell = snap_goal(free, state.pose.cell, decode_goal(action, obs.map.size))
        self.goal = LongTermGoal(cell, state.t)
        self.goals.append(self.goal)
        self.macro_steps = 0
        self._open = (img, enc, action)

    def act(self, state, obs) -> Action:
        self._pose = state.pose
        for _ in range(2):
            if self.goal is None or self.macro_steps >= self.goal_period:
                self._new_macro(state, obs)
            try:
                action = self.policy.step(obs.map, state.pose, self.goal)
            except ReplanNeeded:
                action = Action.STOP
            if action == Action.STOP:
                if self.macro_steps == 0:
                    # arrived (or stuck) at once: spend the step looking around
                    self.macro_steps += 1
                    return Action.TURN_LEFT
                self.goal = None
                continue
            self.macro_steps += 1
            return action
        self.macro_steps += 1
        return Action.TURN_LEFT

    def observe(self, state, action, events) -> None:
        self.policy.observe(self._pose, action, events, self.env.map)

    def add_reward(self, r: float) -> None:
        self._rewards.append(r)

    def end(self, state, obs) -> None:
        self._close(obs, state, state.cause == "all-found")
