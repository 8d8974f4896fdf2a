"""Episode state machine for multi-object navigation on a grid scene.

Four actions: move-forward (0.25 m along the heading), turn-left and
turn-right (30 degrees) and stop. Headings are degrees counter-clockwise
from +x with y pointing down the rows, so heading 90 faces row 0.
"""

from __future__ import annotations

import enum
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import EpisodeSpecError, EpisodeTerminatedError
from .geodesy import DEFAULT_CACHE, FieldCache
from .scene import CELL_SIZE, Cell, GridScene

FORWARD_STEP = 0.25
TURN_ANGLE = 30
HEADINGS = tuple(range(0, 360, TURN_ANGLE))


class Action(enum.IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, text: str) -> "Action":
        return cls[text.strip().upper().replace("-", "_")]


def _unit(heading: int) -> tuple[float, float]:
    """Displacement per meter for a heading, exact on the axes."""
    exact = {0: (1.0, 0.0), 90: (0.0, -1.0), 180: (-1.0, 0.0), 270: (0.0, 1.0)}
    if heading in exact:
        return exact[heading]
    r = math.radians(heading)
    return math.cos(r), -math.sin(r)


_STEP = {h: tuple(FORWARD_STEP * c for c in _unit(h)) for h in HEADINGS}


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: int = 0

    def __post_init__(self):
        if self.heading % TURN_ANGLE != 0 or not 0 <= self.heading < 360:
            raise EpisodeSpecError(f"heading must be a multiple of {TURN_ANGLE} in [0, 360), got {self.heading}")

    @property
    def cell(self) -> Cell:
        return int(math.floor(self.x / CELL_SIZE)), int(math.floor(self.y / CELL_SIZE))

    @classmethod
    def at_cell(cls, cell: Cell, heading: int = 0) -> "Pose":
        return cls((cell[0] + 0.5) * CELL_SIZE, (cell[1] + 0.5) * CELL_SIZE, heading)


@dataclass(frozen=True)
class EpisodeSpec:
    scene: GridScene
    start: Pose
    targets: tuple[int, ...]
    max_steps: int
    success_radius: float = 1.0
    # ordered targets for pre-sequenced episodes; None means sequence-agnostic
    sequence: tuple[int, ...] | None = None
    opportunistic: bool = False
    episode_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(sorted(set(int(t) for t in self.targets))))
        if self.sequence is not None:
            object.__setattr__(self, "sequence", tuple(int(c) for c in self.sequence))
        self.validate()

    @property
    def k(self) -> int:
        return len(self.targets)

    def validate(self) -> None:
        if len(self.targets) < 1:
            raise EpisodeSpecError("episode needs at least one target category")
        if self.max_steps <= 0:
            raise EpisodeSpecError("max_steps must be positive")
        if not self.success_radius > 0:
            raise EpisodeSpecError("success radius must be positive")
        if self.scene.cell_size != CELL_SIZE:
            raise EpisodeSpecError(f"scene cell size must be {CELL_SIZE} m")
        for cid in self.targets:
            if not 0 <= cid < len(self.scene.catalog):
                raise EpisodeSpecError(f"target category id {cid} not in catalog")
            if not self.scene.instances(cid):
                raise EpisodeSpecError(
                    f"target category {self.scene.catalog.label(cid)!r} has no instance in the scene"
                )
        if not self.scene.is_free(self.start.cell):
            raise EpisodeSpecError(f"start cell {self.start.cell} is not free")
        if self.sequence is not None and sorted(self.sequence) != list(self.targets):
            raise EpisodeSpecError("sequence must be a permutation of the targets")


@dataclass(frozen=True)
class EpisodeState:
    pose: Pose
    t: int
    remaining: tuple[int, ...]
    found_log: tuple[tuple[int, int, Cell], ...]
    forward_moves: int
    terminated: bool = False
    cause: str | None = None
    cursor: int = 0

    @property
    def path_length(self) -> float:
        return FORWARD_STEP * self.forward_moves

    @property
    def found(self) -> tuple[int, ...]:
        return tuple(cid for cid, _, _ in self.found_log)


@dataclass
class SemanticMapState:
    """Accumulated map: ``channels`` is (C+2, M, M) with obstacle, explored
    and one plane per category; ``aux`` is (3, M, M) with the agent cell,
    visited cells and credited instance cells."""

    channels: np.ndarray
    aux: np.ndarray

    OBSTACLE = 0
    EXPLORED = 1
    AGENT, TRAJECTORY, FOUND = 0, 1, 2

    @classmethod
    def empty(cls, num_categories: int, size: int) -> "SemanticMapState":
        return cls(
            np.zeros((num_categories + 2, size, size), dtype=np.uint8),
            np.zeros((3, size, size), dtype=np.uint8),
        )

    @property
    def size(self) -> int:
        return self.channels.shape[-1]

    @property
    def obstacle(self) -> np.ndarray:
        return self.channels[self.OBSTACLE]

    @property
    def explored(self) -> np.ndarray:
        return self.channels[self.EXPLORED]

    def category(self, cid: int) -> np.ndarray:
        return self.channels[2 + cid]

    def explored_count(self) -> int:
        return int(self.channels[self.EXPLORED].sum())

    def copy(self) -> "SemanticMapState":
        return SemanticMapState(self.channels.copy(), self.aux.copy())

    def tensor(self) -> np.ndarray:
        """(C+5, M, M) float32 stack of map channels and aux planes."""
        return np.concatenate([self.channels, self.aux]).astype(np.float32)

    def planning_free(self) -> np.ndarray:
        """Cells the local planner may cross: anything not a known obstacle."""
        return self.channels[self.OBSTACLE] == 0


@dataclass(frozen=True)
class Observation:
    map: SemanticMapState
    remaining_encoding: np.ndarray
    pose: Pose


@dataclass(frozen=True)
class StepEvents:
    collided: bool
    categories_found: tuple[int, ...]
    moved_distance: float
    # geodesic distances for the categories remaining at the start of the step
    dtg_before: dict
    dtg_after: dict

    @property
    def subgoals_reached(self) -> int:
        return len(self.categories_found)


@dataclass(frozen=True)
class EnvOptions:
    fov_deg: float = 90.0
    sensor_range: float = 5.0
    success_metric: str = "geodesic"
    require_seen: bool = False
    map_size: int | None = None
    initial_sweep: bool = True

    def __post_init__(self):
        if self.success_metric not in ("geodesic", "euclidean"):
            raise EpisodeSpecError(f"unknown success metric {self.success_metric!r}")


# --------------------------------------------------------------------------
# sensing


def _segment_blocked(occ: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> bool:
    """True when the segment between two cell centers crosses an obstacle.

    Endpoints are not tested. Passing exactly through a cell corner blocks
    only if both cells flanking the corner are obstacles, and never when
    the corner is on the target cell itself.
    """
    if (x0, y0) == (x1, y1):
        return False
    H, W = occ.shape
    dx, dy = x1 - x0, y1 - y0
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    t_dx = abs(1.0 / dx) if dx else math.inf
    t_dy = abs(1.0 / dy) if dy else math.inf
    # centers sit at +0.5, so the first boundary is half a cell away
    t_mx = 0.5 * t_dx
    t_my = 0.5 * t_dy
    cx, cy = x0, y0
    while True:
        if abs(t_mx - t_my) < 1e-12:
            nx, ny = cx + sx, cy + sy
            if (nx, ny) == (x1, y1):
                return False
            if occ[cy, nx] and occ[ny, cx]:
                return True
            cx, cy = nx, ny
            t_mx += t_dx
            t_my += t_dy
        elif t_mx < t_my:
            cx += sx
            t_mx += t_dx
        else:
            cy += sy
            t_my += t_dy
        if (cx, cy) == (x1, y1):
            return False
        if occ[cy, cx]:
            return True


class Sensor:
    """Ground-truth reveal by raycasting from the agent's cell center.

    Line of sight depends only on the scene and the cell, so it is computed
    once per cell; each heading then filters by field of view.
    """

    def __init__(self, fov_deg: float = 90.0, sensor_range: float = 5.0, max_scenes: int = 32):
        self.fov_deg = fov_deg
        self.sensor_range = sensor_range
        self.max_scenes = max_scenes
        self._scenes: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def _store(self, scene: GridScene) -> dict:
        """Per-scene cache dict; least recently used scenes are dropped."""
        with self._lock:
            store = self._scenes.get(scene)
            if store is None:
                store = {"los": {}, "vis": {}, "objects": None}
                self._scenes[scene] = store
                while len(self._scenes) > self.max_scenes:
                    self._scenes.popitem(last=False)
            else:
                self._scenes.move_to_end(scene)
            return store

    def visible(self, scene: GridScene, cell: Cell, heading: int) -> np.ndarray:
        """Flat indices (row-major over the scene) of cells visible from a pose."""
        store = self._store(scene)
        key = (cell, heading)
        vis = store["vis"].get(key)
        if vis is None:
            idx, dx, dy, dist = self._line_of_sight(scene, cell, store)
            ux, uy = _unit(heading)
            cos_half = math.cos(math.radians(self.fov_deg / 2.0))
            with np.errstate(invalid="ignore", divide="ignore"):
                cosang = np.where(dist > 0, (dx * ux + dy * uy) / dist, 1.0)
            vis = idx[cosang >= cos_half - 1e-9]
            vis.setflags(write=False)
            store["vis"][key] = vis
        return vis

    def _line_of_sight(self, scene: GridScene, cell: Cell, store: dict):
        los = store["los"].get(cell)
        if los is not None:
            return los
        occ = scene.occupancy
        W, H = scene.width, scene.height
        ox, oy = cell
        reach = self.sensor_range / scene.cell_size
        r = int(math.floor(reach))
        idx, dxs, dys = [], [], []
        for y in range(max(0, oy - r), min(H, oy + r + 1)):
            for x in range(max(0, ox - r), min(W, ox + r + 1)):
                dx, dy = x - ox, y - oy
                if math.hypot(dx, dy) > reach + 1e-9:
                    continue
                if _segment_blocked(occ, ox, oy, x, y):
                    continue
                idx.append(y * W + x)
                dxs.append(dx)
                dys.append(dy)
        dx = np.array(dxs, dtype=float)
        dy = np.array(dys, dtype=float)
        los = (np.array(idx, dtype=np.int64), dx, dy, np.hypot(dx, dy))
        store["los"][cell] = los
        return los

    def object_index(self, scene: GridScene) -> tuple[np.ndarray, np.ndarray]:
        """Flat cell index and category id of every object in the scene."""
        store = self._store(scene)
        objs = store["objects"]
        if objs is None:
            flat = np.array([y * scene.width + x for _, (x, y) in scene.objects], dtype=np.int64)
            cids = np.array([cid for cid, _ in scene.objects], dtype=np.int64)
            objs = (flat, cids)
            store["objects"] = objs
        return objs


def sense(scene: GridScene, pose: Pose, map_state: SemanticMapState, sensor: Sensor | None = None) -> SemanticMapState:
    """Reveal everything visible from ``pose`` into ``map_state`` (in place) and return it."""
    sensor = sensor or _DEFAULT_SENSOR
    _reveal(scene, map_state, sensor.visible(scene, pose.cell, pose.heading), sensor)
    cx, cy = pose.cell
    map_state.aux[SemanticMapState.AGENT].fill(0)
    map_state.aux[SemanticMapState.AGENT, cy, cx] = 1
    map_state.aux[SemanticMapState.TRAJECTORY, cy, cx] = 1
    return map_state


def _reveal(scene: GridScene, map_state: SemanticMapState, vis: np.ndarray, sensor: "Sensor") -> None:
    W = scene.width
    ys, xs = np.divmod(vis, W)
    ch = map_state.channels
    ch[SemanticMapState.EXPLORED, ys, xs] = 1
    occ = scene.occupancy[ys, xs]
    ch[SemanticMapState.OBSTACLE, ys[occ], xs[occ]] = 1
    flat, cids = sensor.object_index(scene)
    if len(flat):
        seen = np.isin(flat, vis)
        oys, oxs = np.divmod(flat[seen], W)
        ch[2 + cids[seen], oys, oxs] = 1


_DEFAULT_SENSOR = Sensor()


# --------------------------------------------------------------------------
# the environment


class MultiONEnv:
    """Runs one episode at a time; scenes and caches may be shared read-only."""

    def __init__(self, options: EnvOptions | None = None, cache: FieldCache | None = None, sensor: Sensor | None = None):
        self.options = options or EnvOptions()
        self.cache = cache or DEFAULT_CACHE
        if sensor is None:
            if (self.options.fov_deg, self.options.sensor_range) == (90.0, 5.0):
                sensor = _DEFAULT_SENSOR
            else:
                sensor = Sensor(self.options.fov_deg, self.options.sensor_range)
        self.sensor = sensor
        self.spec: EpisodeSpec | None = None
        self.state: EpisodeState | None = None
        self.map: SemanticMapState | None = None

    # -- helpers ---------------------------------------------------------
    def map_size(self, scene: GridScene) -> int:
        m = self.options.map_size or max(scene.width, scene.height)
        if m < max(scene.width, scene.height):
            raise EpisodeSpecError(f"map size {m} smaller than scene {scene.width}x{scene.height}")
        return m

    def _category_distance(self, cid: int, pose: Pose) -> float:
        return self.cache.category_field(self.spec.scene, cid).at(pose.cell)

    def _instance_within(self, cid: int, pose: Pose) -> Cell | None:
        """Nearest instance of ``cid`` within the success radius, or None."""
        scene = self.spec.scene
        radius = self.spec.success_radius + 1e-9
        best = None
        for inst in scene.instances(cid):
            if self.options.success_metric == "geodesic":
                d = self.cache.instance_field(scene, inst).at(pose.cell)
            else:
                d = math.hypot(pose.x - (inst[0] + 0.5) * CELL_SIZE, pose.y - (inst[1] + 0.5) * CELL_SIZE)
            if d > radius:
                continue
            if self.options.require_seen and not self.map.channels[2 + cid, inst[1], inst[0]]:
                continue
            if best is None or d < best[1]:
                best = (inst, d)
        return None if best is None else best[0]

    def _credit(self, state: EpisodeState) -> tuple[EpisodeState, tuple[int, ...]]:
        spec = self.spec
        found = []
        remaining = list(state.remaining)
        log = list(state.found_log)
        cursor = state.cursor
        progress = True
        while progress and remaining:
            progress = False
            if spec.sequence is None or spec.opportunistic:
                candidates = list(remaining)
            else:
                candidates = [spec.sequence[cursor]]
            for cid in candidates:
                inst = self._instance_within(cid, state.pose)
                if inst is None:
                    continue
                remaining.remove(cid)
                log.append((cid, state.t, inst))
                found.append(cid)
                self.map.aux[SemanticMapState.FOUND, inst[1], inst[0]] = 1
                progress = True
            if spec.sequence is not None:
                while cursor < len(spec.sequence) and spec.sequence[cursor] not in remaining:
                    cursor += 1
            if spec.sequence is None or spec.opportunistic:
                break
        state = replace(state, remaining=tuple(remaining), found_log=tuple(log), cursor=cursor)
        return state, tuple(found)

    def _observation(self) -> Observation:
        return Observation(
            map=self.map.copy(),
            remaining_encoding=self.spec.scene.catalog.encode(self.state.remaining),
            pose=self.state.pose,
        )

    def active_targets(self, state: EpisodeState | None = None) -> tuple[int, ...]:
        """Categories the agent is currently asked to pursue."""
        state = state or self.state
        if self.spec.sequence is None or self.spec.opportunistic or not state.remaining:
            return state.remaining
        return (self.spec.sequence[state.cursor],)

    def dtg_snapshot(self, categories: Iterable[int], pose: Pose | None = None) -> dict:
        pose = pose or self.state.pose
        return {cid: self._category_distance(cid, pose) for cid in categories}

    # -- API ---------------------------------------------------------------
    def reset(self, spec: EpisodeSpec) -> tuple[EpisodeState, Observation]:
        spec.validate()
        self.spec = spec
        scene = spec.scene
        M = self.map_size(scene)
        self.map = SemanticMapState.empty(len(scene.catalog), M)
        if M > scene.width or M > scene.height:
            pad = np.ones((M, M), dtype=bool)
            pad[: scene.height, : scene.width] = False
            self.map.channels[SemanticMapState.OBSTACLE][pad] = 1
            self.map.channels[SemanticMapState.EXPLORED][pad] = 1
        pose = spec.start
        if self.options.initial_sweep:
            for h in HEADINGS:
                _reveal(scene, self.map, self.sensor.visible(scene, pose.cell, h), self.sensor)
        sense(scene, pose, self.map, self.sensor)
        state = EpisodeState(
            pose=pose, t=0, remaining=spec.targets, found_log=(), forward_moves=0,
            cursor=0,
        )
        state, _ = self._credit(state)
        if not state.remaining:
            state = replace(state, terminated=True, cause="all-found")
        self.state = state
        return state, self._observation()

    def step(self, action: Action | int) -> tuple[EpisodeState, Observation, StepEvents]:
        if self.state is None:
            raise EpisodeTerminatedError("reset() must be called before step()")
        if self.state.terminated:
            raise EpisodeTerminatedError(f"episode already terminated ({self.state.cause})")
        action = Action(action)
        state = self.state
        scene = self.spec.scene
        tracked = state.remaining
        before = self.dtg_snapshot(tracked, state.pose)
        pose = state.pose
        collided = False
        moved = 0.0
        moves = state.forward_moves
        if action == Action.MOVE_FORWARD:
            dx, dy = _STEP[pose.heading]
            new = Pose(pose.x + dx, pose.y + dy, pose.heading)
            (ox, oy), (nx, ny) = pose.cell, new.cell
            blocked = not scene.is_free((nx, ny))
            if not blocked and nx != ox and ny != oy:
                # no squeezing between diagonal obstacles
                blocked = not (scene.is_free((nx, oy)) and scene.is_free((ox, ny)))
            if blocked:
                collided = True
            else:
                pose = new
                moved = FORWARD_STEP
                moves += 1
        elif action == Action.TURN_LEFT:
            pose = Pose(pose.x, pose.y, (pose.heading + TURN_ANGLE) % 360)
        elif action == Action.TURN_RIGHT:
            pose = Pose(pose.x, pose.y, (pose.heading - TURN_ANGLE) % 360)

        state = replace(state, pose=pose, t=state.t + 1, forward_moves=moves)
        sense(scene, pose, self.map, self.sensor)
        after = self.dtg_snapshot(tracked, pose)
        if action == Action.STOP:
            found = ()
            state = replace(state, terminated=True, cause="stop-action")
        else:
            state, found = self._credit(state)
            if not state.remaining:
                state = replace(state, terminated=True, cause="all-found")
            elif state.t >= self.spec.max_steps:
                state = replace(state, terminated=True, cause="max-steps")
        self.state = state
        events = StepEvents(collided, found, moved, before, after)
        return state, self._observation(), events


# --------------------------------------------------------------------------
# trajectory log


def format_log_line(t: int, action: Action, pose: Pose, collided: bool, found_labels: Sequence[str], reward: float) -> str:
    return "\t".join(
        [
            str(t),
            action.label,
            f"{pose.x:.6f}",
            f"{pose.y:.6f}",
            str(pose.heading),
            "1" if collided else "0",
            "found:" + ",".join(found_labels),
            repr(float(reward)),
        ]
    )


def parse_log_line(line: str) -> dict:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 8 or not parts[6].startswith("found:"):
        raise ValueError(f"malformed trajectory line: {line!r}")
    found = parts[6][len("found:"):]
    return {
        "t": int(parts[0]),
        "action": Action.parse(parts[1]),
        "x": float(parts[2]),
        "y": float(parts[3]),
        "heading": int(parts[4]),
        "collided": parts[5] == "1",
        "found": tuple(found.split(",")) if found else (),
        "reward": float(parts[7]),
    }
