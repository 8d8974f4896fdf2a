"""Shortest-path machinery on grid scenes.

Distances are in meters. Cells are ``(x, y)``; grids are indexed ``[y, x]``.
Movement is 8-connected with no corner cutting: a diagonal step is allowed
only when both axis-adjacent cells are free.
"""

from __future__ import annotations

import heapq
import io
import itertools
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BudgetExceededError, UnreachableError
from .scene import CELL_SIZE, Cell, GridScene

SQRT2 = math.sqrt(2.0)
AXIS = ((1, 0), (-1, 0), (0, 1), (0, -1))
DIAG = ((1, 1), (1, -1), (-1, 1), (-1, -1))
NEIGHBORS = AXIS + DIAG
# (axis offset, diagonal offset) pairs spanning the eight octant simplices
OCTANTS = tuple((a, d) for a in AXIS for d in DIAG if (a[0] and a[0] == d[0]) or (a[1] and a[1] == d[1]))

_EPS = 1e-9


@dataclass(frozen=True)
class DistanceField:
    values: np.ndarray
    source_set: tuple[Cell, ...]
    metric: str
    cell_size: float = CELL_SIZE

    def at(self, cell: Cell) -> float:
        return float(self.values[cell[1], cell[0]])

    def reachable(self, cell: Cell) -> bool:
        x, y = cell
        h, w = self.values.shape
        return 0 <= x < w and 0 <= y < h and math.isfinite(self.values[y, x])

    def to_csv(self) -> str:
        buf = io.StringIO()
        for row in self.values:
            buf.write(",".join("inf" if not math.isfinite(v) else repr(float(v)) for v in row))
            buf.write("\n")
        return buf.getvalue()


def _free_mask(grid: GridScene | np.ndarray) -> np.ndarray:
    if isinstance(grid, GridScene):
        return grid.free_mask
    return np.asarray(grid, dtype=bool)


def _cell_size(grid: GridScene | np.ndarray, cell_size: float | None) -> float:
    if cell_size is not None:
        return cell_size
    return grid.cell_size if isinstance(grid, GridScene) else CELL_SIZE


def _check_sources(free: np.ndarray, sources: Iterable[Cell]) -> tuple[Cell, ...]:
    srcs = tuple((int(x), int(y)) for x, y in sources)
    if not srcs:
        raise ValueError("source set must be nonempty")
    h, w = free.shape
    for x, y in srcs:
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"source {(x, y)} out of bounds")
    return srcs


def distance_field_dijkstra(
    grid: GridScene | np.ndarray, sources: Iterable[Cell], cell_size: float | None = None
) -> DistanceField:
    """Exact 8-connected shortest distances to the nearest source.

    ``grid`` is a scene or a boolean free mask. Obstacle sources are ignored
    (they stay at +inf) since nothing can stand on them.
    """
    free = _free_mask(grid)
    h_ = _cell_size(grid, cell_size)
    srcs = _check_sources(free, sources)
    H, W = free.shape
    dist = np.full((H, W), np.inf)
    heap: list[tuple[float, int, int]] = []
    for x, y in srcs:
        if free[y, x]:
            dist[y, x] = 0.0
            heap.append((0.0, x, y))
    heapq.heapify(heap)
    done = np.zeros((H, W), dtype=bool)
    diag_cost = h_ * SQRT2
    while heap:
        d, x, y = heapq.heappop(heap)
        if done[y, x]:
            continue
        done[y, x] = True
        for dx, dy in NEIGHBORS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < W and 0 <= ny < H) or not free[ny, nx] or done[ny, nx]:
                continue
            if dx and dy:
                if not (free[y, nx] and free[ny, x]):
                    continue
                nd = d + diag_cost
            else:
                nd = d + h_
            if nd < dist[ny, nx]:
                dist[ny, nx] = nd
                heapq.heappush(heap, (nd, nx, ny))
    dist.setflags(write=False)
    return DistanceField(dist, srcs, "dijkstra8", h_)


def _fmm_update(U: np.ndarray, accepted: np.ndarray, free: np.ndarray, x: int, y: int, h: float) -> float:
    """Smallest upwind value at (x, y) from accepted neighbors.

    Candidates are one-point updates along the 8 edges and two-point updates
    on the 8 octant simplices (axis neighbor, diagonal neighbor).
    """
    H, W = U.shape
    best = np.inf
    diag_ok = {}
    for dx, dy in DIAG:
        nx, ny = x + dx, y + dy
        diag_ok[(dx, dy)] = (
            0 <= nx < W and 0 <= ny < H and accepted[ny, nx] and free[y, nx] and free[ny, x]
        )
        if diag_ok[(dx, dy)]:
            best = min(best, U[ny, nx] + h * SQRT2)
    for dx, dy in AXIS:
        nx, ny = x + dx, y + dy
        if 0 <= nx < W and 0 <= ny < H and accepted[ny, nx]:
            best = min(best, U[ny, nx] + h)
    for (ax, ay), (dx, dy) in OCTANTS:
        if not diag_ok[(dx, dy)]:
            continue
        nx, ny = x + ax, y + ay
        if not (0 <= nx < W and 0 <= ny < H and accepted[ny, nx]):
            continue
        ua = U[ny, nx]
        ud = U[y + dy, x + dx]
        r = (ua - ud) / h
        if 0.0 < r < 1.0 / SQRT2:
            best = min(best, ua + h * math.sqrt(1.0 - r * r))
    return best


def _simplex(ua: float, ud: float, h: float) -> float:
    r = (ua - ud) / h
    if 0.0 < r < 1.0 / SQRT2:
        return ua + h * math.sqrt(1.0 - r * r)
    return math.inf


def distance_field_fmm(
    grid: GridScene | np.ndarray, sources: Iterable[Cell], cell_size: float | None = None
) -> DistanceField:
    """First-order fast marching solution of |grad T| = 1 on free cells.

    Uses the 8-neighbor simplex stencil: the interpolated front between an
    axis neighbor and a diagonal neighbor is minimised in closed form. Every
    Dijkstra edge relaxation is also a candidate, so the result never
    exceeds the dijkstra8 field, and by the triangle inequality it never
    drops below straight-line distance from a single source.

    Candidates are generated incrementally: when a cell is accepted, each
    open neighbor only evaluates the updates that use the new cell, which
    gives the same minimum as recomputing the full stencil.
    """
    free = _free_mask(grid)
    h = _cell_size(grid, cell_size)
    srcs = _check_sources(free, sources)
    H, W = free.shape
    # flat grid with a one-cell obstacle border removes bounds checks
    S = W + 2
    pad = np.zeros((H + 2, S), dtype=bool)
    pad[1:-1, 1:-1] = free
    fr = pad.ravel().tolist()
    n = len(fr)
    inf = math.inf
    U = [inf] * n
    acc = [False] * n
    hd = h * SQRT2
    axis_off = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    diag_off = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    # for q and an accepted axis neighbor p = q + a: the two diagonals d sharing a's
    # component, with flank offsets that must be free for the diagonal to count
    from_axis = {}
    for ax, ay in axis_off:
        lst = []
        for dx, dy in diag_off:
            if (ax and ax == dx) or (ay and ay == dy):
                lst.append((dy * S + dx, dx, dy * S))
        from_axis[ay * S + ax] = lst
    # for q and an accepted diagonal neighbor p = q + d: the two axis cells of d
    from_diag = {}
    for dx, dy in diag_off:
        from_diag[dy * S + dx] = (dx, dy * S)
    heap: list[tuple[float, int]] = []
    for x, y in srcs:
        i = (y + 1) * S + x + 1
        if fr[i]:
            U[i] = 0.0
            heap.append((0.0, i))
    heapq.heapify(heap)
    push, pop = heapq.heappush, heapq.heappop
    sqrt = math.sqrt
    lim = 1.0 / SQRT2
    while heap:
        u, p = pop(heap)
        if acc[p] or u > U[p]:
            continue
        acc[p] = True
        for a in from_axis:
            q = p - a  # p = q + a
            if not fr[q] or acc[q]:
                continue
            best = u + h
            for d, fx, fy in from_axis[a]:
                vd = q + d
                if acc[vd] and fr[q + fx] and fr[q + fy]:
                    r = (u - U[vd]) / h
                    if 0.0 < r < lim:
                        c = u + h * sqrt(1.0 - r * r)
                        if c < best:
                            best = c
            if best < U[q]:
                U[q] = best
                push(heap, (best, q))
        for d, (fx, fy) in from_diag.items():
            q = p - d  # p = q + d
            if not fr[q] or acc[q] or not (fr[q + fx] and fr[q + fy]):
                continue
            best = u + hd
            for va in (q + fx, q + fy):
                if acc[va]:
                    ua = U[va]
                    r = (ua - u) / h
                    if 0.0 < r < lim:
                        c = ua + h * sqrt(1.0 - r * r)
                        if c < best:
                            best = c
            if best < U[q]:
                U[q] = best
                push(heap, (best, q))
    out = np.array(U, dtype=float).reshape(H + 2, S)[1:-1, 1:-1].copy()
    out.setflags(write=False)
    return DistanceField(out, srcs, "fmm", h)


def fmm_residual(field_: DistanceField, free: np.ndarray) -> float:
    """Max deviation of each reached non-source cell from its own upwind update.

    Recomputes every cell's update from neighbors with strictly smaller
    values; zero (to rounding) for a converged solution.
    """
    U = field_.values
    src = set(field_.source_set)
    worst = 0.0
    H, W = U.shape
    for y in range(H):
        for x in range(W):
            if (x, y) in src or not math.isfinite(U[y, x]):
                continue
            upwind = U < U[y, x]
            worst = max(worst, abs(_fmm_update(U, upwind, free, x, y, field_.cell_size) - U[y, x]))
    return worst


# --------------------------------------------------------------------------
# per-scene caches


class FieldCache:
    """Dijkstra fields keyed by (scene, category) or (scene, instance cell).

    Safe for concurrent readers; each key is built once. Only the most
    recently used ``max_scenes`` scenes are kept.
    """

    def __init__(self, max_scenes: int = 256):
        self.max_scenes = max_scenes
        self._scenes: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def _get(self, scene: GridScene, key, build):
        with self._lock:
            entry = self._scenes.get(scene)
            if entry is None:
                entry = ({}, {})
                self._scenes[scene] = entry
                while len(self._scenes) > self.max_scenes:
                    self._scenes.popitem(last=False)
            else:
                self._scenes.move_to_end(scene)
            fields_, locks = entry
            f = fields_.get(key)
            if f is not None:
                return f
            klock = locks.setdefault(key, threading.Lock())
        with klock:
            f = fields_.get(key)
            if f is None:
                f = build()
                fields_[key] = f
        return f

    def category_field(self, scene: GridScene, category_id: int) -> DistanceField:
        def build():
            instances = scene.instances(category_id)
            if not instances:
                raise UnreachableError(f"category {scene.catalog.label(category_id)!r} has no instance in scene")
            return distance_field_dijkstra(scene, instances)

        return self._get(scene, ("category", category_id), build)

    def instance_field(self, scene: GridScene, cell: Cell) -> DistanceField:
        return self._get(scene, ("instance", tuple(cell)), lambda: distance_field_dijkstra(scene, [cell]))

    def clear(self) -> None:
        with self._lock:
            self._scenes.clear()


DEFAULT_CACHE = FieldCache()


def _as_cell(cell_or_pose) -> Cell:
    if hasattr(cell_or_pose, "cell"):
        return cell_or_pose.cell
    x, y = cell_or_pose
    return int(x), int(y)


def dtg(scene: GridScene, pose, category_id: int, cache: FieldCache | None = None) -> float:
    """Geodesic distance (m) from the pose's cell to the nearest instance of a category."""
    cache = cache or DEFAULT_CACHE
    return cache.category_field(scene, category_id).at(_as_cell(pose))


def nearest_instance(scene: GridScene, pose, category_id: int, cache: FieldCache | None = None) -> tuple[Cell, float]:
    """Closest instance cell of a category; ties broken row-major."""
    cache = cache or DEFAULT_CACHE
    cell = _as_cell(pose)
    best: tuple[Cell, float] | None = None
    for inst in scene.instances(category_id):
        d = cache.instance_field(scene, inst).at(cell)
        if best is None or d < best[1]:
            best = (inst, d)
    if best is None:
        raise UnreachableError(f"category {category_id} has no instance in scene")
    return best


def extract_path(field_: DistanceField, from_cell: Cell) -> list[Cell]:
    """Steepest-descent cell sequence from ``from_cell`` to a source.

    At every cell the next cell is the 8-neighbor with the largest drop per
    meter of step length; the field strictly decreases along the path.
    """
    if not field_.reachable(from_cell):
        raise UnreachableError(f"cell {from_cell} is not reachable in this field")
    U = field_.values
    H, W = U.shape
    h = field_.cell_size
    path = [tuple(from_cell)]
    x, y = from_cell
    while U[y, x] > 0.0:
        best, best_slope = None, 0.0
        for dx, dy in NEIGHBORS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < W and 0 <= ny < H) or not math.isfinite(U[ny, nx]):
                continue
            if dx and dy:
                if not (math.isfinite(U[y, nx]) and math.isfinite(U[ny, x])):
                    continue
                step = h * SQRT2
            else:
                step = h
            slope = (U[y, x] - U[ny, nx]) / step
            if slope > best_slope:
                best, best_slope = (nx, ny), slope
        if best is None:
            raise UnreachableError(f"no descent direction at {(x, y)}")
        x, y = best
        path.append(best)
    return path


def path_cost(path: Sequence[Cell], cell_size: float = CELL_SIZE) -> float:
    total = 0.0
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        total += cell_size * (SQRT2 if (x0 != x1 and y0 != y1) else 1.0)
    return total


# --------------------------------------------------------------------------
# multi-goal optimal length (g)


@dataclass(frozen=True)
class MultiGoalQuery:
    scene: GridScene
    start_cell: Cell
    goal_sets: tuple[tuple[Cell, ...], ...]
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "goal_sets", tuple(tuple(tuple(c) for c in gs) for gs in self.goal_sets))
        for i, gs in enumerate(self.goal_sets):
            if not gs:
                raise ValueError(f"goal set {i} is empty")

    @classmethod
    def for_categories(cls, scene: GridScene, start_cell: Cell, categories: Iterable[int], radius: float = 1.0):
        return cls(scene, tuple(start_cell), tuple(tuple(scene.instances(c)) for c in categories), radius)


def optimal_multigoal_length(query: MultiGoalQuery) -> float:
    """Exact shortest walk that comes within ``radius`` of one instance of every goal set.

    Dijkstra over (cell, bitmask of satisfied goal sets); entering a cell
    satisfies every goal set whose nearest instance is within the radius.
    """
    scene = query.scene
    free = scene.free_mask
    k = len(query.goal_sets)
    sx, sy = query.start_cell
    if not scene.is_free((sx, sy)):
        raise UnreachableError(f"start cell {(sx, sy)} is not free")
    H, W = free.shape
    sat = np.zeros((H, W), dtype=np.int64)
    for i, gs in enumerate(query.goal_sets):
        f = distance_field_dijkstra(scene, gs)
        if not math.isfinite(f.at((sx, sy))):
            raise UnreachableError(f"goal set {i} is unreachable from {(sx, sy)}")
        sat |= np.where(f.values <= query.radius + _EPS, 1 << i, 0)
    full = (1 << k) - 1
    h = scene.cell_size
    dist = np.full((1 << k, H, W), np.inf)
    m0 = int(sat[sy, sx])
    dist[m0, sy, sx] = 0.0
    heap = [(0.0, m0, sx, sy)]
    while heap:
        d, m, x, y = heapq.heappop(heap)
        if d > dist[m, y, x]:
            continue
        if m == full:
            return d
        for dx, dy in NEIGHBORS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < W and 0 <= ny < H) or not free[ny, nx]:
                continue
            if dx and dy:
                if not (free[y, nx] and free[ny, x]):
                    continue
                nd = d + h * SQRT2
            else:
                nd = d + h
            nm = m | int(sat[ny, nx])
            if nd < dist[nm, ny, nx]:
                dist[nm, ny, nx] = nd
                heapq.heappush(heap, (nd, nm, nx, ny))
    raise UnreachableError("not every goal set can be satisfied")


def _grid_graph(free: np.ndarray, h: float):
    """Sparse 8-connected adjacency (no corner cutting) for scipy's csgraph."""
    from scipy.sparse import coo_matrix

    H, W = free.shape
    rows, cols, vals = [], [], []
    for y in range(H):
        for x in range(W):
            if not free[y, x]:
                continue
            for dx, dy in NEIGHBORS:
                nx, ny = x + dx, y + dy
                if not (0 <= nx < W and 0 <= ny < H) or not free[ny, nx]:
                    continue
                if dx and dy and not (free[y, nx] and free[ny, x]):
                    continue
                rows.append(y * W + x)
                cols.append(ny * W + nx)
                vals.append(h * (SQRT2 if dx and dy else 1.0))
    return coo_matrix((vals, (rows, cols)), shape=(H * W, H * W)).tocsr()


def brute_force_multigoal(query: MultiGoalQuery, max_work: int = 50_000_000) -> float:
    """Exhaustive minimum over goal-set orders, instance choices and stopping cells.

    Independent of :func:`optimal_multigoal_length`: distances come from
    scipy's csgraph on an explicitly built grid graph, and for each order
    the sum over consecutive legs is minimised over every tuple of stopping
    cells (layer by layer, which enumerates the same tuples).
    """
    from scipy.sparse.csgraph import shortest_path

    k = len(query.goal_sets)
    if k > 4:
        raise BudgetExceededError(f"brute force supports at most 4 goal sets, got {k}")
    scene = query.scene
    free = scene.free_mask
    H, W = free.shape
    graph = _grid_graph(free, scene.cell_size)
    start = query.start_cell[1] * W + query.start_cell[0]

    candidates: list[list[int]] = []
    for i, gs in enumerate(query.goal_sets):
        inst = [y * W + x for x, y in gs]
        d_inst = shortest_path(graph, method="D", indices=inst)
        cells: set[int] = set()
        for row in d_inst:
            cells.update(int(c) for c in np.nonzero(row <= query.radius + _EPS)[0])
        if not cells:
            raise UnreachableError(f"goal set {i} has no reachable stopping cell")
        candidates.append(sorted(cells))

    perms = list(itertools.permutations(range(k)))
    work = sum(
        len(candidates[p[0]]) + sum(len(candidates[a]) * len(candidates[b]) for a, b in zip(p, p[1:]))
        for p in perms
    )
    if work > max_work:
        raise BudgetExceededError(f"enumeration needs {work} evaluations, budget is {max_work}")

    all_cells = sorted({start}.union(*map(set, candidates)))
    index = {c: i for i, c in enumerate(all_cells)}
    D = shortest_path(graph, method="D", indices=all_cells)

    best = np.inf
    for perm in perms:
        layer = np.array([D[index[start], c] for c in candidates[perm[0]]])
        for a, b in zip(perm, perm[1:]):
            ia = [index[c] for c in candidates[a]]
            legs = D[np.ix_(ia, candidates[b])]
            layer = np.min(layer[:, None] + legs, axis=0)
        best = min(best, float(layer.min()))
    if not math.isfinite(best):
        raise UnreachableError("not every goal set can be satisfied")
    return best
