"""Static world model: category catalog, grid scenes, scene files and a
procedural multi-room generator."""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationError, SceneParseError, SceneValidationError

DEFAULT_CATEGORIES = ("chair", "couch", "potted plant", "bed", "toilet", "tv")
DEFAULT_ENCODING_WIDTH = 16
CELL_SIZE = 0.25
HEADER_MAGIC = "multion-scene"
FORMAT_VERSION = "v1"

Cell = tuple[int, int]


@dataclass(frozen=True)
class CategoryCatalog:
    names: tuple[str, ...] = DEFAULT_CATEGORIES
    encoding_width: int = DEFAULT_ENCODING_WIDTH

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) == 0:
            raise SceneValidationError("catalog must contain at least one category")
        if len(self.names) > self.encoding_width:
            raise SceneValidationError(
                f"catalog has {len(self.names)} categories but encoding width is {self.encoding_width}"
            )
        if len(set(self.names)) != len(self.names):
            raise SceneValidationError("catalog names must be unique")
        for name in self.names:
            # '_' is the on-disk stand-in for a space
            if not name or name != name.strip() or "_" in name or "  " in name or "\t" in name:
                raise SceneValidationError(f"invalid category label {name!r}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, label: str) -> int:
        try:
            return self.names.index(label)
        except ValueError:
            raise SceneValidationError(f"unknown category label {label!r}") from None

    def label(self, category_id: int) -> str:
        return self.names[category_id]

    def encode(self, category_ids: Iterable[int]) -> np.ndarray:
        """Multi-hot vector of width ``encoding_width``."""
        vec = np.zeros(self.encoding_width, dtype=np.float32)
        for cid in category_ids:
            vec[cid] = 1.0
        return vec


class GridScene:
    """Immutable occupancy grid with semantic object instances.

    ``occupancy`` is indexed ``[y, x]`` (row, column); cells are ``(x, y)``.
    """

    __slots__ = ("width", "height", "cell_size", "occupancy", "objects", "catalog", "_hash")

    def __init__(
        self,
        occupancy: np.ndarray,
        objects: Sequence[tuple[int, Cell]],
        catalog: CategoryCatalog | None = None,
        cell_size: float = CELL_SIZE,
    ):
        occ = np.array(occupancy, dtype=bool, copy=True)
        if occ.ndim != 2:
            raise SceneValidationError("occupancy must be a 2-D grid")
        occ.setflags(write=False)
        height, width = occ.shape
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "cell_size", float(cell_size))
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(
            self, "objects", tuple((int(c), (int(x), int(y))) for c, (x, y) in objects)
        )
        object.__setattr__(self, "catalog", catalog or CategoryCatalog())
        object.__setattr__(self, "_hash", None)
        self._validate()

    def __setattr__(self, name, value):
        raise AttributeError("GridScene is immutable")

    def _validate(self) -> None:
        # corridors one cell wide are legal; only the longer side must reach 4
        if min(self.width, self.height) < 1 or max(self.width, self.height) < 4:
            raise SceneValidationError(f"scene too small: {self.width}x{self.height}")
        if not self.cell_size > 0:
            raise SceneValidationError("cell_size must be positive")
        for cid, (x, y) in self.objects:
            if not 0 <= cid < len(self.catalog):
                raise SceneValidationError(f"object category id {cid} not in catalog")
            if not self.in_bounds((x, y)):
                raise SceneValidationError(f"object {self.catalog.label(cid)!r} at {(x, y)} is out of bounds")
            if self.occupancy[y, x]:
                raise SceneValidationError(f"object {self.catalog.label(cid)!r} at {(x, y)} is on an obstacle")

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.occupancy[cell[1], cell[0]]

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.occupancy

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(~self.occupancy)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def instances(self, category_id: int) -> list[Cell]:
        """Instance cells of a category in row-major order."""
        cells = {cell for cid, cell in self.objects if cid == category_id}
        return sorted(cells, key=lambda c: (c[1], c[0]))

    def categories_present(self) -> list[int]:
        return sorted({cid for cid, _ in self.objects})

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridScene):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.cell_size == other.cell_size
            and self.objects == other.objects
            and self.catalog == other.catalog
            and np.array_equal(self.occupancy, other.occupancy)
        )

    def __hash__(self) -> int:
        if self._hash is None:
            h = hash((self.width, self.height, self.cell_size, self.occupancy.tobytes(), self.objects, self.catalog))
            object.__setattr__(self, "_hash", h)
        return self._hash

    def __repr__(self) -> str:
        return f"GridScene({self.width}x{self.height}, {len(self.objects)} objects)"


def _label_token(label: str) -> str:
    return label.replace(" ", "_")


def _token_label(token: str) -> str:
    return token.replace("_", " ")


def dumps_scene(scene: GridScene) -> str:
    lines = [f"{HEADER_MAGIC} {FORMAT_VERSION} {scene.width} {scene.height} {scene.cell_size!r}"]
    for row in scene.occupancy:
        lines.append("".join("#" if v else "." for v in row))
    for cid, (x, y) in scene.objects:
        lines.append(f"obj {_label_token(scene.catalog.label(cid))} {x} {y}")
    if scene.catalog != CategoryCatalog():
        lines.append("catalog " + " ".join(_label_token(n) for n in scene.catalog.names))
    return "\n".join(lines) + "\n"


def loads_scene(text: str) -> GridScene:
    lines = text.splitlines()
    if not lines:
        raise SceneParseError("empty scene file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != HEADER_MAGIC or header[1] != FORMAT_VERSION:
        raise SceneParseError(f"bad header line: {lines[0]!r}")
    try:
        width, height, cell_size = int(header[2]), int(header[3]), float(header[4])
    except ValueError:
        raise SceneParseError(f"bad header values: {lines[0]!r}") from None
    if width <= 0 or height <= 0:
        raise SceneParseError("width and height must be positive")
    if len(lines) < 1 + height:
        raise SceneParseError(f"expected {height} grid rows, found {len(lines) - 1}")
    occ = np.zeros((height, width), dtype=bool)
    for r in range(height):
        row = lines[1 + r]
        if len(row) != width or set(row) - {"#", "."}:
            raise SceneParseError(f"grid row {r} must be {width} characters of '#' or '.': {row!r}")
        occ[r] = [ch == "#" for ch in row]

    raw_objects: list[tuple[str, int, int, int]] = []
    catalog = CategoryCatalog()
    seen_catalog = False
    for lineno, line in enumerate(lines[1 + height:], start=2 + height):
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "obj":
            if len(parts) != 4:
                raise SceneParseError(f"line {lineno}: expected 'obj <label> <x> <y>'")
            try:
                x, y = int(parts[2]), int(parts[3])
            except ValueError:
                raise SceneParseError(f"line {lineno}: non-integer coordinates") from None
            raw_objects.append((_token_label(parts[1]), x, y, lineno))
        elif parts[0] == "catalog":
            if seen_catalog:
                raise SceneParseError(f"line {lineno}: duplicate catalog line")
            if len(parts) < 2:
                raise SceneParseError(f"line {lineno}: empty catalog")
            seen_catalog = True
            catalog = CategoryCatalog(tuple(_token_label(p) for p in parts[1:]))
        else:
            raise SceneParseError(f"line {lineno}: unknown record {parts[0]!r}")

    objects = [(catalog.index(label), (x, y)) for label, x, y, _ in raw_objects]
    return GridScene(occ, objects, catalog, cell_size)


def load_scene(path: str | os.PathLike) -> GridScene:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_scene(fh.read())


def save_scene(scene: GridScene, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_scene(scene))


# --------------------------------------------------------------------------
# procedural generation


@dataclass(frozen=True)
class SceneGenSpec:
    width: int = 32
    height: int = 32
    room_count: int = 4
    instances_per_category: tuple[int, int] = (1, 3)
    categories_present: tuple[int, ...] = tuple(range(len(DEFAULT_CATEGORIES)))
    seed: int = 0
    catalog: CategoryCatalog = field(default_factory=CategoryCatalog)
    min_room_side: int = 3
    max_retries: int = 50


def _wall_position(rng: np.random.Generator, lo: int, hi: int, min_side: int) -> int:
    """Wall coordinate in the middle 40% of [lo, hi], leaving min_side on both sides."""
    span = hi - lo + 1
    a = max(lo + min_side, lo + int(round(0.3 * span)))
    b = min(hi - min_side, hi - int(round(0.3 * span)))
    if a > b:
        a, b = lo + min_side, hi - min_side
    return int(rng.integers(a, b + 1))


def _split_rooms(rng: np.random.Generator, width: int, height: int, room_count: int, min_side: int):
    """Binary space partition of the interior into ``room_count`` rectangles.

    Rectangles are ``(x0, y0, x1, y1)`` inclusive; walls separating siblings
    are single cells. Returns (rooms, splits) where each split records the
    wall line and the two sub-rectangles it separates.
    """
    leaves = [(1, 1, width - 2, height - 2)]
    splits = []
    while len(leaves) < room_count:
        candidates = []
        for i, (x0, y0, x1, y1) in enumerate(leaves):
            w, h = x1 - x0 + 1, y1 - y0 + 1
            if w >= 2 * min_side + 1 or h >= 2 * min_side + 1:
                candidates.append((w * h, i))
        if not candidates:
            return None
        candidates.sort(key=lambda c: (-c[0], c[1]))
        _, i = candidates[0]
        x0, y0, x1, y1 = leaves.pop(i)
        w, h = x1 - x0 + 1, y1 - y0 + 1
        vertical = w >= h if (w >= 2 * min_side + 1 and h >= 2 * min_side + 1) else w >= 2 * min_side + 1
        if vertical:
            wall = _wall_position(rng, x0, x1, min_side)
            a, b = (x0, y0, wall - 1, y1), (wall + 1, y0, x1, y1)
        else:
            wall = _wall_position(rng, y0, y1, min_side)
            a, b = (x0, y0, x1, wall - 1), (x0, wall + 1, x1, y1)
        splits.append((vertical, wall, (x0, y0, x1, y1)))
        leaves.extend([a, b])
    return leaves, splits


def _free_connected(occ: np.ndarray) -> bool:
    free = ~occ
    ys, xs = np.nonzero(free)
    if len(xs) == 0:
        return False
    h, w = occ.shape
    seen = np.zeros_like(free)
    q = deque([(int(xs[0]), int(ys[0]))])
    seen[ys[0], xs[0]] = True
    count = 1
    while q:
        x, y = q.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and free[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                count += 1
                q.append((nx, ny))
    return count == int(free.sum())


def _try_generate(spec: SceneGenSpec, rng: np.random.Generator) -> GridScene | None:
    w, h = spec.width, spec.height
    split = _split_rooms(rng, w, h, spec.room_count, spec.min_room_side)
    if split is None:
        return None
    rooms, splits = split
    occ = np.ones((h, w), dtype=bool)
    for x0, y0, x1, y1 in rooms:
        occ[y0:y1 + 1, x0:x1 + 1] = False
    door_cells: set[Cell] = set()
    # carve one door per split; the wall cell must have free cells on both sides
    for vertical, wall, (x0, y0, x1, y1) in splits:
        if vertical:
            options = [y for y in range(y0, y1 + 1) if not occ[y, wall - 1] and not occ[y, wall + 1]]
        else:
            options = [x for x in range(x0, x1 + 1) if not occ[wall - 1, x] and not occ[wall + 1, x]]
        if not options:
            return None
        pos = options[int(rng.integers(len(options)))]
        width = 2 if rng.random() < 0.5 else 1
        for off in range(width):
            p = pos + off
            if vertical and p <= y1 and not occ[p, wall - 1] and not occ[p, wall + 1]:
                occ[p, wall] = False
                door_cells.add((wall, p))
            elif not vertical and p <= x1 and not occ[wall - 1, p] and not occ[wall + 1, p]:
                occ[wall, p] = False
                door_cells.add((p, wall))
    if not _free_connected(occ):
        return None

    room_cells = [
        (x, y)
        for x0, y0, x1, y1 in rooms
        for y in range(y0, y1 + 1)
        for x in range(x0, x1 + 1)
        if (x, y) not in door_cells
    ]
    lo, hi = spec.instances_per_category
    objects: list[tuple[int, Cell]] = []
    used: set[Cell] = set()
    for cid in spec.categories_present:
        n = int(rng.integers(max(lo, 1), hi + 1))
        for _ in range(n):
            available = len(room_cells) - len(used)
            if available <= 0:
                return None
            while True:
                cell = room_cells[int(rng.integers(len(room_cells)))]
                if cell not in used:
                    break
            used.add(cell)
            objects.append((cid, cell))
    return GridScene(occ, objects, spec.catalog, CELL_SIZE)


def generate_scene(spec: SceneGenSpec) -> GridScene:
    """Rectangular rooms joined by door gaps, objects uniform on room cells.

    Deterministic in ``spec`` (including its seed).
    """
    lo, hi = spec.instances_per_category
    if lo < 0 or hi < lo:
        raise GenerationError(f"invalid instance range {spec.instances_per_category}")
    if spec.categories_present and hi < 1:
        raise GenerationError("categories_present is nonempty but at most 0 instances per category allowed")
    for cid in spec.categories_present:
        if not 0 <= cid < len(spec.catalog):
            raise GenerationError(f"category id {cid} not in catalog")
    if spec.width < 4 or spec.height < 4 or spec.room_count < 1:
        raise GenerationError("scene must be at least 4x4 with at least one room")
    # each room needs min_side cells plus one wall per split
    side = spec.min_room_side
    if spec.room_count * (side * side) > (spec.width - 2) * (spec.height - 2):
        raise GenerationError(f"{spec.room_count} rooms do not fit in {spec.width}x{spec.height}")

    rng = np.random.default_rng(spec.seed)
    for _ in range(spec.max_retries):
        scene = _try_generate(spec, rng)
        if scene is not None:
            return scene
    raise GenerationError(f"scene generation failed after {spec.max_retries} attempts")
