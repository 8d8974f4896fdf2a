from __future__ import annotations

import numpy as np
import pytest

from multion.scene import CategoryCatalog, GridScene, SceneGenSpec, generate_scene


def corridor(length: int, objects: dict[str, int], catalog: CategoryCatalog | None = None) -> GridScene:
    """A one-cell-high corridor with objects at the given x positions."""
    cat = catalog or CategoryCatalog()
    occ = np.zeros((1, length), dtype=bool)
    return GridScene(occ, [(cat.index(label), (x, 0)) for label, x in objects.items()], cat)


def room(text: str, objects: dict[str, tuple[int, int]] | None = None) -> GridScene:
    rows = [r for r in text.strip().splitlines()]
    occ = np.array([[c == "#" for c in r.strip()] for r in rows], dtype=bool)
    cat = CategoryCatalog()
    return GridScene(occ, [(cat.index(k), v) for k, v in (objects or {}).items()], cat)


AB_CATALOG = CategoryCatalog(names=("A", "B"))


@pytest.fixture
def corridor21():
    return corridor(21, {"A": 0, "B": 20}, AB_CATALOG)


@pytest.fixture(scope="session")
def small_scenes():
    return [generate_scene(SceneGenSpec(width=16, height=16, room_count=4, seed=s)) for s in range(6)]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
