from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as csgraph_dijkstra

from conftest import AB_CATALOG, corridor, room
from multion.errors import BudgetExceededError, UnreachableError
from multion.geodesy import (
    FieldCache,
    MultiGoalQuery,
    brute_force_multigoal,
    distance_field_dijkstra,
    distance_field_fmm,
    dtg,
    extract_path,
    fmm_residual,
    nearest_instance,
    optimal_multigoal_length,
    path_cost,
)
from multion.scene import CategoryCatalog, GridScene, SceneGenSpec, generate_scene

R2 = math.sqrt(2.0)


def graph_oracle(free: np.ndarray, source):
    """Independent 8-connected grid graph solved by scipy."""
    H, W = free.shape
    rows, cols, w = [], [], []
    for y in range(H):
        for x in range(W):
            if not free[y, x]:
                continue
            for dx, dy in [(1, 0), (0, 1), (1, 1), (-1, 1)]:
                nx, ny = x + dx, y + dy
                if not (0 <= nx < W and 0 <= ny < H) or not free[ny, nx]:
                    continue
                if dx and dy and not (free[y, nx] and free[ny, x]):
                    continue
                rows.append(y * W + x)
                cols.append(ny * W + nx)
                w.append(0.25 * (R2 if dx and dy else 1.0))
    g = coo_matrix((w, (rows, cols)), shape=(H * W, H * W)).tocsr()
    d = csgraph_dijkstra(g, directed=False, indices=source[1] * W + source[0])
    d = d.reshape(H, W)
    d[~free] = np.inf
    return d


def open_grid(w, h):
    return GridScene(np.zeros((h, w), dtype=bool), [])


def test_open_3x3_corner_to_corner():
    # smallest legal scene is 4 wide; block the extra column
    occ = np.zeros((3, 4), dtype=bool)
    occ[:, 3] = True
    s = GridScene(occ, [])
    d = distance_field_dijkstra(s, [(0, 0)])
    assert d.at((2, 2)) == pytest.approx(2 * 0.25 * R2, abs=1e-12)
    assert d.at((0, 0)) == 0.0
    f = distance_field_fmm(s, [(0, 0)])
    assert 0.70710 <= f.at((2, 2)) <= 0.70712
    assert math.hypot(0.5, 0.5) <= f.at((2, 2)) <= d.at((2, 2)) + 1e-12


def test_sealed_cell_is_unreachable():
    s = room(
        """
        ......
        .###..
        .#.#..
        .###..
        """
    )
    d = distance_field_dijkstra(s, [(0, 0)])
    assert d.at((2, 2)) == math.inf and not d.reachable((2, 2))
    assert distance_field_fmm(s, [(0, 0)]).at((2, 2)) == math.inf
    assert d.at((2, 1)) == math.inf  # obstacle


def test_no_corner_cutting():
    s = room(
        """
        .#..
        #...
        ....
        ....
        """
    )
    d = distance_field_dijkstra(s, [(0, 0)])
    assert d.at((1, 1)) == math.inf  # only reachable diagonally through a corner


@pytest.mark.parametrize("n", [1, 5, 20])
def test_corridor_fmm_is_exact(n):
    s = corridor(21, {}, AB_CATALOG)
    f = distance_field_fmm(s, [(0, 0)])
    assert abs(f.at((n, 0)) - 0.25 * n) <= 1e-9


def test_fmm_residual_is_tiny(small_scenes):
    s = small_scenes[0]
    src = s.objects[0][1]
    f = distance_field_fmm(s, [src])
    assert fmm_residual(f, s.free_mask) < 1e-9


def test_dijkstra_matches_graph_oracle(small_scenes):
    for s in small_scenes:
        src = s.objects[0][1]
        ours = distance_field_dijkstra(s, [src]).values
        ref = graph_oracle(s.free_mask, src)
        assert np.allclose(np.where(np.isfinite(ref), ref, -1), np.where(np.isfinite(ours), ours, -1), atol=1e-12)


def test_sandwich_on_random_pairs():
    rng = np.random.default_rng(0)
    checked = 0
    for seed in range(20):
        s = generate_scene(SceneGenSpec(width=24, height=24, room_count=4, seed=seed))
        free = s.free_cells()
        for _ in range(5):
            src = free[rng.integers(len(free))]
            d = distance_field_dijkstra(s, [src]).values
            f = distance_field_fmm(s, [src]).values
            ys, xs = np.nonzero(s.free_mask)
            eu = 0.25 * np.hypot(xs - src[0], ys - src[1])
            assert np.all(eu <= f[ys, xs] + 1e-9)
            assert np.all(f[ys, xs] <= d[ys, xs] + 1e-6)
            checked += len(xs)
    assert checked > 10_000


def test_dtg_values(corridor21):
    assert dtg(corridor21, (10, 0), 0) == pytest.approx(2.5)
    assert dtg(corridor21, (0, 0), 0) == 0.0
    two = corridor(21, {"A": 0}, AB_CATALOG)
    objs = list(two.objects) + [(0, (14, 0))]
    s = GridScene(two.occupancy, objs, AB_CATALOG)
    assert dtg(s, (10, 0), 0) == pytest.approx(1.0)
    assert nearest_instance(s, (10, 0), 0) == ((14, 0), pytest.approx(1.0))
    with pytest.raises(UnreachableError):
        nearest_instance(corridor(21, {"A": 0}, AB_CATALOG), (3, 0), 1)


def test_field_cache_builds_once_and_evicts():
    cache = FieldCache(max_scenes=2)
    scenes = [corridor(21, {"A": i}, AB_CATALOG) for i in range(3)]
    f1 = cache.category_field(scenes[0], 0)
    assert cache.category_field(scenes[0], 0) is f1
    cache.category_field(scenes[1], 0)
    cache.category_field(scenes[2], 0)
    assert cache.category_field(scenes[0], 0) is not f1
    assert np.array_equal(cache.category_field(scenes[0], 0).values, f1.values)


def test_extract_path_properties():
    s = room(
        """
        ........
        ######..
        ........
        ........
        """
    )
    d = distance_field_dijkstra(s, [(0, 3)])
    assert extract_path(d, (0, 3)) == [(0, 3)]
    path = extract_path(d, (0, 0))
    vals = [d.at(c) for c in path]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        assert max(abs(x1 - x0), abs(y1 - y0)) == 1
    assert abs(path_cost(path) - d.at((0, 0))) <= 0.25 * R2
    c = corridor(21, {}, AB_CATALOG)
    assert extract_path(distance_field_dijkstra(c, [(0, 0)]), (5, 0)) == [(x, 0) for x in range(5, -1, -1)]
    with pytest.raises(UnreachableError):
        extract_path(distance_field_dijkstra(s, [(0, 3)]), (0, 1))


def test_corridor_g_is_four_and_a_half(corridor21):
    q = MultiGoalQuery.for_categories(corridor21, (10, 0), (0, 1), 1.0)
    assert optimal_multigoal_length(q) == pytest.approx(4.5)
    assert brute_force_multigoal(q) == pytest.approx(4.5)


def test_g_zero_when_already_satisfied(corridor21):
    q = MultiGoalQuery.for_categories(corridor21, (1, 0), (0,), 1.0)
    assert optimal_multigoal_length(q) == 0.0


def test_single_category_g_is_radius_adjusted_dtg(corridor21):
    q = MultiGoalQuery.for_categories(corridor21, (10, 0), (0,), 1.0)
    assert optimal_multigoal_length(q) == pytest.approx(dtg(corridor21, (10, 0), 0) - 1.0)
    assert brute_force_multigoal(q) == pytest.approx(1.5)


def test_cross_shaped_symmetric_targets_tie():
    occ = np.ones((9, 9), dtype=bool)
    occ[4, :] = False
    occ[:, 4] = False
    cat = CategoryCatalog(("A", "B", "C", "D"))
    s = GridScene(occ, [(0, (0, 4)), (1, (8, 4)), (2, (4, 0)), (3, (4, 8))], cat)
    q = MultiGoalQuery.for_categories(s, (4, 4), (0, 1), 0.25)
    # 0.75 m up one arm to within the radius, then 6 cells across to the other end
    assert optimal_multigoal_length(q) == pytest.approx(0.75 + 1.5)
    assert brute_force_multigoal(q) == pytest.approx(2.25)
    # perpendicular arms: either order costs the same
    q2 = MultiGoalQuery.for_categories(s, (4, 4), (0, 2), 0.25)
    assert optimal_multigoal_length(q2) == pytest.approx(2.25) == brute_force_multigoal(q2)


def test_unreachable_category_errors():
    s = room(
        """
        ......
        .###..
        .#.#..
        .###..
        """,
        {"tv": (2, 2)},
    )
    with pytest.raises(UnreachableError):
        optimal_multigoal_length(MultiGoalQuery.for_categories(s, (0, 0), (s.catalog.index("tv"),)))


def test_brute_force_budget():
    s = generate_scene(SceneGenSpec(width=12, height=12, room_count=2, seed=1))
    q = MultiGoalQuery.for_categories(s, s.free_cells()[0], s.categories_present()[:3], 1.0)
    with pytest.raises(BudgetExceededError):
        brute_force_multigoal(q, max_work=10)


def _random_query(seed: int):
    rng = np.random.default_rng(seed)
    w, h = int(rng.integers(9, 13)), int(rng.integers(9, 13))
    s = generate_scene(SceneGenSpec(width=w, height=h, room_count=int(rng.integers(1, 3)), instances_per_category=(1, 2), seed=seed))
    cats = s.categories_present()
    k = int(rng.integers(1, min(3, len(cats)) + 1))
    targets = [int(c) for c in rng.choice(cats, k, replace=False)]
    free = s.free_cells()
    return MultiGoalQuery.for_categories(s, free[rng.integers(len(free))], targets, float(rng.choice([0.25, 0.5, 1.0])))


def test_g_matches_brute_force_on_random_scenes():
    for seed in range(40):
        q = _random_query(seed)
        assert abs(optimal_multigoal_length(q) - brute_force_multigoal(q)) <= 1e-6


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_g_lower_bounded_by_every_single_leg(seed):
    q = _random_query(seed)
    g = optimal_multigoal_length(q)
    for gs in q.goal_sets:
        single = MultiGoalQuery(q.scene, q.start_cell, (gs,), q.radius)
        assert optimal_multigoal_length(single) <= g + 1e-9


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), block=st.integers(0, 10**6))
def test_adding_an_obstacle_never_decreases_distance(seed, block):
    s = generate_scene(SceneGenSpec(width=12, height=12, room_count=2, seed=seed))
    src = s.objects[0][1]
    free = s.free_mask.copy()
    cells = [c for c in s.free_cells() if c != src]
    bx, by = cells[block % len(cells)]
    blocked = free.copy()
    blocked[by, bx] = False
    for solver in (distance_field_dijkstra, distance_field_fmm):
        a = solver(free, [src]).values
        b = solver(blocked, [src]).values
        assert np.all(b[blocked] >= a[blocked] - 1e-12)


def test_to_csv_dump():
    f = distance_field_dijkstra(corridor(4, {}, AB_CATALOG), [(0, 0)])
    assert f.to_csv() == "0.0,0.25,0.5,0.75\n"
