"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(see ``pytest_terminal_summary`` in conftest.py) and then asserts.
"""

from __future__ import annotations

import math
import time

import numpy as np

from learn_helpers import TINY, gradcheck_all, tiny_batch
from multion.agents import Agent, RandomAgent
from multion.cli import main as cli_main
from multion.env import Action, EpisodeSpec, MultiONEnv, Pose
from multion.geodesy import MultiGoalQuery, brute_force_multigoal, distance_field_dijkstra, distance_field_fmm, optimal_multigoal_length
from multion.harness import RunConfig, make_dataset, run_ablation, run_comparison, train_from_config
from multion.learn.networks import checksum
from multion.learn.replay import Batch
from multion.learn.td3 import Learner, TrainConfig
from multion.learn.train import learned_agent
from multion.reward import step_reward
from multion.rollout import run_episode
from multion.scene import SceneGenSpec, generate_scene
from reward_fixtures import STEP_REWARD_CASES

ACCEPTANCE: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


class Spinner(Agent):
    """Turns in place forever."""

    kind = "spinner"

    def act(self, state, obs) -> Action:
        return Action.TURN_LEFT


def test_c01_reward_fixtures():
    t0 = time.perf_counter()
    worst = max(abs(step_reward(p, c, n, cfg) - e) for _, p, c, n, cfg, e in STEP_REWARD_CASES)
    dt = time.perf_counter() - t0
    ok = len(STEP_REWARD_CASES) >= 12 and worst <= 1e-9 and dt < 1.0
    record(1, ok, f"{len(STEP_REWARD_CASES)} fixtures, max error {worst:.1e}, {dt * 1e3:.1f} ms")


def test_c02_cnr_accounting(corridor21):
    env = MultiONEnv()
    totals = {}
    for T in (1, 25, 600):
        spec = EpisodeSpec(corridor21, Pose.at_cell((10, 0), 90), (0, 1), T, episode_id=f"still{T}")
        res = run_episode(env, Spinner(), spec)
        assert res.timesteps == T and res.path_length == 0.0
        totals[T] = res.total_reward
    ok = all(totals[T] == -0.01 * T for T in totals)
    record(2, ok, "stationary totals " + ", ".join(f"T={T}: {v!r}" for T, v in totals.items()))


def test_c03_subgoal_accounting():
    scenes = [generate_scene(SceneGenSpec(width=16, height=16, room_count=4, seed=s)) for s in range(20)]
    cfg = RunConfig(k=(1, 3), max_steps=200, seed=9)
    ds = make_dataset(cfg, [(f"s{i}", s) for i, s in enumerate(scenes)])
    specs = (ds.specs * 6)[:1000]
    env = MultiONEnv()
    bad, found_total = 0, 0
    for i, spec in enumerate(specs):
        res = run_episode(env, RandomAgent(i), spec)
        found_total += res.found_count
        if res.subgoal_reward != 2.0 * res.found_count or len(set(res.found_order)) != res.found_count:
            bad += 1
    record(3, bad == 0 and len(specs) == 1000, f"1000 random episodes, {found_total} sub-goals, {bad} mismatches")


def test_c04_g_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, n = 0.0, 0
    while n < 120:
        w, h = int(rng.integers(8, 13)), int(rng.integers(8, 13))
        spec = SceneGenSpec(width=w, height=h, room_count=1 if min(w, h) < 9 else int(rng.integers(1, 3)), instances_per_category=(1, 2), seed=int(rng.integers(1 << 30)))
        s = generate_scene(spec)
        cats = s.categories_present()
        k = int(rng.integers(1, min(3, len(cats)) + 1))
        targets = [int(c) for c in rng.choice(cats, k, replace=False)]
        free = s.free_cells()
        q = MultiGoalQuery.for_categories(s, free[rng.integers(len(free))], targets, float(rng.choice([0.25, 0.5, 1.0])))
        worst = max(worst, abs(optimal_multigoal_length(q) - brute_force_multigoal(q)))
        n += 1
    dt = time.perf_counter() - t0
    record(4, worst <= 1e-6 and dt < 60, f"{n} scenes, max |g - brute| = {worst:.1e}, {dt:.1f} s")


def test_c05_solver_sandwich():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    pairs, violations = 0, 0
    seed = 0
    while pairs < 10_000:
        s = generate_scene(SceneGenSpec(width=24, height=24, room_count=4, seed=seed))
        seed += 1
        free = s.free_cells()
        for _ in range(5):
            src = free[rng.integers(len(free))]
            f = distance_field_fmm(s, [src])
            d = distance_field_dijkstra(s, [src])
            for j in rng.integers(len(free), size=100):
                x, y = free[j]
                eu = 0.25 * math.hypot(x - src[0], y - src[1])
                fv, dv = f.at((x, y)), d.at((x, y))
                if not (eu <= fv + 1e-9 and fv <= dv + 1e-6):
                    violations += 1
                pairs += 1
    dt = time.perf_counter() - t0
    record(5, violations == 0 and dt < 60, f"{pairs} pairs, {violations} violations, {dt:.1f} s")


def test_c06_gspl_bounds():
    cfg = RunConfig(scenes=4, episodes_per_scene=15, scene_width=20, scene_height=20, k=(1, 3), max_steps=400, seed=6)
    ds = make_dataset(cfg)
    rep = run_comparison(ds, ["sam-oracle", "psm-oracle", "random"], cfg)
    bad = 0
    for r in rep["records"]:
        m = r.metrics
        if not 0.0 <= m.gspl <= 1.0:
            bad += 1
        if m.success and r.result.path_length < m.g - 1e-9:
            bad += 1
        if not m.success and m.gspl != 0.0:
            bad += 1
    n = len(rep["records"])
    successes = sum(r.metrics.success for r in rep["records"])
    record(6, bad == 0, f"{n} evaluated episodes ({successes} successes), {bad} violations")


def test_c07_gradient_checks():
    t0 = time.perf_counter()
    worst, tensors = 0.0, 0
    for seed in range(5):
        res = gradcheck_all(seed)
        worst = max(worst, max(r.rel_error for r in res))
        tensors += len(res)
    dt = time.perf_counter() - t0
    record(7, worst <= 1e-4 and dt < 300, f"5 seeds x {tensors // 5} tensors, max rel error {worst:.1e}, {dt:.1f} s")


def test_c08_update_isolation():
    rng = np.random.default_rng(8)
    learner = Learner(TINY, TrainConfig(lr=1e-2), seed=8)
    obs, enc, act, y = tiny_batch(TINY, rng, 8)
    batch = Batch(obs, enc, act, y, obs[::-1].copy(), enc, np.zeros(8))
    before = checksum(learner.online.conv_params())
    learner.actor_update(batch, rng)
    after_actor = checksum(learner.online.conv_params())
    learner.critic_update(batch, rng)
    after_critic = checksum(learner.online.conv_params())
    ok = before == after_actor and after_critic != after_actor
    record(8, ok, f"trunk unchanged by actor update: {before == after_actor}, changed by critic update: {after_critic != after_actor}")


def test_c09_oracle_dominance():
    t0 = time.perf_counter()
    cfg = RunConfig(scenes=5, episodes_per_scene=100, k=(3, 3), seed=9)  # default 32x32 floor plans
    ds = make_dataset(cfg)
    rep = run_comparison(ds, ["sam-oracle", "psm-oracle"], cfg)
    by = {"sam-oracle": [], "psm-oracle": []}
    below_g = 0
    for r in rep["records"]:
        by[r.agent].append(r.result.path_length)
        if r.agent == "sam-oracle" and r.result.path_length < r.metrics.g - 1e-9:
            below_g += 1
    sam, psm = np.mean(by["sam-oracle"]), np.mean(by["psm-oracle"])
    reduction = 1.0 - sam / psm
    dt = time.perf_counter() - t0
    ok = len(by["sam-oracle"]) >= 500 and reduction >= 0.10 and below_g == 0 and dt < 600
    record(9, ok, f"{len(by['sam-oracle'])} k=3 episodes, SAM {sam:.2f} m vs PSM {psm:.2f} m ({100 * reduction:.1f}% shorter), {below_g} below g, {dt:.0f} s")


# learning smoke test: fixed seed, recorded in the PASS/FAIL line
LEARN_SEED = 0
LEARN_EPISODES = 1000
LEARN_TRAIN = dict(scenes=100, episodes_per_scene=10, scene_width=16, scene_height=16, k=(2, 2), seed=LEARN_SEED)
LEARN_EVAL = dict(scenes=20, episodes_per_scene=10, scene_width=16, scene_height=16, k=(2, 2), seed=LEARN_SEED + 1000)


def test_c10_learning_smoke(tmp_path):
    t0 = time.perf_counter()
    train_cfg = RunConfig(**LEARN_TRAIN, train={"episodes": LEARN_EPISODES})
    nets = {}
    for variant in ("sam", "msemexp"):
        nets[variant] = train_from_config(train_cfg, variant, tmp_path / variant).learner.online
    eval_cfg = RunConfig(**LEARN_EVAL)
    held_out = make_dataset(eval_cfg)
    agents = {"learned-sam": learned_agent(nets["sam"], "sam"), "learned-msemexp": learned_agent(nets["msemexp"], "msemexp")}
    rep = run_comparison(held_out, ["random", "learned-sam", "learned-msemexp"], eval_cfg, tmp_path / "eval", agent_objects=agents)
    s = {a: rep["summary"][a]["all"]["success_pct"] for a in agents.keys() | {"random"}}
    dt = time.perf_counter() - t0
    ok = s["learned-sam"] >= 2 * s["random"] and s["learned-sam"] >= s["learned-msemexp"] - 5.0 and dt < 4 * 3600
    record(
        10,
        ok,
        f"seed {LEARN_SEED}, {LEARN_EPISODES} training episodes, {len(held_out)} held-out: learned-SAM {s['learned-sam']:.1f}%, "
        f"learned-M-SemExp {s['learned-msemexp']:.1f}%, random {s['random']:.1f}%, {dt / 60:.0f} min",
    )


def test_c11_ablation_monotone():
    parts = []
    ok = True
    for k, grid in ((2, (200, 300, 600)), (3, (300, 500, 1000))):
        cfg = RunConfig(scenes=5, episodes_per_scene=20, scene_width=20, scene_height=20, k=(k, k), seed=11)
        ds = make_dataset(cfg)
        table = run_ablation(ds, "random", grid, cfg)["table"]
        succ = [table[b]["per_k"][str(k)]["success_pct"] for b in grid]
        sub = [table[b]["per_k"][str(k)]["sub_success_pct"] for b in grid]
        ok &= succ == sorted(succ) and sub == sorted(sub) and not table[max(grid)]["rerun_required"]
        parts.append(f"k={k} success {succ} sub {[round(v, 1) for v in sub]}")
    record(11, ok, "; ".join(parts))


def test_c12_cli_determinism(tmp_path):
    argv = ["eval", "--seed", "12", "--set", "scenes=2", "--set", "episodes_per_scene=5", "--set", "scene_width=16", "--set", "scene_height=16",
            "--k", "2-3", "--agent", "sam-oracle", "--agent", "random"]
    outs = []
    for d in ("run1", "run2"):
        assert cli_main(argv + ["--out", str(tmp_path / d)]) == 0
        outs.append(tmp_path / d)
    a, b = outs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "config.txt")
    same = all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    logs = [f for f in files if f.suffix == ".log"]
    ok = same and (a / "report.csv").exists() and len(logs) == 20
    record(12, ok, f"{len(files)} output files incl. report.csv and {len(logs)} trajectory logs byte-identical: {same}")
