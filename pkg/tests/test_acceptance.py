"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import filecmp
import time

import numpy as np
import pytest

from oracles import brute_force_split, grid_lasso, lasso_objective
from smdownscale.carttree import FitParams, best_split
from smdownscale.ensemble import fit_bagged, kkt_residual, lasso_path, nn_lasso, predict_bagged, select_trees, beta_max
from smdownscale.featurize import FeatureSchema, TrainingSelection, assemble_inference, assemble_training
from smdownscale.pipeline import (
    ScenarioConfig,
    downscale_day,
    fit_day_model,
    gap_experiment,
    run_scenario,
    select_analog_days,
    training_set,
    treecount_sweep,
)
from smdownscale.rastergrid import Variable
from smdownscale.seeding import derive_seed

from conftest import SMALL_SCENE


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return report


@pytest.fixture(scope="module")
def dual_day(default_scene):
    return select_analog_days(default_scene)["dual_crop"]


def test_1_split_oracle(verdict):
    rng = np.random.default_rng(1)
    params = FitParams(0.01, 5)
    cases, elapsed, bad = [], 0.0, []
    for i in range(200):
        n, d = int(rng.integers(2, 201)), int(rng.integers(1, 7))
        X = rng.integers(0, 8, size=(n, d)).astype(float) if i % 3 == 0 else rng.normal(size=(n, d))
        y = X @ rng.normal(size=d) + rng.normal(size=n)
        t0 = time.perf_counter()
        got = best_split(X, y, np.arange(n), params)
        elapsed += time.perf_counter() - t0
        cases.append((X, y, got))
    for i, (X, y, got) in enumerate(cases):
        want = brute_force_split(X, y, 5, 0.01)
        if (got is None) != (want is None) or (got is not None and (got[:2] != want[:2] or abs(got[2] - want[2]) > 1e-10)):
            bad.append(i)
    verdict(1, not bad and elapsed < 10, f"{200 - len(bad)}/200 match brute force, best_split time {elapsed:.2f} s")


def test_2_lasso_oracle(verdict):
    rng = np.random.default_rng(2)
    worst_gap = worst_kkt = elapsed = 0.0
    for _ in range(50):
        K, N = int(rng.integers(1, 5)), int(rng.integers(5, 31))
        P = rng.uniform(size=(N, K))
        y = rng.uniform(size=N)
        beta = float(rng.uniform(0.0, 1.2)) * beta_max(P, y)
        t0 = time.perf_counter()
        res = nn_lasso(P, y, beta)
        elapsed += time.perf_counter() - t0
        _, oracle = grid_lasso(P, y, beta)
        assert abs(res.objective_value - lasso_objective(P, y, beta, res.alpha)) <= 1e-12
        worst_gap = max(worst_gap, abs(res.objective_value - oracle))
        worst_kkt = max(worst_kkt, kkt_residual(P, y, res))
    ok = worst_gap <= 1e-6 and worst_kkt <= 1e-6 and elapsed < 30
    verdict(2, ok, f"max |objective - oracle| {worst_gap:.2e}, max KKT residual {worst_kkt:.2e}, solver time {elapsed:.2f} s")


def test_3_bagging_contract(verdict):
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(400, 4))
    y = np.sin(4 * X[:, 0]) + X[:, 1] * X[:, 2] + rng.normal(scale=0.1, size=400)
    e1 = select_trees(fit_bagged(X, y, 40, master_seed=9, threads=1), X, y, 0.1)
    e4 = select_trees(fit_bagged(X, y, 40, master_seed=9, threads=4), X, y, 0.1)
    Q = rng.uniform(-0.2, 1.2, size=(1000, 4))
    got = predict_bagged(e1, Q)
    want = e1.tree_predictions(Q, e1.active).mean(axis=1)
    err = float(np.abs(got - want).max())
    same = e1.to_json() == e4.to_json() and np.array_equal(got, predict_bagged(e4, Q))
    verdict(3, err <= 1e-12 and same and 0 < len(e1.active) < 40, f"max |bag - mean of {len(e1.active)} active trees| {err:.1e}, 1 vs 4 threads identical: {same}")


@pytest.mark.slow
def test_4_scenario_ordering(verdict, full_runs):
    r = {k: v.report for k, v in full_runs.items()}
    rows = {s: [r[k].stratum_rmse(s) for k in ("BRT750", "BRTst", "BRT30")] for s in ("corn", "cotton")}
    order = all(a < b < c for a, b, c in rows.values())
    regional750 = r["BRT750"].time_avg_rmse
    regional_st = r["BRTst"].time_avg_rmse
    ok = order and regional750 < 0.01 and regional_st < 0.03
    detail = ", ".join(f"{s} 750/st/30 = " + "/".join(f"{v:.4f}" for v in vals) for s, vals in rows.items())
    verdict(4, ok, f"{detail}; regional BRT750 {regional750:.4f}, BRTst {regional_st:.4f}")


@pytest.mark.slow
def test_5_gap_degradation(verdict, default_scene, dual_day):
    cfg = ScenarioConfig()
    day, points = gap_experiment(cfg, 7, scene=default_scene)
    err = [p.mean_error for p in points]
    steps = np.diff(err)
    within = [1.0 - p.frac_over for p in points[:3]]
    ok = day == dual_day and np.all(steps >= -0.002) and err[1] - err[0] <= 0.015 and min(within) >= 0.85
    curve = " ".join(f"{e:.4f}" for e in err)
    verdict(5, ok, f"day {day}, mean |error| g=0..7: {curve}; within 0.04 at g<=2: {min(within):.3f}")


@pytest.mark.slow
def test_6_treecount_plateau(verdict, default_scene, dual_day):
    rows = dict(treecount_sweep(ScenarioConfig(), [50, 75], dual_day, folds=10, scene=default_scene))
    gain = rows[50] - rows[75]
    verdict(6, gain <= 0.05, f"day {dual_day}, CV RMSE K=50 {rows[50]:.4f}, K=75 {rows[75]:.4f}, improvement {gain:.4f}")


def _dedupe(path):
    out = []
    for res in path:
        if not out or res.active != out[-1].active:
            out.append(res)
    return out


@pytest.mark.slow
def test_7_lambda_path(verdict, default_scene, dual_day):
    cfg = ScenarioConfig()
    X, y = training_set(default_scene, cfg, dual_day)
    e = fit_bagged(X, y, cfg.K, cfg.fit_params, derive_seed(cfg.master_seed, "day", dual_day))
    P = e.tree_predictions(X)
    bmax = beta_max(P, y)
    path = lasso_path(e, X, y, bmax * np.logspace(-6, 0, 61))
    n = [r.n_active for r in path]
    err = [r.resubstitution_error for r in path]
    d = _dedupe(path)
    dn = [r.n_active for r in d]
    de = [r.resubstitution_error for r in d]
    raw_ok = all(a >= b for a, b in zip(n, n[1:])) and all(a <= b + 1e-15 for a, b in zip(err, err[1:]))
    strict_ok = all(a > b for a, b in zip(dn, dn[1:])) and all(a < b for a, b in zip(de, de[1:]))
    rises = [(round(path[i + 1].beta / bmax, 6), n[i], n[i + 1]) for i in range(len(n) - 1) if n[i + 1] > n[i]]
    verdict(7, raw_ok and strict_ok, f"n_active along the sweep {n}; increases (beta/beta_max, before, after) {rises[:5]}")


def _poison(scene, t):
    sentinel = 9999.5
    future = slice(t, None)  # array index t is day t + 1
    truth = {v: a.copy() for v, a in scene.truth.items()}
    observed = {v: a.copy() for v, a in scene.observed.items()}
    for d in (truth, observed):
        for v, a in d.items():
            a[future] = 7 if v is Variable.LC else sentinel
    coarse = scene.coarse_sm.copy()
    coarse[future] = sentinel
    coarse_truth = scene.coarse_sm_truth.copy()
    coarse_truth[future] = sentinel
    return scene.with_arrays(truth=truth, observed=observed, coarse_sm=coarse, coarse_sm_truth=coarse_truth), sentinel


def test_8_no_future_leakage(verdict, small_scene):
    t = 301
    poisoned, sentinel = _poison(small_scene, t)
    checked, leaks, clean_match = 0, [], True
    cases = [("BRT30", FeatureSchema.spatial(lc)) for lc in (True, False)]
    cases += [("BRTst", FeatureSchema(D1=a, D2=b, D3=c)) for a, b, c in ((7, 7, 7), (0, 0, 0), (14, 3, 10))]
    for scenario, schema in cases:
        sel = TrainingSelection.for_scenario(small_scene, scenario)
        fm, y = assemble_training(poisoned, sel, schema, t)
        inf = assemble_inference(poisoned, schema, t)
        for name, block in (("training", fm.values), ("targets", y), ("inference", inf.values)):
            checked += block.size
            # real land-cover codes are 0..2 and no continuous feature is exactly the sentinel
            if np.isin(block, [sentinel, 7.0]).any():
                leaks.append((scenario, schema.D1, name))
        ref_fm, ref_y = assemble_training(small_scene, sel, schema, t)
        clean_match &= np.array_equal(ref_fm.values, fm.values) and np.array_equal(ref_y, y)
        clean_match &= np.array_equal(assemble_inference(small_scene, schema, t).values, inf.values)
    cfg = ScenarioConfig(scene_config=dict(SMALL_SCENE), K=10)
    a = downscale_day(poisoned, cfg, t, fit_day_model(poisoned, cfg, t))
    b = downscale_day(small_scene, cfg, t, fit_day_model(small_scene, cfg, t))
    clean_match &= np.array_equal(a, b)
    verdict(8, not leaks and clean_match, f"{checked} assembled values scanned, leaks {leaks}, identical to unpoisoned: {clean_match}")


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_9_determinism(verdict, tmp_path, small_scene):
    cfg = ScenarioConfig(scenario="BRTst", scene_config=dict(SMALL_SCENE), day_stride=4)
    run_scenario(cfg, scene=small_scene, threads=1, out_dir=tmp_path / "a")
    run_scenario(cfg, scene=small_scene, threads=1, out_dir=tmp_path / "b")
    run_scenario(cfg, scene=small_scene, threads=3, out_dir=tmp_path / "c")
    n_files = sum(1 for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = _same_tree(tmp_path / "a", tmp_path / "b")
    same_threads = _same_tree(tmp_path / "a", tmp_path / "c")
    verdict(9, same and same_threads and n_files > 10, f"{n_files} files; repeat identical: {same}, 1 vs 3 threads identical: {same_threads}")
