"""``smdownscale`` command line.

Exit codes: 0 success, 2 configuration error, 3 data or availability
error, 4 partial run (some evaluation days failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AvailabilityError, ConfigError, DataError, DimensionError, SchemaError, StateError
from .pipeline import (
    ScenarioConfig,
    aggregate_reports,
    gap_experiment,
    lag_sensitivity_sweep,
    lambda_sweep_run,
    load_config_scene,
    run_scenario,
    select_analog_days,
    treecount_sweep,
    write_csv,
    write_manifest,
)
from .synthscene import SceneConfig, build_scene, save_scene

log = logging.getLogger("smdownscale")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 2, 3, 4


def _int_list(text: str) -> list[int]:
    """``"1,3,7"`` or ``"1-14"`` (inclusive) or a mix of both."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part[1:]:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like '1,3,7' or '1-14', got {text!r}")
    return out


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _threads(n: int) -> int:
    return (os.cpu_count() or 1) if n == 0 else n


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (scene seed for 'synth')")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for tree fitting (0 = one per CPU)")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)


def _scenario_args(p: argparse.ArgumentParser, default_scenario: Optional[str] = None) -> None:
    p.add_argument("--scenario", type=str.lower, choices=["brt750", "brt30", "brtst"], default=default_scenario)
    p.add_argument("--scene", help="scene manifest.json or scene-config JSON (default: built from defaults)")
    p.add_argument("-K", "--trees", dest="K", type=int, help="trees per bag")
    p.add_argument("--lambda", dest="lam", type=float, help="pruning budget parameter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smdownscale", description="Downscale coarse soil moisture with bagged regression trees.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a surrogate scene and write it as TDR-CSV")
    _common(p)

    p = sub.add_parser("run", help="downscale the evaluation days of a scenario")
    _common(p)
    _scenario_args(p)
    p.add_argument("--days", help="'all', 'analogs', or a list like '400,403' / '370-400'")
    p.add_argument("--stride", type=int, help="evaluate every n-th day")
    p.add_argument("--reuse-model-days", type=int, help="retrain only every n evaluation days")
    p.add_argument("--per-lc", action="store_true", default=None, help="one bag per land-cover class")
    p.add_argument("--weighted", action="store_true", default=None, help="alpha-weighted instead of plain mean of active trees")
    p.add_argument("--no-rasters", action="store_true", help="skip per-day raster output")

    p = sub.add_parser("sweep-lag", help="error against lag-window length")
    _common(p)
    _scenario_args(p, "brtst")
    p.add_argument("--variable", type=str.upper, choices=["LST", "LAI", "PPT", "ALL"], default="PPT")
    p.add_argument("--lags", type=_int_list, default=list(range(1, 15)))
    p.add_argument("--days", help="evaluation days (default: all available)")
    p.add_argument("--stride", type=int, help="evaluate every n-th day")

    p = sub.add_parser("sweep-trees", help="10-fold CV error against the number of trees")
    _common(p)
    _scenario_args(p, "brtst")
    p.add_argument("--day", type=int, help="training day (default: the mixed-land-cover analog day)")
    p.add_argument("--k-grid", type=_int_list, default=[1, 5, 10, 25, 50, 75])
    p.add_argument("--folds", type=int, default=10)

    p = sub.add_parser("sweep-lambda", help="active trees and re-substitution error against lambda")
    _common(p)
    _scenario_args(p, "brtst")
    p.add_argument("--day", type=int, help="training day (default: the mixed-land-cover analog day)")
    p.add_argument("--lambdas", type=_float_list, default=[float(v) for v in np.logspace(-3, 1, 17)])

    p = sub.add_parser("gaps", help="error against consecutive days of withheld LST")
    _common(p)
    _scenario_args(p, "brtst")
    p.add_argument("--day", type=int, help="evaluation day (default: the mixed-land-cover analog day)")
    p.add_argument("--max-gaps", type=int, default=7)

    p = sub.add_parser("report", help="collect summary and strata tables from run directories")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--out", required=True, help="output CSV file")
    return parser


def _days_arg(text: Optional[str], scene_getter):
    if text is None:
        return None
    if text in ("all", "all-available"):
        return "all-available"
    if text == "analogs":
        picks = select_analog_days(scene_getter())
        return tuple(sorted({d for d in picks.values() if d is not None}))
    try:
        return tuple(_int_list(text))
    except argparse.ArgumentTypeError as exc:
        raise ConfigError(str(exc))


def scenario_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_json(args.config) if args.config else ScenarioConfig()
    changes = {}
    if getattr(args, "scenario", None):
        changes["scenario"] = args.scenario
    if getattr(args, "scene", None):
        if not os.path.exists(args.scene):
            raise ConfigError(f"scene path {args.scene} does not exist")
        changes["scene_path"] = args.scene
        changes["scene_config"] = None
    if args.seed is not None:
        changes["master_seed"] = args.seed
    for name in ("K", "lam"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    if getattr(args, "stride", None) is not None:
        changes["day_stride"] = args.stride
    if getattr(args, "reuse_model_days", None) is not None:
        changes["reuse_model_days"] = args.reuse_model_days
    if getattr(args, "per_lc", None):
        changes["per_lc"] = True
    if getattr(args, "weighted", None):
        changes["weighted"] = True
    if getattr(args, "no_rasters", False):
        changes["write_rasters"] = False
    changes["out_dir"] = args.out
    cfg = replace(cfg, **changes)
    days = _days_arg(getattr(args, "days", None), lambda: load_config_scene(cfg))
    if days is not None:
        cfg = replace(cfg, days=days)
    return cfg


def _default_day(cfg: ScenarioConfig, day: Optional[int]) -> int:
    if day is not None:
        return day
    picked = select_analog_days(load_config_scene(cfg))["dual_crop"]
    if picked is None:
        raise AvailabilityError("no mixed-land-cover day in the scene; pass --day")
    return picked


def cmd_synth(args) -> int:
    cfg = SceneConfig.from_json(args.config) if args.config else SceneConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    scene = build_scene(cfg)
    path = save_scene(scene, args.out)
    print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = scenario_config(args)
    threads = _threads(args.threads)

    def progress(i, n, t):
        log.info("[%d/%d] day %d", i, n, t)

    result = run_scenario(cfg, threads=threads, progress=progress)
    rep = result.report
    print(f"{rep.scenario}: {rep.n_days}/{rep.requested_days} days, time-averaged RMSE {rep.time_avg_rmse:.4f} m3/m3")
    if rep.partial:
        log.warning("%d day(s) failed, see failures.csv", len(rep.failures))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_sweep_lag(args) -> int:
    cfg = scenario_config(args)
    rows = lag_sensitivity_sweep(cfg, args.variable, args.lags, threads=_threads(args.threads))
    out = Path(args.out)
    write_csv(out / f"lag_sweep_{args.variable.lower()}.csv", ["lag", "mean_error", "sd"], rows)
    write_manifest(out, "sweep-lag", cfg, load_config_scene(cfg), {"variable": args.variable, "lags": list(args.lags)})
    return EXIT_OK


def cmd_sweep_trees(args) -> int:
    cfg = scenario_config(args)
    day = _default_day(cfg, args.day)
    rows = treecount_sweep(cfg, args.k_grid, day, args.folds, threads=_threads(args.threads))
    out = Path(args.out)
    write_csv(out / "treecount_cv.csv", ["K", "cv_rmse"], rows)
    write_manifest(out, "sweep-trees", cfg, load_config_scene(cfg), {"day": day, "folds": args.folds})
    return EXIT_OK


def cmd_sweep_lambda(args) -> int:
    cfg = scenario_config(args)
    day = _default_day(cfg, args.day)
    rows = lambda_sweep_run(cfg, args.lambdas, day, threads=_threads(args.threads))
    out = Path(args.out)
    write_csv(out / "lambda_sweep.csv", ["lambda", "beta", "n_active", "resub_error"], rows)
    write_manifest(out, "sweep-lambda", cfg, load_config_scene(cfg), {"day": day})
    return EXIT_OK


def cmd_gaps(args) -> int:
    cfg = scenario_config(args)
    out = Path(args.out)
    day, points = gap_experiment(cfg, args.max_gaps, args.day, threads=_threads(args.threads), out_dir=out)
    write_csv(out / "gaps.csv", ["gaps", "mean_error", "rmse", "frac_error_gt_0.04"], ((p.gaps, p.mean_error, p.rmse, p.frac_over) for p in points))
    write_manifest(out, "gaps", cfg, load_config_scene(cfg), {"day": day, "max_gaps": args.max_gaps})
    return EXIT_OK


def cmd_report(args) -> int:
    rows = aggregate_reports(args.runs)
    write_csv(args.out, ["run", "scenario", "metric", "value"], rows)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "run": cmd_run,
    "sweep-lag": cmd_sweep_lag,
    "sweep-trees": cmd_sweep_trees,
    "sweep-lambda": cmd_sweep_lambda,
    "gaps": cmd_gaps,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, AvailabilityError, DimensionError, SchemaError, StateError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
