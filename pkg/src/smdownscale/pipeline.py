"""Scenario runs, parameter sweeps and downscaling metrics.

A scenario run retrains on each evaluation day: it assembles the
training rows for the scenario, grows a bag of trees, prunes it on the
training rows, predicts every 1 km pixel and scores the result against
the 1 km truth.  A failing day is logged and skipped, and the report
records the coverage.

Randomness is derived from the scenario master seed as
``derive_seed(master, "day", t)`` for the bag fitted on day ``t`` (with
``"lc", code`` appended for per-land-cover bags); the scene carries its
own seed for noise and training-pixel selection.

Output directory layout (all text, deterministic byte for byte)::

    run_manifest.json          config, seeds, package versions
    daily_metrics.csv          one row per evaluated day
    strata.csv                 pooled RMSE per land-cover stratum
    strata_daily.csv           per-day stratum counts and RMSE
    summary.csv                time-averaged figures
    failures.csv               days that could not be evaluated
    pixel_mean_abs_error.csv   time-mean |error| per 1 km pixel
    downscaled/SM_1000m_dNNNN.csv   TDR-CSV downscaled rasters
    errors/err_dNNNN.csv       signed per-pixel error grids
"""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numba
import numpy as np

from . import __version__
from .carttree import FitParams
from .ensemble import DEFAULT_K, DEFAULT_LAMBDA, Ensemble, cross_validate_treecount, fit_bagged, lambda_sweep, predict_bagged, select_trees
from .errors import AvailabilityError, ConfigError, DataError, DimensionError, SchemaError, StateError
from .featurize import (
    DEFAULT_LAG,
    SPATIOTEMPORAL,
    FeatureSchema,
    GapMask,
    TrainingSelection,
    assemble_inference,
    assemble_training,
)
from .rastergrid import BARE, CORN, COTTON, Raster, Variable, block_mean, write_tdr
from .seeding import derive_seed
from .synthscene import DAYS_PER_YEAR, Scene, SceneConfig, build_scene, doy, scene_from_path

log = logging.getLogger(__name__)

SCENARIOS = ("BRT750", "BRT30", "BRTst")
STRATA = ("corn", "cotton", "bare_A", "bare_B", "bare_C")
ERROR_THRESHOLD = 0.04  # m3/m3, "large error" cut-off
COARSE_TOL = 0.06  # 3 x the coarse SM noise SD
POST_HARVEST_DOY = 332

# errors that abort one day but not the run
DAY_ERRORS = (AvailabilityError, DataError, DimensionError, SchemaError, StateError, ValueError, KeyError)


def canonical_scenario(name: str) -> str:
    for s in SCENARIOS:
        if name.lower() == s.lower():
            return s
    raise ConfigError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIOS)}")


# -- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "BRTst"
    scene_path: Optional[str] = None  # scene manifest or scene-config JSON
    scene_config: Optional[dict] = None  # inline scene config, used when scene_path is None
    D1: int = DEFAULT_LAG
    D2: int = DEFAULT_LAG
    D3: int = DEFAULT_LAG
    include_lc: bool = True
    K: int = DEFAULT_K
    lam: float = DEFAULT_LAMBDA
    master_seed: int = 0
    days: Union[str, tuple[int, ...]] = "all-available"
    day_stride: int = 1
    history_days: Optional[int] = None
    reuse_model_days: int = 1
    per_lc: bool = False
    weighted: bool = False
    insitu_noise: float = 0.0
    min_error_decrease: float = 0.01
    min_leaf_count: int = 5
    write_rasters: bool = True
    out_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "scenario", canonical_scenario(self.scenario))
        if isinstance(self.days, list):
            object.__setattr__(self, "days", tuple(int(d) for d in self.days))
        if isinstance(self.days, str) and self.days != "all-available":
            raise ConfigError(f"days must be a list of day indices or 'all-available', got {self.days!r}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if not self.lam > 0:
            raise ConfigError("lambda must be > 0")
        if self.day_stride < 1 or self.reuse_model_days < 1:
            raise ConfigError("day_stride and reuse_model_days must be >= 1")
        if min(self.D1, self.D2, self.D3) < 0:
            raise ConfigError("lag windows must be non-negative")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")
        if self.insitu_noise < 0:
            raise ConfigError("insitu_noise must be >= 0")
        if self.scene_path is not None and not os.path.exists(self.scene_path):
            raise ConfigError(f"scene path {self.scene_path} does not exist")

    @property
    def schema(self) -> FeatureSchema:
        if self.scenario == "BRTst":
            return FeatureSchema(SPATIOTEMPORAL, self.D1, self.D2, self.D3, self.include_lc)
        return FeatureSchema.spatial(self.include_lc)

    @property
    def fit_params(self) -> FitParams:
        return FitParams(self.min_error_decrease, self.min_leaf_count)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["days"] = list(self.days) if not isinstance(self.days, str) else self.days
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "scene" in d:
            scene = d.pop("scene")
            if isinstance(scene, dict):
                d["scene_config"] = scene
            elif scene is not None:
                d["scene_path"] = str(scene)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: Union[str, os.PathLike]) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read scenario config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        # a relative scene path is taken relative to the config file
        scene = d.get("scene", d.get("scene_path"))
        if isinstance(scene, str) and not os.path.isabs(scene):
            resolved = os.path.join(os.path.dirname(os.fspath(path)), scene)
            d.pop("scene", None)
            d["scene_path"] = resolved
        return cls.from_dict(d)


_SCENE_CACHE: dict = {}


def load_config_scene(cfg: ScenarioConfig) -> Scene:
    """The scene a config refers to (built scenes are cached per config)."""
    if cfg.scene_path is not None:
        p = Path(cfg.scene_path)
        key = ("path", str(p.resolve()), p.stat().st_mtime_ns)
    else:
        key = ("config", json.dumps(cfg.scene_config or {}, sort_keys=True))
    if key not in _SCENE_CACHE:
        if cfg.scene_path is not None:
            scene = scene_from_path(cfg.scene_path)
        else:
            scene = build_scene(SceneConfig.from_dict(cfg.scene_config or {}))
        _SCENE_CACHE.clear()
        _SCENE_CACHE[key] = scene
    return _SCENE_CACHE[key]


def evaluation_days(scene: Scene, cfg: ScenarioConfig, schema: Optional[FeatureSchema] = None) -> list[int]:
    """Days to evaluate: the explicit list, or every final-year day with coarse SM."""
    schema = schema or cfg.schema
    if isinstance(cfg.days, str):
        first = max(1, scene.n_days - DAYS_PER_YEAR + 1) if scene.config.years > 1 else 1
        days = [int(d) for d in scene.coarse_days if d >= first and d - schema.max_lag >= 1]
    else:
        days = list(cfg.days)
        bad = [d for d in days if not 1 <= d <= scene.n_days]
        if bad:
            raise ConfigError(f"evaluation days outside the scene: {bad}")
    return days[:: cfg.day_stride]


# -- per-day model ---------------------------------------------------------------------


@dataclass
class DayModel:
    """Pooled bag, plus per-land-cover bags when stratified."""

    pooled: Ensemble
    by_lc: dict = field(default_factory=dict)
    n_rows: int = 0

    @property
    def n_active(self) -> int:
        return len(self.pooled.active) + sum(len(e.active) for e in self.by_lc.values())

    def predict(self, X: np.ndarray, lc: np.ndarray, weighted: bool = False) -> np.ndarray:
        out = predict_bagged(self.pooled, X, weighted)
        for code, e in self.by_lc.items():
            rows = lc == code
            if rows.any():
                out[rows] = predict_bagged(e, X[rows], weighted)
        return out


def _fit_one(X, y, cfg: ScenarioConfig, seed: int, threads: int) -> Ensemble:
    e = fit_bagged(X, y, cfg.K, cfg.fit_params, seed, threads)
    # pruning uses the training rows (re-substitution)
    return select_trees(e, X, y, cfg.lam)


def fit_day_model(
    scene: Scene,
    cfg: ScenarioConfig,
    t: int,
    schema: Optional[FeatureSchema] = None,
    mask: Optional[GapMask] = None,
    threads: int = 1,
) -> DayModel:
    schema = schema or cfg.schema
    selection = TrainingSelection.for_scenario(scene, cfg.scenario, cfg.history_days)
    fm, y = assemble_training(scene, selection, schema, t, mask, cfg.insitu_noise, derive_seed(cfg.master_seed, "insitu"))
    pooled = _fit_one(fm.values, y, cfg, derive_seed(cfg.master_seed, "day", t), threads)
    by_lc = {}
    if cfg.per_lc:
        lc = scene.truth[Variable.LC].reshape(scene.n_days, -1)[fm.days - 1, fm.pixels]
        for code in (BARE, CORN, COTTON):
            rows = lc == code
            # too few rows for a split: leave the class to the pooled bag
            if rows.sum() >= 2 * cfg.min_leaf_count:
                by_lc[code] = _fit_one(fm.values[rows], y[rows], cfg, derive_seed(cfg.master_seed, "day", t, "lc", code), threads)
    return DayModel(pooled, by_lc, fm.n_rows)


def downscale_day(
    scene: Scene, cfg: ScenarioConfig, t: int, model: DayModel, schema: Optional[FeatureSchema] = None, mask: Optional[GapMask] = None
) -> np.ndarray:
    schema = schema or cfg.schema
    fm = assemble_inference(scene, schema, t, mask)
    lc = scene.truth[Variable.LC][t - 1].ravel()
    pred = model.predict(fm.values, lc, cfg.weighted)
    return pred.reshape(scene.mid_geometry.shape)


# -- metrics -----------------------------------------------------------------------------


@dataclass(frozen=True)
class StratumStat:
    n: int
    sse: float

    @property
    def rmse(self) -> float:
        return float(np.sqrt(self.sse / self.n)) if self.n else float("nan")

    def __add__(self, other: "StratumStat") -> "StratumStat":
        return StratumStat(self.n + other.n, self.sse + other.sse)


def stratum_labels(lc_fine: np.ndarray, day_of_year: int, factor: int) -> np.ndarray:
    """Stratum name per 1 km pixel from the fine land cover.

    A 1 km pixel takes the majority code of its fine cells (ties to bare).
    Bare pixels split into A (some vegetated fine cell, up to DoY 332),
    B (after DoY 332) and C (no vegetated fine cell, up to DoY 332).
    """
    lc_fine = np.asarray(lc_fine)
    h, w = lc_fine.shape
    if factor < 1 or h % factor or w % factor:
        raise DimensionError(f"{h}x{w} land cover is not divisible into {factor}x{factor} blocks")
    blocks = lc_fine.reshape(h // factor, factor, w // factor, factor)
    counts = np.stack([(blocks == c).sum(axis=(1, 3)) for c in (BARE, CORN, COTTON)])
    major = counts.argmax(axis=0)
    veg = counts[1] + counts[2]
    labels = np.empty(major.shape, dtype=object)
    labels[major == CORN] = "corn"
    labels[major == COTTON] = "cotton"
    bare = major == BARE
    if day_of_year > POST_HARVEST_DOY:
        labels[bare] = "bare_B"
    else:
        labels[bare & (veg > 0)] = "bare_A"
        labels[bare & (veg == 0)] = "bare_C"
    return labels


def compute_strata_rmse(predicted: np.ndarray, truth: np.ndarray, lc_fine: np.ndarray, day_of_year: int) -> dict:
    """``{stratum: StratumStat}`` for one day; every stratum is present (possibly empty)."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise DimensionError(f"prediction {predicted.shape} and truth {truth.shape} differ")
    lc_fine = np.asarray(lc_fine)
    if lc_fine.shape[0] % predicted.shape[0] or lc_fine.shape[1] % predicted.shape[1]:
        raise DimensionError(f"land cover {lc_fine.shape} does not nest in {predicted.shape}")
    factor = lc_fine.shape[0] // predicted.shape[0]
    if lc_fine.shape[1] // predicted.shape[1] != factor:
        raise DimensionError("land cover blocks must be square")
    labels = stratum_labels(lc_fine, day_of_year, factor)
    sq = (predicted - truth) ** 2
    return {s: StratumStat(int((labels == s).sum()), float(sq[labels == s].sum())) for s in STRATA}


def coarse_consistency(pred: np.ndarray, coarse_obs: np.ndarray, factor: int, tol: float = COARSE_TOL) -> float:
    """Fraction of coarse blocks whose downscaled mean is within ``tol`` of the observation."""
    return float(np.mean(np.abs(block_mean(pred, factor) - coarse_obs) < tol))


@dataclass(frozen=True)
class DayMetrics:
    day: int
    doy: int
    rmse: float
    mae: float
    bias: float
    sd: float
    frac_over: float
    coarse_consistency: float
    n_active: int
    n_train_rows: int


def day_metrics(scene: Scene, t: int, pred: np.ndarray, model: Optional[DayModel] = None) -> DayMetrics:
    err = pred - scene.truth[Variable.SM][t - 1]
    cons = float("nan")
    if scene.coarse_available(t):
        cons = coarse_consistency(pred, scene.coarse_sm[t - 1], scene.coarse_factor)
    return DayMetrics(
        day=t,
        doy=doy(t),
        rmse=float(np.sqrt(np.mean(err**2))),
        mae=float(np.mean(np.abs(err))),
        bias=float(np.mean(err)),
        sd=float(np.std(err)),
        frac_over=float(np.mean(np.abs(err) > ERROR_THRESHOLD)),
        coarse_consistency=cons,
        n_active=model.n_active if model else 0,
        n_train_rows=model.n_rows if model else 0,
    )


@dataclass
class MetricsReport:
    scenario: str
    daily: list = field(default_factory=list)
    strata: dict = field(default_factory=lambda: {s: StratumStat(0, 0.0) for s in STRATA})
    strata_daily: dict = field(default_factory=dict)
    abs_error_sum: Optional[np.ndarray] = None
    failures: list = field(default_factory=list)
    requested_days: int = 0

    @property
    def n_days(self) -> int:
        return len(self.daily)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    @property
    def time_avg_rmse(self) -> float:
        return float(np.mean([m.rmse for m in self.daily])) if self.daily else float("nan")

    @property
    def rmse_sd(self) -> float:
        return float(np.std([m.rmse for m in self.daily])) if self.daily else float("nan")

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean([m.mae for m in self.daily])) if self.daily else float("nan")

    @property
    def frac_over(self) -> float:
        return float(np.mean([m.frac_over for m in self.daily])) if self.daily else float("nan")

    @property
    def coarse_consistency(self) -> float:
        vals = [m.coarse_consistency for m in self.daily if np.isfinite(m.coarse_consistency)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def pixel_mean_abs_error(self) -> Optional[np.ndarray]:
        return None if self.abs_error_sum is None or not self.daily else self.abs_error_sum / self.n_days

    def stratum_rmse(self, name: str) -> float:
        return self.strata[name].rmse

    def add_day(self, scene: Scene, t: int, pred: np.ndarray, model: Optional[DayModel]) -> DayMetrics:
        m = day_metrics(scene, t, pred, model)
        self.daily.append(m)
        st = compute_strata_rmse(pred, scene.truth[Variable.SM][t - 1], scene.raster(Variable.LC, t, resolution_m=scene.config.fine_m).values, doy(t))
        self.strata_daily[t] = st
        for s in STRATA:
            self.strata[s] = self.strata[s] + st[s]
        err = np.abs(pred - scene.truth[Variable.SM][t - 1])
        self.abs_error_sum = err if self.abs_error_sum is None else self.abs_error_sum + err
        return m

    def summary_rows(self) -> list[tuple[str, object]]:
        return [
            ("scenario", self.scenario),
            ("days_requested", self.requested_days),
            ("days_evaluated", self.n_days),
            ("days_failed", len(self.failures)),
            ("time_avg_rmse", self.time_avg_rmse),
            ("rmse_sd", self.rmse_sd),
            ("mean_abs_error", self.mean_abs_error),
            ("frac_error_gt_0.04", self.frac_over),
            ("coarse_consistency", self.coarse_consistency),
        ]


# -- output helpers ------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Union[str, os.PathLike], header: Sequence[str], rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_grid(path: Union[str, os.PathLike], grid: np.ndarray, comment: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {comment}\n")
        for row in np.asarray(grid, dtype=np.float64).tolist():
            fh.write(",".join(map(repr, row)) + "\n")


def versions() -> dict:
    return {"smdownscale": __version__, "numpy": np.__version__, "numba": numba.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, cfg: ScenarioConfig, scene: Scene, extra: Optional[dict] = None) -> None:
    config = cfg.to_dict()
    # the output location is not part of the experiment; leaving it out keeps
    # manifests of identical runs identical wherever they are written
    config.pop("out_dir")
    manifest = {
        "format": "smdownscale-run",
        "command": command,
        "config": config,
        "scene_config": scene.config.to_dict(),
        "seeds": {"master": cfg.master_seed, "scene": scene.config.seed, "day_model": 'derive_seed(master, "day", t)'},
        "versions": versions(),
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_report(out: Path, report: MetricsReport) -> None:
    write_csv(
        out / "daily_metrics.csv",
        ["day", "doy", "rmse", "mae", "bias", "sd", "frac_error_gt_0.04", "coarse_consistency", "n_active", "n_train_rows"],
        ([m.day, m.doy, m.rmse, m.mae, m.bias, m.sd, m.frac_over, m.coarse_consistency, m.n_active, m.n_train_rows] for m in report.daily),
    )
    write_csv(out / "strata.csv", ["stratum", "n_pixel_days", "rmse"], ([s, report.strata[s].n, report.strata[s].rmse] for s in STRATA))
    write_csv(
        out / "strata_daily.csv",
        ["day", "stratum", "n_pixels", "rmse"],
        ([t, s, st[s].n, st[s].rmse] for t, st in sorted(report.strata_daily.items()) for s in STRATA),
    )
    write_csv(out / "summary.csv", ["metric", "value"], report.summary_rows())
    write_csv(out / "failures.csv", ["day", "error"], report.failures)
    if report.pixel_mean_abs_error is not None:
        write_grid(out / "pixel_mean_abs_error.csv", report.pixel_mean_abs_error, "time-mean |downscaled - truth| per 1 km pixel, m3/m3")


# -- scenario run -------------------------------------------------------------------------------


@dataclass
class RunResult:
    report: MetricsReport
    predictions: dict  # day -> (n, n) array
    days: list


def run_scenario(
    cfg: ScenarioConfig,
    scene: Optional[Scene] = None,
    threads: int = 1,
    out_dir: Union[None, str, os.PathLike] = None,
    progress: Optional[Callable[[int, int, int], None]] = None,
) -> RunResult:
    """Downscale every evaluation day of ``cfg`` and score it against the 1 km truth."""
    scene = scene if scene is not None else load_config_scene(cfg)
    out = Path(out_dir) if out_dir is not None else (Path(cfg.out_dir) if cfg.out_dir else None)
    days = evaluation_days(scene, cfg)
    report = MetricsReport(cfg.scenario, requested_days=len(days))
    preds: dict = {}
    model: Optional[DayModel] = None
    age = 0
    for i, t in enumerate(days):
        try:
            if model is None or age >= cfg.reuse_model_days:
                model, age = None, 0
                model = fit_day_model(scene, cfg, t, threads=threads)
            age += 1
            pred = downscale_day(scene, cfg, t, model)
            r = Raster(Variable.SM, scene.config.mid_m, t, pred)
        except DAY_ERRORS as exc:
            log.error("day %d failed: %s: %s", t, type(exc).__name__, exc)
            report.failures.append((t, f"{type(exc).__name__}: {exc}"))
            continue
        m = report.add_day(scene, t, pred, model)
        preds[t] = pred
        if out is not None and cfg.write_rasters:
            write_tdr(_mkparent(out / "downscaled" / f"SM_{scene.config.mid_m}m_d{t:04d}.csv"), r)
            write_grid(out / "errors" / f"err_d{t:04d}.csv", pred - scene.truth[Variable.SM][t - 1], f"downscaled - truth, day {t}")
        log.info("day %d: rmse %.4f, %d active trees", t, m.rmse, m.n_active)
        if progress:
            progress(i + 1, len(days), t)
    if out is not None:
        write_report(out, report)
        write_manifest(out, "run", cfg, scene, {"days": days, "failed_days": [d for d, _ in report.failures]})
    return RunResult(report, preds, days)


def _mkparent(p: Path) -> Path:
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# -- sweeps ----------------------------------------------------------------------------------------

LAG_VARIABLES = ("LST", "LAI", "PPT", "all")


def lag_sensitivity_sweep(
    cfg: ScenarioConfig, variable: str, lag_grid: Sequence[int], scene: Optional[Scene] = None, threads: int = 1
) -> list[tuple[int, float, float]]:
    """``(lag, mean daily RMSE, SD of daily RMSE)`` for each window length in ``lag_grid``.

    ``variable`` is ``LST``, ``LAI``, ``PPT`` (the others stay at the
    config's windows) or ``all`` (all three set to the lag).
    """
    if cfg.scenario != "BRTst":
        raise ConfigError("lag sweeps need the spatio-temporal scenario")
    var = variable.upper() if variable.lower() != "all" else "all"
    if var not in LAG_VARIABLES:
        raise ConfigError(f"unknown lag variable {variable!r}")
    scene = scene if scene is not None else load_config_scene(cfg)
    days = evaluation_days(scene, cfg, FeatureSchema(SPATIOTEMPORAL, 0, 0, 0))
    if not days:
        raise AvailabilityError("no evaluation days")
    rows = []
    for lag in lag_grid:
        if lag < 0:
            raise ValueError("lags must be non-negative")
        key = {"LST": ("D1",), "LAI": ("D2",), "PPT": ("D3",), "all": ("D1", "D2", "D3")}[var]
        c = replace(cfg, **{k: int(lag) for k in key})
        if min(days) - c.schema.max_lag < 1:
            raise AvailabilityError(f"lag {lag} exceeds the history available before day {min(days)}")
        errs = []
        for t in days:
            model = fit_day_model(scene, c, t, threads=threads)
            pred = downscale_day(scene, c, t, model)
            errs.append(float(np.sqrt(np.mean((pred - scene.truth[Variable.SM][t - 1]) ** 2))))
        rows.append((int(lag), float(np.mean(errs)), float(np.std(errs))))
        log.info("%s lag %d: mean rmse %.4f", var, lag, rows[-1][1])
    return rows


@dataclass(frozen=True)
class GapPoint:
    gaps: int
    mean_error: float  # mean |error| over pixels
    rmse: float
    frac_over: float


def gap_experiment(
    cfg: ScenarioConfig,
    max_gaps: int,
    day: Optional[int] = None,
    scene: Optional[Scene] = None,
    threads: int = 1,
    out_dir: Union[None, str, os.PathLike] = None,
) -> tuple[int, list[GapPoint]]:
    """Withhold LST on the target day and the ``g - 1`` days before, for g = 0..max_gaps.

    The model is retrained without the withheld columns for every g.
    Returns the evaluation day and one point per g.
    """
    if cfg.scenario != "BRTst":
        raise ConfigError("the gap experiment needs the spatio-temporal scenario")
    if not 0 <= max_gaps <= cfg.D1:
        raise ValueError(f"max_gaps must be in [0, D1={cfg.D1}]")
    scene = scene if scene is not None else load_config_scene(cfg)
    t = day if day is not None else select_analog_days(scene)["dual_crop"]
    if t is None:
        raise AvailabilityError("no day with mixed land cover to run the gap experiment on")
    truth = scene.truth[Variable.SM][t - 1]
    points = []
    for g in range(max_gaps + 1):
        mask = GapMask.consecutive(cfg.D1, g)
        model = fit_day_model(scene, cfg, t, mask=mask, threads=threads)
        pred = downscale_day(scene, cfg, t, model, mask=mask)
        err = pred - truth
        points.append(GapPoint(g, float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err) > ERROR_THRESHOLD))))
        if out_dir is not None and cfg.write_rasters:
            write_tdr(_mkparent(Path(out_dir) / "gaps" / f"SM_{scene.config.mid_m}m_d{t:04d}_g{g}.csv"), Raster(Variable.SM, scene.config.mid_m, t, pred))
        log.info("gaps %d: mean error %.4f", g, points[-1].mean_error)
    return t, points


def training_set(scene: Scene, cfg: ScenarioConfig, t: int):
    selection = TrainingSelection.for_scenario(scene, cfg.scenario, cfg.history_days)
    fm, y = assemble_training(scene, selection, cfg.schema, t, None, cfg.insitu_noise, derive_seed(cfg.master_seed, "insitu"))
    return fm.values, y


def treecount_sweep(
    cfg: ScenarioConfig, K_grid: Sequence[int], day: int, folds: int = 10, scene: Optional[Scene] = None, threads: int = 1
) -> list[tuple[int, float]]:
    """10-fold CV RMSE against bag size on the scenario's training set for ``day``."""
    scene = scene if scene is not None else load_config_scene(cfg)
    X, y = training_set(scene, cfg, day)
    return cross_validate_treecount(X, y, K_grid, folds, derive_seed(cfg.master_seed, "cv", day), cfg.fit_params, threads=threads)


def lambda_sweep_run(
    cfg: ScenarioConfig, lambdas: Sequence[float], day: int, scene: Optional[Scene] = None, threads: int = 1
) -> list[tuple[float, float, int, float]]:
    """``(lambda, beta, n_active, resub_error)`` for the bag fitted on ``day``."""
    scene = scene if scene is not None else load_config_scene(cfg)
    X, y = training_set(scene, cfg, day)
    e = fit_bagged(X, y, cfg.K, cfg.fit_params, derive_seed(cfg.master_seed, "day", day), threads)
    return lambda_sweep(e, X, y, lambdas)


# -- evaluation-day analogs ---------------------------------------------------------------------


def _lc_entropy(frac: np.ndarray) -> float:
    p = frac[frac > 0]
    return float(-(p * np.log(p)).sum())


def select_analog_days(scene: Scene, year: Optional[int] = None) -> dict:
    """Pick evaluation days matching the five illustrative conditions.

    ``early_bare_dry``  all bare, before planting, least recent water input
    ``late_bare_wet``   all bare after DoY 332, most recent water input
    ``corn_irrigated``  corn but no cotton, irrigation on, fewest rain events
    ``cotton_wet``      cotton but no corn, most recent water input
    ``dual_crop``       most mixed land cover (ties: closest to DoY 222)

    "Recent water input" is the regional mean 1 km PPT summed over the day
    and the two before it.  Only coarse-SM days of ``year`` (default: the
    last simulated year) are considered; a condition no day meets maps to
    ``None``.
    """
    year = scene.config.years if year is None else year
    lo, hi = (year - 1) * DAYS_PER_YEAR + 1, year * DAYS_PER_YEAR
    days = [int(d) for d in scene.coarse_days if lo <= d <= hi]
    ppt = scene.truth[Variable.PPT].reshape(scene.n_days, -1).mean(axis=1)
    rain = scene.rain_event_counts if scene.rain_event_counts is not None else np.zeros(scene.n_days)
    irr = scene.irrigation_counts if scene.irrigation_counts is not None else np.zeros(scene.n_days)

    def wet(d):
        return float(ppt[max(0, d - 3) : d].sum())

    info = {}
    for d in days:
        lc = scene.truth[Variable.LC][d - 1]
        frac = np.array([(lc == c).mean() for c in (BARE, CORN, COTTON)])
        info[d] = frac

    def pick(cands, key):
        return min(cands, key=key) if cands else None

    bare = [d for d in days if info[d][0] == 1.0]
    corn_only = [d for d in days if info[d][1] > 0 and info[d][2] == 0]
    cotton_only = [d for d in days if info[d][2] > 0 and info[d][1] == 0]
    mixed = [d for d in days if info[d][1] > 0 and info[d][2] > 0]
    corn_irr = [d for d in corn_only if irr[d - 1] > 0] or corn_only
    return {
        "early_bare_dry": pick([d for d in bare if doy(d) <= POST_HARVEST_DOY], lambda d: (wet(d), d)),
        "late_bare_wet": pick([d for d in bare if doy(d) > POST_HARVEST_DOY], lambda d: (-wet(d), d)),
        "corn_irrigated": pick(corn_irr, lambda d: (rain[d - 1], -info[d][1], d)),
        "cotton_wet": pick(cotton_only, lambda d: (-wet(d), d)),
        "dual_crop": pick(mixed, lambda d: (-round(_lc_entropy(info[d]), 12), abs(doy(d) - 222), d)),
    }


# -- report aggregation -------------------------------------------------------------------------


def aggregate_reports(run_dirs: Sequence[Union[str, os.PathLike]]) -> list[tuple]:
    """Rows ``(run, scenario, metric, value)`` gathered from run output directories."""
    rows = []
    for d in run_dirs:
        d = Path(d)
        try:
            with open(d / "summary.csv", newline="") as fh:
                summary = {r["metric"]: r["value"] for r in csv.DictReader(fh)}
            with open(d / "strata.csv", newline="") as fh:
                strata = list(csv.DictReader(fh))
        except OSError as exc:
            raise DataError(f"{d} is not a run output directory: {exc}") from exc
        scen = summary.get("scenario", "?")
        for k in ("time_avg_rmse", "rmse_sd", "mean_abs_error", "frac_error_gt_0.04", "coarse_consistency", "days_evaluated", "days_failed"):
            if k in summary:
                rows.append((d.name, scen, k, summary[k]))
        for r in strata:
            rows.append((d.name, scen, f"rmse_{r['stratum']}", r["rmse"]))
    return rows
