"""Surrogate multi-resolution land-surface scene.

Stands in for a coupled land-surface/crop model run.  The region is cut
into rectangular fields (a guillotine partition of the 200 m grid), each
bare, sweet corn or cotton.  Every day:

1. land cover follows the crop calendar (crop code between planting and
   harvest, bare otherwise) and LAI follows :func:`lai_curve`;
2. rain arrives as Poisson events with exponential peak intensity and a
   Gaussian footprint; fields whose previous-day mean SM is below the
   crop's trigger get an irrigation dose; PPT is rain plus irrigation;
3. a bucket water balance updates SM and LST is tied to air temperature,
   relative dryness and LAI (:func:`step_water_balance`).

Rain and air temperature are evaluated at field centroids by default, so
each field is homogeneous at 200 m while forcings still vary across the
region.  The 200 m fields are block-averaged to 1 km and 10 km, then
observation noise is added (LST, PPT, LAI at 1 km; SM at 10 km).  LAI is
observed every ``lai_obs_interval`` days, coarse SM every
``coarse_sm_cadence_days`` days.

All random draws use :func:`smdownscale.seeding.rng_for` with the scene
seed and a purpose key (``"layout"``, ``"rain"``, ``"airtemp"``,
``"noise"``, ``"selection"``, ``"soil"``), so any single field can be regenerated
independently.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DimensionError
from .rastergrid import (
    BARE,
    CORN,
    COTTON,
    GridGeometry,
    Raster,
    Variable,
    add_gaussian_noise,
    block_majority,
    block_mean,
    read_tdr,
    write_tdr,
)
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365
CROP_CODES = {"bare": BARE, "sweet_corn": CORN, "cotton": COTTON}
LAI_PEAK = {"sweet_corn": 3.5, "cotton": 4.5}
LAI_PEAK_AT = 0.7
# shape exponent of the gamma-like LAI curve; gives 25% decline by harvest
_LAI_SHAPE = 4.0


def doy(day: int) -> int:
    """Day of year (1..365) of a 1-based continuous day index."""
    return (day - 1) % DAYS_PER_YEAR + 1


@dataclass(frozen=True)
class CropCalendar:
    entries: tuple[tuple[str, int, int], ...] = (
        ("sweet_corn", 61, 139),
        ("sweet_corn", 183, 261),
        ("cotton", 153, 332),
    )

    def __post_init__(self):
        for crop, plant, harvest in self.entries:
            if crop not in LAI_PEAK:
                raise ConfigError(f"unknown crop {crop!r}")
            if not 1 <= plant < harvest <= DAYS_PER_YEAR:
                raise ConfigError(f"bad season {crop} {plant}-{harvest}")

    def season(self, crop: str, day_of_year: int) -> Optional[tuple[int, int]]:
        for c, plant, harvest in self.entries:
            if c == crop and plant <= day_of_year <= harvest:
                return plant, harvest
        return None


@dataclass(frozen=True)
class IrrigationRule:
    trigger: float
    dose: float  # mm/hr, applied for one day


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 2008
    years: int = 2
    extent_km: float = 50.0
    fine_m: int = 200
    mid_m: int = 1000
    coarse_m: int = 10000

    n_fields: int = 30
    field_layout_seed: Optional[int] = None
    min_field_cells: int = 10
    crop_weights: tuple[float, float, float] = (0.4, 0.3, 0.3)  # bare, corn, cotton
    field_crops: Optional[tuple[str, ...]] = None
    calendar: CropCalendar = field(default_factory=CropCalendar)

    rain_event_rate: float = 2.0  # events per week
    rain_depth_scale: float = 1.5  # mean peak intensity, mm/hr
    rain_radius_km: tuple[float, float] = (8.0, 25.0)
    irrigation: dict = field(
        default_factory=lambda: {
            "sweet_corn": IrrigationRule(trigger=0.16, dose=3.0),
            "cotton": IrrigationRule(trigger=0.13, dose=3.0),
        }
    )
    irrigation_enabled: bool = True
    forcing_at_centroids: bool = True

    porosity: float = 0.42
    wilting_point: float = 0.06
    wilting_point_spread: float = 0.0  # per-field soil texture: wilting point +- this
    drainage: float = 0.12  # per day, on water above wilting point
    infiltration: float = 0.04  # m3/m3 per mm/hr of daily input
    et_bare: float = 0.015  # per day at saturation
    et_per_lai: float = 0.01
    et_temp_sensitivity: float = 0.03  # per K above 295 K
    initial_sm: Optional[float] = None  # None: midway between wilting point and porosity

    air_temp_mean: float = 295.0
    air_temp_amplitude: float = 8.0
    air_temp_anomaly_sd: float = 2.0
    air_temp_gradient: float = 2.0  # K across the region, west to east
    lst_dryness_gain: float = 40.0  # K
    lst_lai_cooling: float = 1.5  # K per unit LAI

    noise_lst: float = 5.0
    noise_ppt: float = 1.0
    noise_lai: float = 0.1
    noise_sm: float = 0.02

    lai_obs_interval: int = 7
    coarse_sm_cadence_days: int = 3
    n_training: tuple[int, ...] = (750, 30)
    keep_fine_days: Union[None, str, tuple[int, ...]] = None

    def __post_init__(self):
        try:
            rules = {k: v if isinstance(v, IrrigationRule) else IrrigationRule(**v) for k, v in self.irrigation.items()}
        except TypeError as exc:
            raise ConfigError(f"bad irrigation rule: {exc}") from exc
        object.__setattr__(self, "irrigation", rules)
        if not 0 < self.wilting_point < self.porosity <= 0.6:
            raise ConfigError("need 0 < wilting_point < porosity <= 0.6")
        if not 0 <= self.wilting_point_spread < min(self.wilting_point, self.porosity - self.wilting_point):
            raise ConfigError("wilting_point_spread must keep every field's wilting point in (0, porosity)")
        if self.rain_event_rate < 0 or self.rain_depth_scale < 0:
            raise ConfigError("rain parameters must be non-negative")
        if self.coarse_sm_cadence_days < 1 or self.lai_obs_interval < 1:
            raise ConfigError("observation cadences must be >= 1 day")
        if self.years < 1:
            raise ConfigError("years must be >= 1")
        if self.n_fields < 1:
            raise ConfigError("n_fields must be >= 1")
        if self.mid_m % self.fine_m or self.coarse_m % self.mid_m:
            raise ConfigError("resolutions must nest")
        try:
            for res in (self.fine_m, self.mid_m, self.coarse_m):
                GridGeometry(self.extent_km, res)
        except DimensionError as exc:
            raise ConfigError(str(exc)) from exc
        if self.field_crops is not None and len(self.field_crops) != self.n_fields:
            raise ConfigError("field_crops must list one crop per field")
        if self.drainage + self.et_bare + self.et_per_lai * 5 >= 1:
            raise ConfigError("drainage and ET coefficients too large for a stable bucket")
        if self.initial_sm is not None and not self.wilting_point + self.wilting_point_spread <= self.initial_sm <= self.porosity:
            raise ConfigError("initial_sm outside [wilting_point (+ spread), porosity]")

    @property
    def n_days(self) -> int:
        return self.years * DAYS_PER_YEAR

    def geometry(self, resolution_m: int) -> GridGeometry:
        return GridGeometry(self.extent_km, resolution_m)

    # -- JSON

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "calendar":
                v = [list(e) for e in v.entries]
            elif f.name == "irrigation":
                v = {k: {"trigger": r.trigger, "dose": r.dose} for k, r in sorted(v.items())}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene config keys: {sorted(unknown)}")
        kw = dict(d)
        if "calendar" in kw:
            kw["calendar"] = CropCalendar(tuple((str(c), int(p), int(h)) for c, p, h in kw["calendar"]))
        for key in ("crop_weights", "rain_radius_km", "field_crops", "n_training"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if isinstance(kw.get("keep_fine_days"), list):
            kw["keep_fine_days"] = tuple(kw["keep_fine_days"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: Union[str, os.PathLike]) -> "SceneConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read scene config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(d)


# -- land cover ------------------------------------------------------------------


@dataclass(frozen=True)
class FieldLayout:
    """Rectangular fields on the fine grid; ``rects[k] = (r0, r1, c0, c1)`` half-open."""

    size: int
    rects: tuple[tuple[int, int, int, int], ...]
    crops: tuple[str, ...]

    @cached_property
    def field_id(self) -> np.ndarray:
        fid = np.full((self.size, self.size), -1, dtype=np.int64)
        for k, (r0, r1, c0, c1) in enumerate(self.rects):
            fid[r0:r1, c0:c1] = k
        fid.setflags(write=False)
        return fid

    @property
    def n_fields(self) -> int:
        return len(self.rects)

    def centroids(self, cell_km: float) -> np.ndarray:
        """Field centroids ``(n_fields, 2)`` as ``(X, Y)`` km."""
        return np.array([((c0 + c1) / 2 * cell_km, (r0 + r1) / 2 * cell_km) for r0, r1, c0, c1 in self.rects])

    def to_dict(self) -> dict:
        return {"size": self.size, "rects": [list(r) for r in self.rects], "crops": list(self.crops)}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldLayout":
        return cls(int(d["size"]), tuple(tuple(int(v) for v in r) for r in d["rects"]), tuple(d["crops"]))


def generate_layout(config: SceneConfig) -> FieldLayout:
    """Guillotine partition of the fine grid into ``n_fields`` rectangles."""
    size = config.geometry(config.fine_m).size
    m = config.min_field_cells
    if m < 1 or m > size:
        raise ConfigError("min_field_cells must be in [1, grid size]")
    if config.n_fields > (size // m) ** 2:
        raise ConfigError(f"{config.n_fields} fields of >= {m} cells per side do not fit a {size}x{size} grid")
    seed = config.field_layout_seed if config.field_layout_seed is not None else derive_seed(config.seed, "layout")
    rng = np.random.Generator(np.random.PCG64(seed))
    rects = [(0, size, 0, size)]
    while len(rects) < config.n_fields:
        order = sorted(range(len(rects)), key=lambda k: (-(rects[k][1] - rects[k][0]) * (rects[k][3] - rects[k][2]), k))
        for k in order:
            r0, r1, c0, c1 = rects[k]
            h, w = r1 - r0, c1 - c0
            axis = 0 if h >= w else 1
            length = h if axis == 0 else w
            if length < 2 * m:
                axis, length = 1 - axis, (w if axis == 0 else h)
            if length < 2 * m:
                continue
            lo, hi = max(m, int(math.ceil(0.3 * length))), min(length - m, int(0.7 * length))
            if lo > hi:
                lo, hi = m, length - m
            cut = int(rng.integers(lo, hi + 1))
            if axis == 0:
                rects[k : k + 1] = [(r0, r0 + cut, c0, c1), (r0 + cut, r1, c0, c1)]
            else:
                rects[k : k + 1] = [(r0, r1, c0, c0 + cut), (r0, r1, c0 + cut, c1)]
            break
        else:
            raise ConfigError(f"cannot partition the grid into {config.n_fields} fields")
    rects.sort()
    if config.field_crops is not None:
        crops = tuple(config.field_crops)
        for c in crops:
            if c not in CROP_CODES:
                raise ConfigError(f"unknown crop {c!r}")
    else:
        w = np.asarray(config.crop_weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("crop_weights must be three non-negative numbers")
        n = len(rects)
        n_corn = int(round(w[1] / w.sum() * n))
        n_cotton = int(round(w[2] / w.sum() * n))
        n_cotton = min(n_cotton, n - n_corn)
        pool = ["sweet_corn"] * n_corn + ["cotton"] * n_cotton + ["bare"] * (n - n_corn - n_cotton)
        crops = tuple(pool[i] for i in rng.permutation(n))
    return FieldLayout(size, tuple(rects), crops)


def field_lc_codes(layout: FieldLayout, calendar: CropCalendar, day: int) -> np.ndarray:
    d = doy(day)
    codes = np.zeros(layout.n_fields)
    for k, crop in enumerate(layout.crops):
        if crop != "bare" and calendar.season(crop, d) is not None:
            codes[k] = CROP_CODES[crop]
    return codes


def landcover(layout: FieldLayout, calendar: CropCalendar, day: int, resolution_m: int = 200) -> Raster:
    """LC raster of the fine grid on ``day``."""
    return Raster(Variable.LC, resolution_m, day, field_lc_codes(layout, calendar, day)[layout.field_id])


class LandcoverSeries(Sequence):
    """Daily LC rasters at 200 m, built on access (index = day - 1)."""

    def __init__(self, config: SceneConfig, layout: Optional[FieldLayout] = None):
        self.config = config
        self.layout = layout or generate_layout(config)

    def __len__(self):
        return self.config.n_days

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        day = (i % len(self)) + 1
        return landcover(self.layout, self.config.calendar, day, self.config.fine_m)

    def day(self, day: int) -> Raster:
        return self[day - 1]


def generate_landcover(config: SceneConfig) -> LandcoverSeries:
    return LandcoverSeries(config)


# -- LAI -----------------------------------------------------------------------


def lai_curve(crop: str, days_since_planting: float, season_length: float) -> float:
    """Gamma-shaped LAI: 0 at planting, crop peak at 70% of the season, 25% lower at harvest."""
    if days_since_planting < 0 or season_length <= 0:
        raise ValueError("days_since_planting must be >= 0 and season_length > 0")
    if days_since_planting > season_length:
        raise ValueError("days_since_planting beyond harvest")
    if crop not in LAI_PEAK:
        raise ValueError(f"unknown crop {crop!r}")
    s = days_since_planting / (LAI_PEAK_AT * season_length)
    if s == 0:
        return 0.0
    return LAI_PEAK[crop] * s**_LAI_SHAPE * math.exp(_LAI_SHAPE * (1.0 - s))


def field_lai(layout: FieldLayout, calendar: CropCalendar, day: int) -> np.ndarray:
    d = doy(day)
    out = np.zeros(layout.n_fields)
    for k, crop in enumerate(layout.crops):
        if crop == "bare":
            continue
        season = calendar.season(crop, d)
        if season is not None:
            plant, harvest = season
            out[k] = lai_curve(crop, d - plant, harvest - plant)
    return out


# -- weather -------------------------------------------------------------------


@dataclass
class Weather:
    ppt: np.ndarray  # fine grid, mm/hr
    airtemp: np.ndarray  # fine grid, K
    n_rain_events: int
    irrigated_fields: tuple[int, ...]


def _sample_points(config: SceneConfig, layout: FieldLayout) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates (km) where forcings are evaluated, plus the map back to fine cells."""
    cell_km = config.fine_m / 1000.0
    if config.forcing_at_centroids:
        return layout.centroids(cell_km), layout.field_id
    n = layout.size
    c = (np.arange(n) + 0.5) * cell_km
    xs, ys = np.meshgrid(c, c)
    return np.column_stack([xs.ravel(), ys.ravel()]), np.arange(n * n).reshape(n, n)


def air_temperature(config: SceneConfig, day: int, points: np.ndarray) -> np.ndarray:
    rng = rng_for(config.seed, "airtemp", day)
    seasonal = config.air_temp_mean + config.air_temp_amplitude * math.sin(2 * math.pi * (doy(day) - 105) / DAYS_PER_YEAR)
    anomaly = rng.normal(0.0, config.air_temp_anomaly_sd) if config.air_temp_anomaly_sd > 0 else 0.0
    gradient = config.air_temp_gradient * (points[:, 0] / config.extent_km - 0.5)
    return seasonal + anomaly + gradient


def rain_events(config: SceneConfig, day: int) -> np.ndarray:
    """``(n, 4)`` array of (x_km, y_km, radius_km, peak_mm_per_hr) for ``day``."""
    rng = rng_for(config.seed, "rain", day)
    n = int(rng.poisson(config.rain_event_rate / 7.0)) if config.rain_event_rate > 0 else 0
    if n == 0:
        return np.empty((0, 4))
    margin = config.rain_radius_km[1] / 2
    xy = rng.uniform(-margin, config.extent_km + margin, size=(n, 2))
    radius = rng.uniform(*config.rain_radius_km, size=n)
    peak = rng.exponential(config.rain_depth_scale, size=n)
    return np.column_stack([xy, radius, peak])


def generate_weather(config: SceneConfig, day: int, layout: FieldLayout, sm_prev: Optional[np.ndarray] = None) -> Weather:
    """PPT (rain + irrigation) and air temperature on the fine grid for ``day``.

    ``sm_prev`` is the previous day's fine SM; irrigation is skipped when
    it is ``None``.
    """
    points, to_cells = _sample_points(config, layout)
    events = rain_events(config, day)
    rain = np.zeros(points.shape[0])
    for x, y, r, peak in events:
        d2 = (points[:, 0] - x) ** 2 + (points[:, 1] - y) ** 2
        rain += peak * np.exp(-d2 / (2 * r * r))
    ppt = rain[to_cells]
    irrigated = []
    if config.irrigation_enabled and sm_prev is not None:
        codes = field_lc_codes(layout, config.calendar, day)
        fid = layout.field_id
        sums = np.bincount(fid.ravel(), weights=sm_prev.ravel(), minlength=layout.n_fields)
        counts = np.bincount(fid.ravel(), minlength=layout.n_fields)
        means = sums / counts
        dose = np.zeros(layout.n_fields)
        for k, crop in enumerate(layout.crops):
            rule = config.irrigation.get(crop)
            if codes[k] != BARE and rule is not None and means[k] < rule.trigger:
                dose[k] = rule.dose
                irrigated.append(k)
        ppt = ppt + dose[fid]
    airtemp = air_temperature(config, day, points)[to_cells]
    return Weather(ppt=ppt, airtemp=airtemp, n_rain_events=len(events), irrigated_fields=tuple(irrigated))


# -- water balance ----------------------------------------------------------------


def field_wilting_points(config: SceneConfig, n_fields: int) -> np.ndarray:
    """Per-field wilting point, uniform within ``wilting_point +- wilting_point_spread``."""
    if config.wilting_point_spread == 0:
        return np.full(n_fields, config.wilting_point)
    u = rng_for(config.seed, "soil").uniform(-1.0, 1.0, size=n_fields)
    return config.wilting_point + config.wilting_point_spread * u


def _step(config: SceneConfig, sm_prev, ppt, lai, airtemp, wp=None):
    wp = config.wilting_point if wp is None else wp
    phi = config.porosity
    wet = (sm_prev - wp) / (phi - wp)
    temp_factor = np.maximum(0.0, 1.0 + config.et_temp_sensitivity * (airtemp - 295.0))
    et = (config.et_bare + config.et_per_lai * lai) * temp_factor * wet
    sm = sm_prev + config.infiltration * ppt - config.drainage * (sm_prev - wp) - et
    sm = np.clip(sm, wp, phi)
    lst = airtemp + config.lst_dryness_gain * (1.0 - sm / phi) - config.lst_lai_cooling * lai
    return sm, lst


def step_water_balance(
    sm_prev: Raster, ppt: Raster, lai: Raster, airtemp, config: SceneConfig = SceneConfig(), wilting_point=None
) -> tuple[Raster, Raster]:
    """One daily bucket update; returns ``(SM, LST)`` for ``sm_prev.day + 1``.

    ``wilting_point`` may be a per-cell array (default: the config value).
    """
    shapes = {r.values.shape for r in (sm_prev, ppt, lai)}
    if len(shapes) != 1 or len({r.resolution_m for r in (sm_prev, ppt, lai)}) != 1:
        raise DimensionError("SM, PPT and LAI rasters must share one geometry")
    airtemp = np.broadcast_to(np.asarray(airtemp, dtype=float), sm_prev.values.shape)
    sm, lst = _step(config, sm_prev.values, ppt.values, lai.values, airtemp, wilting_point)
    day = ppt.day
    return Raster(Variable.SM, sm_prev.resolution_m, day, sm), Raster(Variable.LST, sm_prev.resolution_m, day, lst)


# -- scene ---------------------------------------------------------------------

_TRUTH_VARS = (Variable.SM, Variable.LST, Variable.LAI, Variable.PPT, Variable.LC)


@dataclass(eq=False)
class Scene:
    """Generated (or loaded) scene.

    ``truth`` holds the noise-free 1 km fields, ``observed`` the noisy 1 km
    LST/PPT (daily) and LAI (NaN except on observation days), and
    ``coarse_sm`` the noisy 10 km SM (NaN except on observation days).
    Arrays are indexed ``[day - 1, row, col]``.
    """

    config: SceneConfig
    layout: FieldLayout
    truth: dict
    observed: dict
    coarse_sm: np.ndarray
    coarse_sm_truth: np.ndarray
    training_pixels: dict
    fine: dict = field(default_factory=dict)
    rain_event_counts: Optional[np.ndarray] = None
    irrigation_counts: Optional[np.ndarray] = None

    @property
    def n_days(self) -> int:
        return self.coarse_sm.shape[0]

    @property
    def fine_geometry(self) -> GridGeometry:
        return self.config.geometry(self.config.fine_m)

    @property
    def mid_geometry(self) -> GridGeometry:
        return self.config.geometry(self.config.mid_m)

    @property
    def coarse_geometry(self) -> GridGeometry:
        return self.config.geometry(self.config.coarse_m)

    @property
    def coarse_factor(self) -> int:
        return self.config.coarse_m // self.config.mid_m

    @property
    def fine_factor(self) -> int:
        return self.config.mid_m // self.config.fine_m

    @property
    def n_pixels(self) -> int:
        return self.mid_geometry.n_pixels

    def coarse_available(self, day: int) -> bool:
        return 1 <= day <= self.n_days and bool(np.isfinite(self.coarse_sm[day - 1, 0, 0]))

    @property
    def coarse_days(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.coarse_sm[:, 0, 0])) + 1

    @property
    def lai_obs_days(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.observed[Variable.LAI][:, 0, 0])) + 1

    def raster(self, variable: Variable, day: int, kind: str = "truth", resolution_m: Optional[int] = None) -> Raster:
        variable = Variable(variable)
        res = resolution_m or self.config.mid_m
        if res == self.config.fine_m:
            if variable is Variable.LC:
                return landcover(self.layout, self.config.calendar, day, res)
            if variable is Variable.LAI:
                return Raster(variable, res, day, field_lai(self.layout, self.config.calendar, day)[self.layout.field_id])
            if day not in self.fine:
                raise KeyError(f"fine {variable.value} for day {day} was not kept")
            return Raster(variable, res, day, self.fine[day][variable])
        if res == self.config.coarse_m:
            if variable is not Variable.SM:
                raise KeyError("only SM is held at the coarse resolution")
            vals = self.coarse_sm[day - 1] if kind == "observed" else self.coarse_sm_truth[day - 1]
            if not np.all(np.isfinite(vals)):
                raise KeyError(f"no coarse SM observation on day {day}")
            return Raster(variable, res, day, vals)
        src = self.truth if kind == "truth" else self.observed
        if variable not in src:
            raise KeyError(f"no {kind} {variable.value} at {res} m")
        vals = src[variable][day - 1]
        if not np.all(np.isfinite(vals)):
            raise KeyError(f"no {kind} {variable.value} on day {day}")
        return Raster(variable, res, day, vals)

    @cached_property
    def lai_filled(self) -> np.ndarray:
        """Observed LAI forward-filled to every day (see :func:`featurize.forward_fill_lai`)."""
        from .featurize import forward_fill_days

        return forward_fill_days(self.observed[Variable.LAI])

    def vegetated_subpixels(self, day: int) -> np.ndarray:
        """Count of vegetated fine cells inside each 1 km pixel."""
        veg = (field_lc_codes(self.layout, self.config.calendar, day)[self.layout.field_id] != BARE).astype(float)
        f = self.fine_factor
        return block_mean(veg, f) * f * f if f > 1 else veg

    def with_arrays(self, **changes) -> "Scene":
        return replace(self, **changes)


def _noise_seed(config: SceneConfig, variable: Variable, res: int, day: int) -> int:
    return derive_seed(config.seed, "noise", variable.value, res, day)


def _keep_fine(config: SceneConfig, day: int) -> bool:
    k = config.keep_fine_days
    if k is None:
        return False
    if k == "all":
        return True
    return day in k


def build_scene(config: SceneConfig = SceneConfig()) -> Scene:
    """Run the daily simulation and assemble the multi-resolution scene."""
    layout = generate_layout(config)
    n_days = config.n_days
    ff = config.mid_m // config.fine_m
    cf = config.coarse_m // config.mid_m
    nm = config.geometry(config.mid_m).size
    nc = config.geometry(config.coarse_m).size

    truth = {v: np.empty((n_days, nm, nm)) for v in _TRUTH_VARS}
    coarse_truth = np.empty((n_days, nc, nc))
    fine_kept: dict = {}
    rain_counts = np.zeros(n_days, dtype=np.int64)
    irr_counts = np.zeros(n_days, dtype=np.int64)

    def mid(a):
        return block_mean(a, ff) if ff > 1 else a.copy()

    init = config.initial_sm if config.initial_sm is not None else 0.5 * (config.wilting_point + config.porosity)
    sm = np.full((layout.size, layout.size), float(init))
    fid = layout.field_id
    wp = field_wilting_points(config, layout.n_fields)[fid]
    for day in range(1, n_days + 1):
        codes = field_lc_codes(layout, config.calendar, day)
        lai = field_lai(layout, config.calendar, day)[fid]
        weather = generate_weather(config, day, layout, sm)
        sm, lst = _step(config, sm, weather.ppt, lai, weather.airtemp, wp)
        lc = codes[fid]
        i = day - 1
        truth[Variable.SM][i] = mid(sm)
        truth[Variable.LST][i] = mid(lst)
        truth[Variable.LAI][i] = mid(lai)
        truth[Variable.PPT][i] = mid(weather.ppt)
        truth[Variable.LC][i] = block_majority(lc, ff) if ff > 1 else lc
        coarse_truth[i] = block_mean(truth[Variable.SM][i], cf) if cf > 1 else truth[Variable.SM][i]
        rain_counts[i] = weather.n_rain_events
        irr_counts[i] = len(weather.irrigated_fields)
        if _keep_fine(config, day):
            fine_kept[day] = {Variable.SM: sm.copy(), Variable.LST: lst.copy(), Variable.PPT: weather.ppt.copy()}

    observed = {}
    for var, sd in ((Variable.LST, config.noise_lst), (Variable.PPT, config.noise_ppt)):
        arr = np.empty_like(truth[var])
        for i in range(n_days):
            r = Raster(var, config.mid_m, i + 1, truth[var][i])
            arr[i] = add_gaussian_noise(r, sd, _noise_seed(config, var, config.mid_m, i + 1)).values
        observed[var] = arr
    lai_obs = np.full_like(truth[Variable.LAI], np.nan)
    for i in range(0, n_days, config.lai_obs_interval):
        r = Raster(Variable.LAI, config.mid_m, i + 1, truth[Variable.LAI][i])
        lai_obs[i] = add_gaussian_noise(r, config.noise_lai, _noise_seed(config, Variable.LAI, config.mid_m, i + 1)).values
    observed[Variable.LAI] = lai_obs

    coarse = np.full_like(coarse_truth, np.nan)
    for i in range(0, n_days, config.coarse_sm_cadence_days):
        r = Raster(Variable.SM, config.coarse_m, i + 1, coarse_truth[i])
        coarse[i] = add_gaussian_noise(r, config.noise_sm, _noise_seed(config, Variable.SM, config.coarse_m, i + 1)).values

    for a in list(truth.values()) + list(observed.values()) + [coarse, coarse_truth]:
        a.setflags(write=False)

    return Scene(
        config=config,
        layout=layout,
        truth=truth,
        observed=observed,
        coarse_sm=coarse,
        coarse_sm_truth=coarse_truth,
        training_pixels=select_training_pixels(config),
        fine=fine_kept,
        rain_event_counts=rain_counts,
        irrigation_counts=irr_counts,
    )


def select_training_pixels(config: SceneConfig) -> dict:
    """Uniform draws without replacement from the 1 km grid, one set per size."""
    n = config.geometry(config.mid_m).n_pixels
    out = {}
    for k in config.n_training:
        if not 1 <= k <= n:
            raise ConfigError(f"cannot select {k} training pixels from {n}")
        idx = np.sort(rng_for(config.seed, "selection", k).choice(n, size=k, replace=False))
        out[int(k)] = idx
    return out


# -- persistence -------------------------------------------------------------------

MANIFEST_FORMAT = "tdr-manifest"


def _rel(variable: Variable, res: int, day: int, kind: str) -> str:
    return f"{kind}/{variable.value}_{res}m/d{day:04d}.csv"


def save_scene(scene: Scene, out_dir: Union[str, os.PathLike]) -> Path:
    """Write every raster as TDR-CSV and a ``manifest.json`` index; returns the manifest path."""
    out = Path(out_dir)
    cfg = scene.config
    truth_map: dict = {}
    obs_map: dict = {}

    def put(mapping, r: Raster, kind: str):
        rel = _rel(r.variable, r.resolution_m, r.day, kind)
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            write_tdr(path, r)
        except OSError as exc:
            raise OSError(f"writing {path}: {exc}") from exc
        mapping.setdefault(r.variable.value, {}).setdefault(str(r.resolution_m), {})[str(r.day)] = rel

    for day in range(1, scene.n_days + 1):
        for var in _TRUTH_VARS:
            put(truth_map, scene.raster(var, day, "truth"), "truth")
        put(obs_map, scene.raster(Variable.LST, day, "observed"), "observed")
        put(obs_map, scene.raster(Variable.PPT, day, "observed"), "observed")
        if np.isfinite(scene.observed[Variable.LAI][day - 1, 0, 0]):
            put(obs_map, scene.raster(Variable.LAI, day, "observed"), "observed")
        if scene.coarse_available(day):
            put(obs_map, scene.raster(Variable.SM, day, "observed", cfg.coarse_m), "observed")
            put(truth_map, scene.raster(Variable.SM, day, "truth", cfg.coarse_m), "truth")
        if day in scene.fine:
            for var in (Variable.SM, Variable.LST, Variable.PPT):
                put(truth_map, scene.raster(var, day, "truth", cfg.fine_m), "truth")
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "config": cfg.to_dict(),
        "layout": scene.layout.to_dict(),
        "training_pixels": {str(k): v.tolist() for k, v in sorted(scene.training_pixels.items())},
        "truth": truth_map,
        "observed": obs_map,
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_scene(manifest_path: Union[str, os.PathLike], order: Optional[Sequence[int]] = None) -> Scene:
    """Rebuild a :class:`Scene` from a manifest written by :func:`save_scene`.

    ``order`` optionally permutes the sequence in which raster files are
    read (used to check that loading order does not matter).
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        m = json.load(fh)
    if m.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{manifest_path} is not a scene manifest")
    cfg = SceneConfig.from_dict(m["config"])
    layout = FieldLayout.from_dict(m["layout"])
    base = manifest_path.parent
    n_days = cfg.n_days
    nm = cfg.geometry(cfg.mid_m).size
    nc = cfg.geometry(cfg.coarse_m).size
    truth = {v: np.full((n_days, nm, nm), np.nan) for v in _TRUTH_VARS}
    observed = {v: np.full((n_days, nm, nm), np.nan) for v in (Variable.LST, Variable.PPT, Variable.LAI)}
    coarse = np.full((n_days, nc, nc), np.nan)
    coarse_truth = np.full((n_days, nc, nc), np.nan)
    fine: dict = {}

    jobs = []
    for kind in ("truth", "observed"):
        for var, by_res in m[kind].items():
            for res, by_day in by_res.items():
                for day, rel in by_day.items():
                    jobs.append((kind, Variable(var), int(res), int(day), rel))
    jobs.sort(key=lambda j: (j[0], j[1].value, j[2], j[3]))
    if order is not None:
        jobs = [jobs[i] for i in order]
    for kind, var, res, day, rel in jobs:
        path = base / rel
        try:
            r = read_tdr(path)
        except OSError as exc:
            raise OSError(f"reading {path}: {exc}") from exc
        if (r.variable, r.resolution_m, r.day) != (var, res, day):
            raise DimensionError(f"{path}: header does not match manifest entry")
        if res == cfg.coarse_m:
            (coarse if kind == "observed" else coarse_truth)[day - 1] = r.values
        elif res == cfg.fine_m:
            fine.setdefault(day, {})[var] = r.values.copy()
        elif kind == "truth":
            truth[var][day - 1] = r.values
        else:
            observed[var][day - 1] = r.values
    training = {int(k): np.asarray(v, dtype=np.int64) for k, v in m["training_pixels"].items()}
    return Scene(cfg, layout, truth, observed, coarse, coarse_truth, training, fine)


def scene_from_path(path: Union[str, os.PathLike]) -> Scene:
    """Load a saved scene (manifest) or build one from a scene-config JSON."""
    with open(path) as fh:
        d = json.load(fh)
    if isinstance(d, dict) and d.get("format") == MANIFEST_FORMAT:
        return load_scene(path)
    return build_scene(SceneConfig.from_dict(d))
