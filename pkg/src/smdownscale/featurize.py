"""Feature matrices for the spatial, spatio-temporal and gap-masked set-ups.

Spatial rows (one per pixel and day)::

    LST_t, PPT_t, LAI_t, LC_t, SM10_t, X, Y

Spatio-temporal rows::

    LST_{t-D1..t}, LAI_{t-D2..t}, PPT_{t-D3..t}, SM10_t, X, Y [, LC_t]

LAI is observed weekly and forward-filled.  A :class:`GapMask` removes
withheld LST columns from both the training and the inference rows, so
the model for a gap scenario is trained without them.  Rows are emitted
in (pixel, day) order.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import AvailabilityError, SchemaError
from .rastergrid import Variable, centroid_grids
from .seeding import rng_for

SPATIAL = "spatial"
SPATIOTEMPORAL = "spatiotemporal"
DEFAULT_LAG = 7
DEFAULT_HISTORY = 365


# -- LAI forward fill ------------------------------------------------------------


def forward_fill_lai(observations: Union[Mapping[int, float], Sequence[tuple[int, float]]], n_days: int) -> np.ndarray:
    """Daily series for days ``1..n_days`` from sparse ``{day: value}`` observations.

    Each day takes the latest observation on or before it; days before
    the first observation take the first value.
    """
    items = list(observations.items()) if isinstance(observations, Mapping) else list(observations)
    if not items:
        raise ValueError("no LAI observations to fill from")
    days = [int(d) for d, _ in items]
    if any(b <= a for a, b in zip(days, days[1:])):
        raise ValueError("observation days must be strictly increasing")
    obs_days = np.asarray(days)
    vals = np.asarray([v for _, v in items], dtype=np.float64)
    q = np.arange(1, n_days + 1)
    idx = np.searchsorted(obs_days, q, side="right") - 1
    return vals[np.maximum(idx, 0)]


def forward_fill_days(stack: np.ndarray) -> np.ndarray:
    """Forward-fill a ``(days, ...)`` stack whose unobserved days are all-NaN slices."""
    observed = np.flatnonzero(np.isfinite(stack.reshape(stack.shape[0], -1)).all(axis=1))
    if observed.size == 0:
        raise ValueError("no observed days to fill from")
    idx = np.searchsorted(observed, np.arange(stack.shape[0]), side="right") - 1
    out = stack[observed[np.maximum(idx, 0)]]
    out.setflags(write=False)
    return out


# -- schema --------------------------------------------------------------------


@dataclass(frozen=True)
class GapMask:
    """LST availability ``u`` for lags ``D1, D1-1, ..., 0``; ``False`` = withheld."""

    u: tuple[bool, ...]

    @classmethod
    def identity(cls, D1: int) -> "GapMask":
        return cls((True,) * (D1 + 1))

    @classmethod
    def consecutive(cls, D1: int, gaps: int) -> "GapMask":
        """Withhold LST on the day of interest and the ``gaps - 1`` days before it."""
        if not 0 <= gaps <= D1 + 1:
            raise ValueError(f"gaps must be in [0, {D1 + 1}]")
        return cls(tuple(lag >= gaps for lag in range(D1, -1, -1)))

    def available(self, lag: int) -> bool:
        return self.u[len(self.u) - 1 - lag]


@dataclass(frozen=True)
class FeatureSchema:
    mode: str = SPATIOTEMPORAL
    D1: int = DEFAULT_LAG
    D2: int = DEFAULT_LAG
    D3: int = DEFAULT_LAG
    include_lc: bool = True
    mask: Optional[GapMask] = None

    def __post_init__(self):
        if self.mode not in (SPATIAL, SPATIOTEMPORAL):
            raise SchemaError(f"unknown feature mode {self.mode!r}")
        if min(self.D1, self.D2, self.D3) < 0:
            raise SchemaError("lag windows must be non-negative")
        if self.mask is not None:
            if self.mode != SPATIOTEMPORAL:
                raise SchemaError("gap masks apply to spatio-temporal rows only")
            if len(self.mask.u) != self.D1 + 1:
                raise SchemaError(f"mask covers {len(self.mask.u)} days but D1 + 1 = {self.D1 + 1}")

    @classmethod
    def spatial(cls, include_lc: bool = True) -> "FeatureSchema":
        return cls(SPATIAL, 0, 0, 0, include_lc)

    def with_mask(self, mask: Optional[GapMask]) -> "FeatureSchema":
        return replace(self, mask=mask)

    @property
    def max_lag(self) -> int:
        return max(self.D1, self.D2, self.D3) if self.mode == SPATIOTEMPORAL else 0

    @property
    def columns(self) -> list[tuple[str, int]]:
        if self.mode == SPATIAL:
            cols = [("LST", 0), ("PPT", 0), ("LAI", 0)]
            if self.include_lc:
                cols.append(("LC", 0))
            return cols + [("SM10", 0), ("X", 0), ("Y", 0)]
        cols = [("LST", lag) for lag in range(self.D1, -1, -1) if self.mask is None or self.mask.available(lag)]
        cols += [("LAI", lag) for lag in range(self.D2, -1, -1)]
        cols += [("PPT", lag) for lag in range(self.D3, -1, -1)]
        cols += [("SM10", 0), ("X", 0), ("Y", 0)]
        if self.include_lc:
            cols.append(("LC", 0))
        return cols

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        out = []
        for var, lag in self.columns:
            if var in ("X", "Y"):
                out.append(var)
            else:
                out.append(f"{var}_t" if lag == 0 else f"{var}_t-{lag}")
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "D1": self.D1,
            "D2": self.D2,
            "D3": self.D3,
            "include_lc": self.include_lc,
            "mask": None if self.mask is None else [int(v) for v in self.mask.u],
            "columns": [list(c) for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        mask = None if d.get("mask") is None else GapMask(tuple(bool(v) for v in d["mask"]))
        return cls(d["mode"], d["D1"], d["D2"], d["D3"], d["include_lc"], mask)


SCENARIO_SIZES = {"BRT750": 750, "BRT30": 30, "BRTst": 30}


@dataclass(frozen=True)
class TrainingSelection:
    pixels: np.ndarray
    history_days: int = DEFAULT_HISTORY
    scenario: str = "BRTst"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64)
        if px.ndim != 1 or px.size == 0 or np.unique(px).size != px.size:
            raise ValueError("training pixels must be a non-empty set of distinct indices")
        object.__setattr__(self, "pixels", px)
        if self.history_days < 0:
            raise ValueError("history_days must be >= 0")

    @classmethod
    def for_scenario(cls, scene, scenario: str, history_days: Optional[int] = None) -> "TrainingSelection":
        if scenario not in SCENARIO_SIZES:
            raise ValueError(f"unknown scenario {scenario!r}")
        k = SCENARIO_SIZES[scenario]
        if k not in scene.training_pixels:
            raise AvailabilityError(f"scene has no {k}-pixel training selection")
        if history_days is None:
            history_days = DEFAULT_HISTORY if scenario == "BRTst" else 0
        return cls(scene.training_pixels[k], history_days, scenario)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    schema: FeatureSchema
    pixels: np.ndarray
    days: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path: Union[str, os.PathLike], targets: Optional[np.ndarray] = None) -> None:
        """Write rows with a named header, plus ``<path>.schema.json``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pixel", "day"] + self.schema.names + (["target"] if targets is not None else []))
            for i in range(self.n_rows):
                row = [int(self.pixels[i]), int(self.days[i])] + [repr(float(v)) for v in self.values[i]]
                if targets is not None:
                    row.append(repr(float(targets[i])))
                w.writerow(row)
        with open(f"{os.fspath(path)}.schema.json", "w") as fh:
            json.dump(self.schema.to_dict(), fh, indent=1)
            fh.write("\n")


# -- assembly ------------------------------------------------------------------


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1)


def _coarse_index(scene, pixels: np.ndarray) -> np.ndarray:
    n = scene.mid_geometry.size
    f = scene.coarse_factor
    rows, cols = np.divmod(pixels, n)
    return (rows // f) * (n // f) + cols // f


def _rows(scene, schema: FeatureSchema, pixels: np.ndarray, days: np.ndarray) -> np.ndarray:
    """Feature rows for every (pixel, day) pair, pixel-major."""
    pp = np.repeat(pixels, days.size)
    dd = np.tile(days, pixels.size)
    lst = _flat(scene.observed[Variable.LST])
    ppt = _flat(scene.observed[Variable.PPT])
    lai = _flat(scene.lai_filled)
    lc = _flat(scene.truth[Variable.LC])
    coarse = _flat(scene.coarse_sm)
    xs, ys = (g.ravel() for g in centroid_grids(scene.mid_geometry))
    sm10 = coarse[dd - 1, _coarse_index(scene, pp)]
    cols = []
    for var, lag in schema.columns:
        i = dd - 1 - lag
        if var == "LST":
            cols.append(lst[i, pp])
        elif var == "PPT":
            cols.append(ppt[i, pp])
        elif var == "LAI":
            cols.append(lai[i, pp])
        elif var == "LC":
            cols.append(lc[i, pp])
        elif var == "SM10":
            cols.append(sm10)
        elif var == "X":
            cols.append(xs[pp])
        elif var == "Y":
            cols.append(ys[pp])
    return np.column_stack(cols) if cols else np.empty((pp.size, 0))


def _check_day(scene, schema: FeatureSchema, t: int) -> None:
    if not 1 <= t <= scene.n_days:
        raise AvailabilityError(f"day {t} outside the scene")
    if t - schema.max_lag < 1:
        raise AvailabilityError(f"day {t} lacks {schema.max_lag} days of lag history")
    if not scene.coarse_available(t):
        raise AvailabilityError(f"no coarse SM on day {t}")


def _resolve(schema: FeatureSchema, mask: Optional[GapMask]) -> FeatureSchema:
    if mask is None:
        return schema
    if schema.mode != SPATIOTEMPORAL:
        raise SchemaError("gap masks apply to spatio-temporal rows only")
    if len(mask.u) != schema.D1 + 1:
        raise SchemaError(f"mask covers {len(mask.u)} days but D1 + 1 = {schema.D1 + 1}")
    return schema.with_mask(mask)


def _pixel_index(scene, n) -> int:
    if isinstance(n, tuple):
        r, c = n
        size = scene.mid_geometry.size
        if not (0 <= r < size and 0 <= c < size):
            raise IndexError(f"pixel {n} outside the grid")
        return r * size + c
    if not 0 <= n < scene.n_pixels:
        raise IndexError(f"pixel {n} outside the grid")
    return int(n)


def build_spatial_row(scene, n, t: int, include_lc: bool = True) -> np.ndarray:
    """Spatial feature row of pixel ``n`` (flat index or ``(row, col)``) on day ``t``."""
    schema = FeatureSchema.spatial(include_lc)
    _check_day(scene, schema, t)
    return _rows(scene, schema, np.array([_pixel_index(scene, n)]), np.array([t]))[0]


def build_st_row(scene, n, t: int, schema: FeatureSchema = FeatureSchema(), mask: Optional[GapMask] = None) -> np.ndarray:
    schema = _resolve(schema, mask)
    _check_day(scene, schema, t)
    return _rows(scene, schema, np.array([_pixel_index(scene, n)]), np.array([t]))[0]


def eligible_days(scene, schema: FeatureSchema, t: int, history_days: int) -> np.ndarray:
    lo = max(1, t - history_days, 1 + schema.max_lag)
    days = np.arange(lo, t + 1)
    return np.array([d for d in days if scene.coarse_available(int(d))], dtype=np.int64)


def assemble_training(
    scene,
    selection: TrainingSelection,
    schema: FeatureSchema,
    t: int,
    mask: Optional[GapMask] = None,
    insitu_noise: float = 0.0,
    noise_seed: int = 0,
) -> tuple[FeatureMatrix, np.ndarray]:
    """Training rows for the selected pixels over ``[t - history_days, t]``.

    Targets are the 1 km truth SM (optionally perturbed by ``insitu_noise``).
    """
    schema = _resolve(schema, mask)
    if not 1 <= t <= scene.n_days:
        raise AvailabilityError(f"day {t} outside the scene")
    if selection.pixels.max() >= scene.n_pixels:
        raise IndexError("training pixel outside the grid")
    days = eligible_days(scene, schema, t, selection.history_days)
    if days.size == 0:
        raise AvailabilityError(f"no eligible training days up to day {t}")
    X = _rows(scene, schema, selection.pixels, days)
    pp = np.repeat(selection.pixels, days.size)
    dd = np.tile(days, selection.pixels.size)
    y = _flat(scene.truth[Variable.SM])[dd - 1, pp]
    if insitu_noise > 0:
        y = np.clip(y + rng_for(noise_seed, "insitu", t).normal(0.0, insitu_noise, size=y.shape), 0.0, 0.6)
    return FeatureMatrix(X, schema, pp, dd), y


def assemble_inference(scene, schema: FeatureSchema, t: int, mask: Optional[GapMask] = None) -> FeatureMatrix:
    """One row per 1 km pixel on day ``t``."""
    schema = _resolve(schema, mask)
    _check_day(scene, schema, t)
    pixels = np.arange(scene.n_pixels)
    X = _rows(scene, schema, pixels, np.array([t]))
    return FeatureMatrix(X, schema, pixels, np.full(pixels.size, t))
