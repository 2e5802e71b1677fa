"""Multi-resolution raster data model.

A :class:`Raster` is one variable at one resolution on one day.  Values are
stored row-major in a read-only ``float64`` array of shape
``(height, width)``.  Coarsening is a plain block mean (block majority for
land cover), and observation noise is iid Gaussian added at the target
resolution and clamped to physical bounds.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError
from .seeding import rng_from_seed

SM_MAX = 0.6

#: LC codes
BARE, CORN, COTTON = 0, 1, 2
LC_CODES = (BARE, CORN, COTTON)


class Variable(str, enum.Enum):
    SM = "SM"
    LST = "LST"
    LAI = "LAI"
    PPT = "PPT"
    LC = "LC"


@dataclass(frozen=True)
class GridGeometry:
    """Square region of side ``extent_km`` sampled at ``resolution_m``."""

    extent_km: float = 50.0
    resolution_m: int = 1000
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.resolution_m <= 0:
            raise ValueError("resolution_m must be positive")
        extent_m = self.extent_km * 1000
        if not float(extent_m).is_integer() or int(extent_m) % self.resolution_m:
            raise DimensionError(
                f"extent {self.extent_km} km is not a multiple of {self.resolution_m} m"
            )

    @property
    def size(self) -> int:
        return int(round(self.extent_km * 1000)) // self.resolution_m

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size, self.size)

    @property
    def n_pixels(self) -> int:
        return self.size * self.size

    def coarsen(self, factor: int) -> "GridGeometry":
        return GridGeometry(self.extent_km, self.resolution_m * factor, self.origin)


def pixel_centroid(geom: GridGeometry, row: int, col: int) -> tuple[float, float]:
    """Centroid ``(X, Y)`` in km of cell ``(row, col)``; X runs along columns."""
    n = geom.size
    if not (0 <= row < n and 0 <= col < n):
        raise IndexError(f"cell ({row}, {col}) outside {n}x{n} grid")
    step = geom.resolution_m / 1000.0
    x0, y0 = geom.origin
    return (x0 + (col + 0.5) * step, y0 + (row + 0.5) * step)


def centroid_grids(geom: GridGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`pixel_centroid` over the whole grid, each ``(n, n)``."""
    n = geom.size
    step = geom.resolution_m / 1000.0
    centres = (np.arange(n) + 0.5) * step
    xs = np.broadcast_to(geom.origin[0] + centres[None, :], (n, n))
    ys = np.broadcast_to(geom.origin[1] + centres[:, None], (n, n))
    return np.array(xs), np.array(ys)


@dataclass(frozen=True, eq=False)
class Raster:
    variable: Variable
    resolution_m: int
    day: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variable", Variable(self.variable))
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2 or vals.size == 0:
            raise DimensionError(f"raster values must be a non-empty 2-D array, got shape {vals.shape}")
        if self.resolution_m <= 0:
            raise ValueError("resolution_m must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        _check_bounds(self.variable, vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "Raster":
        return Raster(self.variable, self.resolution_m, self.day, values)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.variable == other.variable
            and self.resolution_m == other.resolution_m
            and self.day == other.day
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def _check_bounds(variable: Variable, vals: np.ndarray) -> None:
    if not np.all(np.isfinite(vals)):
        raise DataError(f"{variable.value} raster contains non-finite values")
    if variable is Variable.SM and (vals.min() < 0.0 or vals.max() > SM_MAX):
        raise DataError(f"SM values outside [0, {SM_MAX}]")
    if variable is Variable.LAI and vals.min() < 0.0:
        raise DataError("LAI values must be non-negative")
    if variable is Variable.LC and not np.all(np.isin(vals, LC_CODES)):
        raise DataError("LC values must be one of 0, 1, 2")


def block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    """Mean over ``factor x factor`` blocks of the last two axes."""
    if factor <= 1:
        raise ValueError(f"aggregation factor must be > 1, got {factor}")
    *lead, h, w = values.shape
    if h % factor or w % factor:
        raise DimensionError(f"{h}x{w} grid is not divisible by factor {factor}")
    blocks = values.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1))


def block_majority(codes: np.ndarray, factor: int) -> np.ndarray:
    """Most frequent code per block of the last two axes; ties go to the lowest code."""
    if factor <= 1:
        raise ValueError(f"aggregation factor must be > 1, got {factor}")
    *lead, h, w = codes.shape
    if h % factor or w % factor:
        raise DimensionError(f"{h}x{w} grid is not divisible by factor {factor}")
    blocks = codes.reshape(*lead, h // factor, factor, w // factor, factor)
    counts = np.stack([(blocks == c).sum(axis=(-3, -1)) for c in LC_CODES], axis=0)
    # argmax returns the first maximum, i.e. the lowest code on ties
    return np.asarray(LC_CODES, dtype=np.float64)[counts.argmax(axis=0)]


def aggregate_block_mean(fine: Raster, factor: int) -> Raster:
    """Coarsen ``fine`` by an integer ``factor`` (majority vote for LC)."""
    if fine.variable is Variable.LC:
        vals = block_majority(fine.values, factor)
    else:
        vals = block_mean(fine.values, factor)
    return Raster(fine.variable, fine.resolution_m * factor, fine.day, vals)


def clamp_physical(variable: Variable, values: np.ndarray) -> np.ndarray:
    if variable is Variable.SM:
        return np.clip(values, 0.0, SM_MAX)
    if variable in (Variable.PPT, Variable.LAI):
        return np.maximum(values, 0.0)
    return values


def add_gaussian_noise(r: Raster, sd: float, seed: int) -> Raster:
    """Add iid N(0, sd^2) noise drawn from PCG64(seed), then clamp to physical bounds."""
    if r.variable is Variable.LC:
        raise ValueError("land cover is categorical and is never noised")
    if not sd >= 0:
        raise ValueError(f"noise sd must be >= 0, got {sd}")
    if sd == 0:
        return r
    noise = rng_from_seed(seed).normal(0.0, sd, size=r.values.shape)
    return r.with_values(clamp_physical(r.variable, r.values + noise))


# -- TDR-CSV -----------------------------------------------------------------

TDR_MAGIC = "#tdr"
TDR_VERSION = "v1"


def format_tdr(r: Raster) -> str:
    header = f"{TDR_MAGIC},{TDR_VERSION},{r.variable.value},{r.resolution_m},{r.day},{r.height},{r.width}"
    lines = [header]
    for row in r.values.tolist():
        lines.append(",".join(map(repr, row)))
    return "\n".join(lines) + "\n"


def write_tdr(path: str | os.PathLike, r: Raster) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_tdr(r))


def parse_tdr(text: str, source: str = "<string>") -> Raster:
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{source}: empty TDR-CSV file")
    head = lines[0].split(",")
    if len(head) != 7 or head[0] != TDR_MAGIC or head[1] != TDR_VERSION:
        raise DataError(f"{source}: bad TDR-CSV header {lines[0]!r}")
    variable, res, day, height, width = head[2], int(head[3]), int(head[4]), int(head[5]), int(head[6])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != height:
        raise DimensionError(f"{source}: expected {height} rows, found {len(body)}")
    vals = np.empty((height, width), dtype=np.float64)
    for i, ln in enumerate(body):
        row = [float(tok) for tok in ln.split(",")]
        if len(row) != width:
            raise DimensionError(f"{source}: row {i} has {len(row)} values, expected {width}")
        vals[i] = row
    return Raster(Variable(variable), res, day, vals)


def read_tdr(path: str | os.PathLike) -> Raster:
    with open(path, encoding="ascii") as fh:
        return parse_tdr(fh.read(), source=os.fspath(path))
