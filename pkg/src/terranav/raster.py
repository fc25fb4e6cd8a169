"""Elevation and image rasters, the ``.demr`` container, and grid sampling.

World frame is x east, y north, z up. A :class:`DemGrid` stores its
elevations with row index increasing northward and column index increasing
eastward; ``origin_x``/``origin_y`` are the world coordinates of the centre of
cell (0, 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import OutOfExtentError, RasterFormatError

__all__ = [
    "DemGrid",
    "GradientField",
    "RasterImage",
    "load_dem",
    "save_dem",
    "load_image",
    "save_image",
    "gradient_field",
    "bilinear_sample",
    "crop_window",
    "sample_surface",
]


def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DemGrid:
    """Georeferenced elevation raster.

    Parameters
    ----------
    elevations : array_like, shape (height, width)
        Elevations in metres. Row 0 is the southern edge.
    cell_size : float
        Cell spacing in metres.
    origin_x, origin_y : float
        World coordinates of the centre of cell (0, 0).
    """

    elevations: np.ndarray
    cell_size: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        z = _frozen(self.elevations)
        if z.ndim != 2:
            raise ValueError("elevations must be a 2-D array")
        if z.shape[0] < 2 or z.shape[1] < 2:
            raise ValueError(f"grid must be at least 2x2, got {z.shape[1]}x{z.shape[0]}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if not np.all(np.isfinite(z)):
            raise ValueError("elevations must be finite")
        object.__setattr__(self, "elevations", z)
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "origin_x", float(self.origin_x))
        object.__setattr__(self, "origin_y", float(self.origin_y))

    @property
    def width(self):
        return self.elevations.shape[1]

    @property
    def height(self):
        return self.elevations.shape[0]

    @property
    def extent(self):
        """(xmin, xmax, ymin, ymax) of the cell-centre lattice."""
        return (
            self.origin_x,
            self.origin_x + (self.width - 1) * self.cell_size,
            self.origin_y,
            self.origin_y + (self.height - 1) * self.cell_size,
        )

    def world_to_index(self, x, y):
        """Fractional (col, row) of world coordinates."""
        col = (np.asarray(x, dtype=float) - self.origin_x) / self.cell_size
        row = (np.asarray(y, dtype=float) - self.origin_y) / self.cell_size
        return col, row

    def index_to_world(self, col, row):
        return (
            self.origin_x + np.asarray(col, dtype=float) * self.cell_size,
            self.origin_y + np.asarray(row, dtype=float) * self.cell_size,
        )

    def contains(self, x, y):
        xmin, xmax, ymin, ymax = self.extent
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)

    def equals(self, other):
        """Bit-exact equality of geometry and elevations."""
        return (
            isinstance(other, DemGrid)
            and self.cell_size == other.cell_size
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and self.elevations.shape == other.elevations.shape
            and np.array_equal(self.elevations, other.elevations)
        )

    def as_image(self):
        """Elevations as a non-negative :class:`RasterImage` (minimum shifted to 0)."""
        return RasterImage(self.elevations - self.elevations.min())

    @cached_property
    def spline_coefficients(self):
        # cubic B-spline prefilter, reused by every resampling call on this grid
        return ndimage.spline_filter(self.elevations, order=3, mode="nearest")


@dataclass(frozen=True, eq=False)
class GradientField:
    """Elevation slopes ``p = dV/dx`` and ``q = dV/dy`` (dimensionless)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p, q = _frozen(self.p), _frozen(self.q)
        if p.shape != q.shape:
            raise ValueError("p and q must have the same shape")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("gradients must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Single-channel, non-negative intensity image, indexed ``pixels[row, col]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        if px.size and px.min() < 0:
            raise ValueError("pixels must be non-negative")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def shape(self):
        return self.pixels.shape


# --------------------------------------------------------------------------
# container I/O

def _sidecar(path):
    return Path(str(path) + ".json")


def _write_container(path, values, meta):
    path = Path(path)
    payload = np.ascontiguousarray(values, dtype="<f4")
    # sidecar first so a reader never sees a payload without metadata
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=2)
    with open(path, "wb") as fh:
        fh.write(payload.tobytes())


def _read_container(path, kind):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster file not found: {path}")
    side = _sidecar(path)
    if not side.exists():
        raise FileNotFoundError(f"raster sidecar not found: {side}")
    with open(side) as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RasterFormatError(f"malformed sidecar {side}: {exc}") from None
    for key in ("width", "height"):
        if key not in meta:
            raise RasterFormatError(f"sidecar missing key {key!r}")
    if kind is not None and meta.get("kind", kind) != kind:
        raise RasterFormatError(f"expected kind {kind!r}, found {meta.get('kind')!r}")
    w, h = int(meta["width"]), int(meta["height"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != w * h:
        raise RasterFormatError(
            f"payload length mismatch: header says {w}x{h}={w * h} values, "
            f"payload has {raw.size}"
        )
    values = raw.astype(np.float64).reshape(h, w)
    if not np.all(np.isfinite(values)):
        raise RasterFormatError("payload contains non-finite values")
    return values, meta


def save_dem(grid, path):
    """Write ``grid`` to ``path`` (``.demr``) plus a ``.demr.json`` sidecar.

    Elevations are stored as little-endian float32, so the round trip is
    bit-exact for grids whose elevations are float32-representable (every grid
    produced by :func:`load_dem` is).
    """
    meta = {
        "width": grid.width,
        "height": grid.height,
        "cell_size_m": grid.cell_size,
        "origin_x_m": grid.origin_x,
        "origin_y_m": grid.origin_y,
        "kind": "dem",
    }
    _write_container(path, grid.elevations, meta)


def load_dem(path):
    values, meta = _read_container(path, "dem")
    try:
        return DemGrid(
            values,
            cell_size=float(meta["cell_size_m"]),
            origin_x=float(meta.get("origin_x_m", 0.0)),
            origin_y=float(meta.get("origin_y_m", 0.0)),
        )
    except KeyError as exc:
        raise RasterFormatError(f"sidecar missing key {exc.args[0]!r}") from None


def save_image(image, path):
    meta = {
        "width": image.width,
        "height": image.height,
        "cell_size_m": 1.0,
        "origin_x_m": 0.0,
        "origin_y_m": 0.0,
        "kind": "image",
    }
    _write_container(path, image.pixels, meta)


def load_image(path):
    """Load a raster container as an image; DEM containers are accepted too."""
    values, meta = _read_container(path, None)
    if meta.get("kind") == "dem":
        values = values - values.min()
    return RasterImage(values)


# --------------------------------------------------------------------------
# grid operations

def gradient_field(grid):
    """Central-difference slopes (one-sided at the borders), in metres per metre."""
    q, p = np.gradient(grid.elevations, grid.cell_size)
    return GradientField(p, q)


def _check_inside(grid, x, y):
    if not np.all(grid.contains(x, y)):
        xmin, xmax, ymin, ymax = grid.extent
        raise OutOfExtentError(
            f"query outside grid extent x[{xmin}, {xmax}] y[{ymin}, {ymax}]"
        )


def bilinear_sample(grid, x, y):
    """Bilinear interpolation of the grid at world coordinates ``(x, y)``.

    Accepts scalars or arrays; raises :class:`OutOfExtentError` when any query
    lies outside the cell-centre lattice.
    """
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    _check_inside(grid, x, y)
    col, row = grid.world_to_index(x, y)
    col = np.atleast_1d(col)
    row = np.atleast_1d(row)
    c0 = np.clip(np.floor(col).astype(int), 0, grid.width - 2)
    r0 = np.clip(np.floor(row).astype(int), 0, grid.height - 2)
    fc = col - c0
    fr = row - r0
    z = grid.elevations
    out = (
        z[r0, c0] * (1 - fc) * (1 - fr)
        + z[r0, c0 + 1] * fc * (1 - fr)
        + z[r0 + 1, c0] * (1 - fc) * fr
        + z[r0 + 1, c0 + 1] * fc * fr
    )
    return float(out[0]) if scalar else out.reshape(np.shape(col))


def sample_surface(grid, x, y):
    """Cubic-spline elevation at world coordinates; used to resample the DEM
    onto camera pixel lattices finer than the grid.

    Queries must lie inside the extent.
    """
    _check_inside(grid, x, y)
    col, row = grid.world_to_index(x, y)
    coords = np.stack([np.asarray(row, float), np.asarray(col, float)])
    return ndimage.map_coordinates(
        grid.spline_coefficients, coords, order=3, mode="nearest", prefilter=False
    )


def crop_window(grid, center_x, center_y, size):
    """``size`` x ``size`` sub-grid around the cell nearest ``(center_x, center_y)``."""
    size = int(size)
    if size < 2:
        raise ValueError("window size must be at least 2 cells")
    col, row = grid.world_to_index(center_x, center_y)
    c0 = int(np.floor(col - (size - 1) / 2 + 0.5))
    r0 = int(np.floor(row - (size - 1) / 2 + 0.5))
    if c0 < 0 or r0 < 0 or c0 + size > grid.width or r0 + size > grid.height:
        raise OutOfExtentError(
            f"window of {size} cells at ({center_x}, {center_y}) exceeds grid extent"
        )
    ox, oy = grid.index_to_world(c0, r0)
    return DemGrid(
        grid.elevations[r0:r0 + size, c0:c0 + size],
        cell_size=grid.cell_size,
        origin_x=float(ox),
        origin_y=float(oy),
    )
