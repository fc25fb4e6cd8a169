"""Lambertian terrain shading, nadir camera geometry and ground sample distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAltitudeError, OutOfExtentError
from .raster import RasterImage, bilinear_sample, gradient_field

__all__ = [
    "IlluminationConfig",
    "ShadingParams",
    "CameraModel",
    "shade",
    "shade_elevations",
    "compute_s",
    "compute_gsd",
    "footprint_min_elevation",
    "nadir_footprint",
]


@dataclass(frozen=True)
class IlluminationConfig:
    """Sun model: intensity ``L``, azimuth (from +x, counter-clockwise) and
    elevation, both in radians."""

    intensity: float = 10.0
    azimuth: float = 0.0
    elevation: float = math.radians(60.0)

    def __post_init__(self):
        if not self.intensity >= 0:
            raise ValueError(f"intensity must be >= 0, got {self.intensity}")
        if not -math.pi <= self.azimuth <= math.pi:
            raise ValueError(f"azimuth must lie in [-pi, pi], got {self.azimuth}")
        if not 0 < self.elevation <= math.pi / 2:
            raise ValueError(f"elevation must lie in (0, pi/2], got {self.elevation}")

    @classmethod
    def from_degrees(cls, intensity, azimuth_deg, elevation_deg):
        return cls(float(intensity), math.radians(azimuth_deg), math.radians(elevation_deg))

    def to_dict(self):
        return {
            "intensity": self.intensity,
            "azimuth_deg": math.degrees(self.azimuth),
            "elevation_deg": math.degrees(self.elevation),
        }

    @classmethod
    def from_dict(cls, d):
        return cls.from_degrees(d["intensity"], d["azimuth_deg"], d["elevation_deg"])


@dataclass(frozen=True, eq=False)
class ShadingParams:
    """Surface reflectance (scalar or per-cell raster in [0, 1]).

    ``clamp`` zeroes facets facing away from the sun; disable it to keep the
    purely linear model for spectral experiments.
    """

    reflectance: float | np.ndarray = 1.0
    clamp: bool = True

    def __post_init__(self):
        r = np.asarray(self.reflectance, dtype=float)
        if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
            raise ValueError("reflectance values must lie in [0, 1]")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with square pixels and the principal point at the image centre.

    Defaults follow the simulated dataset: 36 mm focal length on a 36 mm
    sensor, 480 x 480 images.
    """

    focal_length: float = 36.0
    sensor_size: float = 36.0
    image_width: int = 480
    image_height: int = 480

    def __post_init__(self):
        if not self.focal_length > 0 or not self.sensor_size > 0:
            raise ValueError("focal_length and sensor_size must be positive")
        if self.image_width < 16 or self.image_height < 16:
            raise ValueError("image dimensions must be at least 16 pixels")

    @property
    def half_fov(self):
        """Half field of view ``atan(sensor / (2 f))`` in radians."""
        return math.atan(self.sensor_size / (2.0 * self.focal_length))

    @property
    def s(self):
        return compute_s(self)

    @property
    def focal_px(self):
        # the sensor spans the larger image dimension
        return self.s / (2.0 * math.tan(self.half_fov))

    @property
    def cx(self):
        return (self.image_width - 1) / 2.0

    @property
    def cy(self):
        return (self.image_height - 1) / 2.0

    @property
    def shape(self):
        return (self.image_height, self.image_width)

    def K(self):
        f = self.focal_px
        return np.array([[f, 0.0, self.cx], [0.0, f, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {
            "focal_length_mm": self.focal_length,
            "sensor_size_mm": self.sensor_size,
            "image_width": self.image_width,
            "image_height": self.image_height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["focal_length_mm"]),
            float(d["sensor_size_mm"]),
            int(d["image_width"]),
            int(d["image_height"]),
        )


def shade_elevations(z, cell_size, illum, params=None):
    """Lambertian intensity for an elevation array laid out like :class:`DemGrid`."""
    params = params or ShadingParams()
    q, p = np.gradient(np.asarray(z, dtype=float), cell_size)
    return _lambert(p, q, illum, params)


def _lambert(p, q, illum, params):
    ct, st = math.cos(illum.azimuth), math.sin(illum.azimuth)
    cs, ss = math.cos(illum.elevation), math.sin(illum.elevation)
    num = p * (ct * cs) + q * (st * cs) + ss
    img = illum.intensity * num / np.sqrt(p * p + q * q + 1.0)
    img = img * np.asarray(params.reflectance, dtype=float)
    if params.clamp:
        img = np.maximum(img, 0.0)
    return img


def shade(grid, illum, params=None):
    """Shaded relief of ``grid`` under ``illum``; same layout as the grid.

    With ``params.clamp=False`` negative intensities are kept, so the result is
    returned as a bare array instead of a :class:`RasterImage`.
    """
    params = params or ShadingParams()
    g = gradient_field(grid)
    img = _lambert(g.p, g.q, illum, params)
    return RasterImage(img) if params.clamp else img


def compute_s(camera):
    """Image size ``max(width, height)`` in pixels."""
    return max(camera.image_width, camera.image_height)


def compute_gsd(camera, z_ref, h_min):
    """Ground sample distance ``2 (z_ref - h_min) tan(theta) / s`` in m/px."""
    if not z_ref > h_min:
        raise DegenerateAltitudeError(
            f"degenerate altitude: camera at {z_ref} m is not above terrain minimum {h_min} m"
        )
    return 2.0 * (z_ref - h_min) * math.tan(camera.half_fov) / compute_s(camera)


def footprint_min_elevation(grid, center_x, center_y, footprint_half_width):
    """Lowest elevation among cells whose area intersects the square footprint."""
    xmin, xmax, ymin, ymax = grid.extent
    hw = float(footprint_half_width)
    if (
        center_x - hw < xmin
        or center_x + hw > xmax
        or center_y - hw < ymin
        or center_y + hw > ymax
    ):
        raise OutOfExtentError(
            f"footprint of half-width {hw} m at ({center_x}, {center_y}) leaves the grid"
        )
    cs = grid.cell_size
    # a cell spans +-cs/2 around its centre
    c0 = int(math.ceil((center_x - hw - grid.origin_x) / cs - 0.5))
    c1 = int(math.floor((center_x + hw - grid.origin_x) / cs + 0.5))
    r0 = int(math.ceil((center_y - hw - grid.origin_y) / cs - 0.5))
    r1 = int(math.floor((center_y + hw - grid.origin_y) / cs + 0.5))
    c0, r0 = max(c0, 0), max(r0, 0)
    c1, r1 = min(c1, grid.width - 1), min(r1, grid.height - 1)
    return float(grid.elevations[r0:r1 + 1, c0:c1 + 1].min())


def nadir_footprint(grid, camera, x, y, z, iterations=4):
    """GSD and lowest footprint elevation for a nadir camera at ``(x, y, z)``.

    The footprint half-width ``(z - h_min) tan(theta)`` depends on ``h_min``,
    so the two are iterated to a fixed point (``h_min`` only decreases).
    """
    t = math.tan(camera.half_fov)
    h_min = bilinear_sample(grid, x, y)
    for _ in range(iterations):
        if not z > h_min:
            raise DegenerateAltitudeError(
                f"degenerate altitude: camera at {z} m is not above terrain {h_min} m"
            )
        new = footprint_min_elevation(grid, x, y, (z - h_min) * t)
        if new == h_min:
            break
        h_min = min(h_min, new)
    return compute_gsd(camera, z, h_min), h_min
