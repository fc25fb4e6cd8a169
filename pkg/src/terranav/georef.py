"""Absolute localization of keyframes against a DEM.

A reference chip is rendered from the DEM at the planned position with the
presumed illumination, on exactly the camera's pixel lattice, and the frame
is phase-correlated against it. The image offset, scaled by the chip's ground
sample distance, moves the planned position onto the true one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, OutOfExtentError
from .hillshade import ShadingParams, nadir_footprint, shade_elevations
from .phasecorr import match_translation
from .raster import RasterImage, bilinear_sample, sample_surface

__all__ = [
    "PlanEntry",
    "PlannedPath",
    "GeoFix",
    "terrain_patch",
    "make_reference_chip",
    "offset_to_world",
    "georeference",
    "georeference_sequence",
    "write_fixes_csv",
    "read_fixes_csv",
]


@dataclass(frozen=True)
class PlanEntry:
    t: float
    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class PlannedPath:
    """Timestamped planned camera positions (world frame)."""

    timestamps: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        p = np.array(self.positions, dtype=float).reshape(-1, 3)
        if t.size == 0:
            raise ValueError("planned path is empty")
        if t.size != p.shape[0]:
            raise ValueError("timestamps and positions differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("planned path timestamps must be strictly increasing")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, i):
        x, y, z = self.positions[i]
        return PlanEntry(float(self.timestamps[i]), float(x), float(y), float(z))

    def nearest(self, t):
        """Entry with the timestamp closest to ``t`` (earlier entry on ties)."""
        i = int(np.searchsorted(self.timestamps, t))
        if i == len(self):
            i -= 1
        elif i > 0 and t - self.timestamps[i - 1] <= self.timestamps[i] - t:
            i -= 1
        return self[i]

    def check_inside(self, dem):
        if not np.all(dem.contains(self.positions[:, 0], self.positions[:, 1])):
            raise OutOfExtentError("planned path leaves the DEM extent")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "z"])
            for t, (x, y, z) in zip(self.timestamps, self.positions):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z))])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            [float(r["t"]) for r in rows],
            [[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows],
        )


@dataclass(frozen=True)
class GeoFix:
    """Absolute position of one keyframe.

    Rejected fixes (``peak < min_peak``) are kept and flagged so that the
    fusion layer can weight them to zero instead of losing the record.
    """

    keyframe_id: int
    t: float
    position: tuple
    gsd: float
    peak: float
    accepted: bool
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.gsd > 0:
            raise ValueError("gsd must be positive")
        if not 0.0 <= self.peak <= 1.0:
            raise ValueError("peak must lie in [0, 1]")


def terrain_patch(dem, x, y, gsd, camera):
    """DEM elevations on the camera pixel lattice centred at ``(x, y)``.

    Returned in grid layout (row 0 south); flip vertically for a north-up image.
    """
    h, w = camera.shape
    xs = x + (np.arange(w) - camera.cx) * gsd
    ys = y + (np.arange(h) - camera.cy) * gsd
    xx, yy = np.meshgrid(xs, ys)
    return sample_surface(dem, xx, yy).reshape(h, w)


def _entry(entry):
    if isinstance(entry, PlanEntry):
        return entry
    vals = [float(v) for v in entry]
    if len(vals) == 3:
        return PlanEntry(0.0, *vals)
    return PlanEntry(*vals)


def make_reference_chip(dem, entry, camera, presumed_illum):
    """Shade the DEM under the presumed illumination as the camera at
    ``entry`` would see it; returns ``(chip, gsd)``."""
    e = _entry(entry)
    gsd, _ = nadir_footprint(dem, camera, e.x, e.y, e.z)
    z = terrain_patch(dem, e.x, e.y, gsd, camera)
    img = shade_elevations(z, gsd, presumed_illum, ShadingParams())
    return RasterImage(np.flipud(img)), gsd


def offset_to_world(x_ref, y_ref, gsd, dx, dy):
    """World position of a frame whose content is displaced ``(dx, dy)`` px
    relative to the reference chip taken at ``(x_ref, y_ref)``.

    Content moving east in the image means the camera moved west, and with
    row 0 at the north edge content moving down means the camera moved north.
    """
    return x_ref - gsd * dx, y_ref + gsd * dy


def georeference(frame, entry, dem, camera, presumed_illum, flight_height=None,
                 min_peak=0.05, windowing="hann", keyframe_id=0, t=None):
    """Position fix for ``frame`` taken near the planned ``entry``.

    ``flight_height`` is the height above the terrain under the planned
    position; it defaults to the planned altitude minus that terrain.
    """
    e = _entry(entry)
    px = frame.pixels if isinstance(frame, RasterImage) else np.asarray(frame, float)
    if px.shape != camera.shape:
        raise DimensionMismatchError(
            f"frame is {px.shape[1]}x{px.shape[0]}, camera expects "
            f"{camera.image_width}x{camera.image_height}"
        )
    chip, gsd = make_reference_chip(dem, e, camera, presumed_illum)
    m = match_translation(px, chip, windowing=windowing, min_peak=min_peak)
    ground = bilinear_sample(dem, e.x, e.y)
    if flight_height is None:
        flight_height = e.z - ground
    x_t, y_t = offset_to_world(e.x, e.y, gsd, m.dx, m.dy)
    return GeoFix(
        keyframe_id=int(keyframe_id),
        t=float(e.t if t is None else t),
        position=(float(x_t), float(y_t), float(ground + flight_height)),
        gsd=float(gsd),
        peak=m.peak,
        accepted=bool(m.peak >= min_peak),
        offset=(m.dx, m.dy),
    )


def georeference_sequence(keyframes, planned_path, dem, camera, presumed_illum,
                          min_peak=0.05, windowing="hann"):
    """One fix per keyframe, each against the planned entry nearest in time.

    ``keyframes`` is a sequence of ``(keyframe_id, timestamp, frame)``.
    """
    if planned_path is None or len(planned_path) == 0:
        raise ValueError("planned path is empty")
    keyframes = list(keyframes)
    if not keyframes:
        raise ValueError("no keyframes to georeference")
    fixes = []
    for kf_id, t, frame in keyframes:
        e = planned_path.nearest(t)
        fixes.append(georeference(frame, e, dem, camera, presumed_illum,
                                  min_peak=min_peak, windowing=windowing,
                                  keyframe_id=kf_id, t=t))
    return fixes


FIX_HEADER = ["kf_id", "t", "x", "y", "z", "gsd", "peak", "accepted"]


def write_fixes_csv(fixes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIX_HEADER)
        for f in fixes:
            w.writerow([f.keyframe_id, repr(f.t), *(repr(v) for v in f.position),
                        repr(f.gsd), repr(f.peak), int(f.accepted)])


def read_fixes_csv(path):
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(GeoFix(int(r["kf_id"]), float(r["t"]),
                              (float(r["x"]), float(r["y"]), float(r["z"])),
                              float(r["gsd"]), float(r["peak"]), bool(int(r["accepted"]))))
    return out
