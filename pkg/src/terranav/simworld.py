"""Seeded synthetic worlds: fractal terrain, albedo, nadir flights and renders.

Frames are orthographic nadir renders: the DEM is resampled on the camera
pixel lattice at the pose's ground sample distance, shaded with the true
illumination and multiplied by an albedo texture. Oracle correspondences
(``GroundTruth.anchors``) use the full perspective projection.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ScenarioError
from .georef import PlannedPath, terrain_patch
from .hillshade import CameraModel, IlluminationConfig, ShadingParams, nadir_footprint, shade_elevations
from .raster import DemGrid, RasterImage, sample_surface
from .vo.geometry import NADIR_R, PoseSE3, project_points

__all__ = [
    "ScenarioConfig",
    "GroundTruth",
    "Sequence",
    "AlbedoMap",
    "generate_dem",
    "scene_dem",
    "generate_albedo",
    "generate_trajectory",
    "render_frame",
    "render_sequence",
    "illumination_sweep",
    "TRAJECTORY_KINDS",
]

TRAJECTORY_KINDS = ("circular", "forward", "scanning")


def _illum_from(d, name, default):
    if isinstance(d, IlluminationConfig):
        return d
    try:
        return IlluminationConfig.from_dict({**default.to_dict(), **d})
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(name, str(exc)) from None


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to regenerate a scene, a flight and its frames.

    ``texture_noise`` is the albedo contrast: albedo spans
    ``[1 - texture_noise, 1]``, and 0 gives pure shading.
    ``plan_error`` is the half-width (m) of the uniform horizontal
    perturbation applied to ground truth to form the planned path.
    """

    seed: int = 7
    dem_size: int = 257
    cell_size: float = 1.0
    roughness: float = 0.5
    amplitude: float = 20.0
    plain_fraction: float = 0.3
    detrend_scale: float = 16.0
    illumination: IlluminationConfig = field(default_factory=IlluminationConfig)
    presumed_illumination: IlluminationConfig = field(default_factory=IlluminationConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    trajectory: str = "circular"
    flight_height: float = 40.0
    frame_rate: float = 1.0
    duration: float = 900.0
    speed: float = 1.0
    radius: float = 0.0
    scan_spacing: float = 25.0
    pixel_noise: float = 0.0
    texture_noise: float = 0.3
    plan_error: float = 2.0

    def __post_init__(self):
        if self.dem_size < 3:
            raise ScenarioError("dem_size", "must be at least 3")
        if not self.cell_size > 0:
            raise ScenarioError("cell_size", "must be positive")
        if not 0.0 <= self.roughness <= 1.0:
            raise ScenarioError("roughness", "must lie in [0, 1]")
        if not self.amplitude >= 0:
            raise ScenarioError("amplitude", "must be non-negative")
        if not 0.0 <= self.plain_fraction < 1.0:
            raise ScenarioError("plain_fraction", "must lie in [0, 1)")
        if self.detrend_scale < 0:
            raise ScenarioError("detrend_scale", "must be non-negative")
        if self.trajectory not in TRAJECTORY_KINDS:
            raise ScenarioError("trajectory", f"must be one of {', '.join(TRAJECTORY_KINDS)}")
        if not self.flight_height > 0:
            raise ScenarioError("flight_height", "must be positive")
        if not self.frame_rate > 0:
            raise ScenarioError("frame_rate", "must be positive")
        if not self.duration > 0:
            raise ScenarioError("duration", "must be positive")
        if not self.speed > 0:
            raise ScenarioError("speed", "must be positive")
        if self.radius < 0:
            raise ScenarioError("radius", "must be non-negative (0 picks the largest fitting circle)")
        if not self.scan_spacing > 0:
            raise ScenarioError("scan_spacing", "must be positive")
        if self.pixel_noise < 0:
            raise ScenarioError("pixel_noise", "must be non-negative")
        if not 0.0 <= self.texture_noise <= 1.0:
            raise ScenarioError("texture_noise", "must lie in [0, 1]")
        if self.plan_error < 0:
            raise ScenarioError("plan_error", "must be non-negative")

    @property
    def n_frames(self):
        return max(int(round(self.duration * self.frame_rate)), 1)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.to_dict() if hasattr(v, "to_dict") else v
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ScenarioError("scenario", "expected a JSON object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                raise ScenarioError(k, "unknown field")
        kw = {}
        for k, v in d.items():
            if k in ("illumination", "presumed_illumination"):
                kw[k] = _illum_from(v, k, known[k].default_factory())
            elif k == "camera":
                try:
                    kw[k] = v if isinstance(v, CameraModel) else CameraModel.from_dict(
                        {**CameraModel().to_dict(), **v})
                except (KeyError, TypeError, ValueError) as exc:
                    raise ScenarioError(k, str(exc)) from None
            elif k == "trajectory":
                kw[k] = v
            else:
                default = known[k].default
                try:
                    kw[k] = type(default)(v)
                    if isinstance(default, int) and not isinstance(v, int):
                        raise ValueError("expected an integer")
                except (TypeError, ValueError) as exc:
                    raise ScenarioError(k, f"invalid value {v!r}: {exc}") from None
        return cls(**kw)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("scenario", f"malformed JSON: {exc}") from None
        return cls.from_dict(d)

    def digest(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# --------------------------------------------------------------------------
# terrain

def _is_pow2_plus1(n):
    m = n - 1
    return m >= 1 and (m & (m - 1)) == 0


def _neighbour_mean(z, rows, cols, half):
    h, w = z.shape
    acc = np.zeros(rows.shape)
    cnt = np.zeros(rows.shape)
    for dr, dc in ((-half, 0), (half, 0), (0, -half), (0, half)):
        r, c = rows + dr, cols + dc
        ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        acc[ok] += z[r[ok], c[ok]]
        cnt[ok] += 1
    return acc / cnt


def _diamond_square(size, roughness, rng):
    z = np.zeros((size, size))
    z[:: size - 1, :: size - 1] = rng.uniform(-1, 1, (2, 2)) * roughness
    step, level = size - 1, 1
    while step > 1:
        half = step // 2
        amp = roughness ** (level + 1)
        # diamond step: square centres from their four corners
        c = z[0:-1:step, 0:-1:step] + z[step::step, 0:-1:step] + z[0:-1:step, step::step] + z[step::step, step::step]
        shape = c.shape
        z[half::step, half::step] = c / 4.0 + rng.uniform(-1, 1, shape) * amp
        # square step: edge midpoints from their (up to) four neighbours
        rr, cc = np.mgrid[0:size:half, 0:size:half]
        mask = ((rr // half + cc // half) % 2) == 1
        rows, cols = rr[mask], cc[mask]
        z[rows, cols] = _neighbour_mean(z, rows, cols, half) + rng.uniform(-1, 1, rows.size) * amp
        step, level = half, level + 1
    return z


def _value_noise(shape, spacing, rng):
    """Random lattice values with the given spacing (cells), cubic-interpolated onto ``shape``."""
    h, w = shape
    nh = int(math.ceil((h - 1) / spacing)) + 4
    nw = int(math.ceil((w - 1) / spacing)) + 4
    lattice = rng.uniform(-1, 1, (nh, nw))
    rows = 1.0 + np.arange(h) / spacing
    cols = 1.0 + np.arange(w) / spacing
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(lattice, [rr, cc], order=3, mode="nearest")


def _octave_noise(size, roughness, rng):
    z = np.zeros((size, size))
    spacing, level = (size - 1) / 2.0, 1
    while spacing >= 1.0:
        z += _value_noise((size, size), spacing, rng) * roughness**level
        spacing /= 2.0
        level += 1
    return z


def generate_dem(size, cell_size, roughness, amplitude, seed, method="auto",
                 plain_fraction=0.0, detrend_scale=0.0):
    """Fractal terrain normalised to ``[0, amplitude]``.

    Diamond-square for sizes ``2**n + 1``; ``roughness`` is the per-level
    persistence of the random displacement, so 0 gives a flat plane. Other
    sizes fall back to octave value noise with the same persistence
    (``method="auto"``).

    ``detrend_scale`` (m) removes relief coarser than that scale with a
    Gaussian high-pass, and ``plain_fraction`` then flattens that fraction of
    the cells to the base level, giving hills on a plain. With both set, every
    camera footprint a few detrend scales wide touches the plain, so the
    footprint minimum elevation (and with it the image scale along a
    constant-altitude flight) stays constant.
    """
    size = int(size)
    if not 0.0 <= roughness <= 1.0:
        raise ValueError("roughness must lie in [0, 1]")
    rng = np.random.default_rng([int(seed), 0])
    if method == "auto":
        method = "diamond_square" if _is_pow2_plus1(size) else "octave"
    if method == "diamond_square":
        if not _is_pow2_plus1(size):
            raise ValueError(f"diamond-square needs a size of 2**n + 1, got {size}")
        z = _diamond_square(size, roughness, rng)
    elif method == "octave":
        if size < 2:
            raise ValueError("size must be at least 2")
        z = _octave_noise(size, roughness, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    if detrend_scale > 0:
        z = z - ndimage.gaussian_filter(z, detrend_scale / cell_size, mode="nearest")
    if plain_fraction > 0:
        z = np.maximum(z, np.quantile(z, plain_fraction))
    z = z - z.min()
    span = z.max()
    if span > 0:
        z = z * (amplitude / span)
    return DemGrid(z, cell_size)


def scene_dem(config):
    return generate_dem(config.dem_size, config.cell_size, config.roughness, config.amplitude,
                        config.seed, plain_fraction=config.plain_fraction,
                        detrend_scale=config.detrend_scale)


@dataclass(frozen=True, eq=False)
class AlbedoMap:
    """Reflectance raster covering the scene at a finer spacing than the DEM."""

    values: np.ndarray
    spacing: float
    origin_x: float
    origin_y: float

    def sample(self, x, y):
        col = (np.asarray(x, float) - self.origin_x) / self.spacing
        row = (np.asarray(y, float) - self.origin_y) / self.spacing
        return ndimage.map_coordinates(self.values, [row, col], order=1, mode="nearest")


def generate_albedo(dem, contrast, seed, oversample=4, persistence=0.6):
    """Multi-octave value noise mapped to ``[1 - contrast, 1]`` in world coordinates."""
    spacing = dem.cell_size / oversample
    h = (dem.height - 1) * oversample + 1
    w = (dem.width - 1) * oversample + 1
    rng = np.random.default_rng([int(seed), 1])
    n = np.zeros((h, w))
    # feature sizes from 8 DEM cells down to two albedo cells; tied to the
    # cell size so that scaling the whole scene scales the texture with it
    s = 8.0 * oversample
    amp = 1.0
    while s >= 2.0:
        n += amp * _value_noise((h, w), s, rng)
        s /= 2.0
        amp *= persistence
    n = (n - n.min()) / max(n.max() - n.min(), 1e-12)
    vals = 1.0 - contrast * (1.0 - n)
    return AlbedoMap(vals, spacing, dem.origin_x, dem.origin_y)


# --------------------------------------------------------------------------
# flights

def _flight_altitude(dem, config):
    return float(dem.elevations.max()) + config.flight_height


def _usable_box(dem, config):
    z = _flight_altitude(dem, config)
    # planned positions may sit plan_error away and still need a full reference chip
    margin = (z - float(dem.elevations.min())) * math.tan(config.camera.half_fov) + dem.cell_size + config.plan_error
    xmin, xmax, ymin, ymax = dem.extent
    box = (xmin + margin, xmax - margin, ymin + margin, ymax - margin)
    if box[0] >= box[1] or box[2] >= box[3]:
        raise ScenarioError("flight_height", "camera footprint is larger than the scene")
    return box


def _scan_path(box, spacing):
    """Vertices of a boustrophedon covering ``box`` with legs along x."""
    x0, x1, y0, y1 = box
    w = x1 - x0
    xa, xb = x0 + 0.1 * w, x1 - 0.1 * w
    n_legs = max(int((y1 - y0) * 0.8 // spacing) + 1, 2)
    ys = y0 + 0.1 * (y1 - y0) + spacing * np.arange(n_legs)
    verts = []
    for i, y in enumerate(ys):
        a, b = (xa, xb) if i % 2 == 0 else (xb, xa)
        verts += [(a, y), (b, y)]
    return np.array(verts)


def _along_polyline(verts, s):
    seg = np.diff(verts, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    if np.any(s > cum[-1] + 1e-9):
        return None
    i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(lens) - 1)
    f = (s - cum[i]) / lens[i]
    return verts[i] + f[:, None] * seg[i]


def generate_trajectory(kind, config, dem):
    """Nadir, north-up camera poses at the frame rate, constant world altitude."""
    if kind not in TRAJECTORY_KINDS:
        raise ScenarioError("trajectory", f"unknown kind {kind!r}")
    box = _usable_box(dem, config)
    x0, x1, y0, y1 = box
    t = np.arange(config.n_frames) / config.frame_rate
    s = config.speed * t
    if kind == "circular":
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        rmax = min(x1 - x0, y1 - y0) / 2
        r = config.radius or 0.8 * rmax
        if r > rmax:
            raise ScenarioError("radius", f"circle of radius {r} m leaves the scene (max {rmax:.1f} m)")
        ang = s / r
        xy = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1)
    elif kind == "forward":
        start = np.array([x0, (y0 + y1) / 2])
        xy = start + np.stack([s, np.zeros_like(s)], axis=1)
        if xy[-1, 0] > x1:
            raise ScenarioError("duration", "forward flight footprint exits the scene")
    else:
        xy = _along_polyline(_scan_path(box, config.scan_spacing), s)
        if xy is None:
            raise ScenarioError("duration", "scanning flight is longer than the coverage pattern")
    z = _flight_altitude(dem, config)
    poses = [PoseSE3(NADIR_R, np.array([px, py, z])) for px, py in xy]
    return t, poses


# --------------------------------------------------------------------------
# rendering

@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-frame poses plus perspective oracle correspondences.

    ``anchors[k]`` holds world surface points visible in frame ``k`` and
    ``pixels[k]`` their projections through ``poses[k]``.
    """

    timestamps: np.ndarray
    poses: list
    anchors: list
    pixels: list

    @property
    def positions(self):
        return np.array([p.t for p in self.poses])


def render_frame(dem, pose, camera, illum, albedo=None, pixel_noise=0.0, rng=None):
    """Orthographic nadir render at the pose's ground sample distance.

    Returns ``(image, gsd)``; the image is north-up (row 0 at the north edge).
    """
    x, y, z = pose.t
    gsd, _ = nadir_footprint(dem, camera, x, y, z)
    elev = terrain_patch(dem, x, y, gsd, camera)
    img = shade_elevations(elev, gsd, illum, ShadingParams())
    if albedo is not None:
        h, w = camera.shape
        xs = x + (np.arange(w) - camera.cx) * gsd
        ys = y + (np.arange(h) - camera.cy) * gsd
        xx, yy = np.meshgrid(xs, ys)
        img = img * albedo.sample(xx, yy)
    if pixel_noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        img = img + rng.normal(0.0, pixel_noise, img.shape)
    return RasterImage(np.maximum(np.flipud(img), 0.0)), gsd


def _anchors(dem, pose, camera, gsd, rng, n=16):
    x, y, _ = pose.t
    h, w = camera.shape
    half_x = 0.4 * w * gsd
    half_y = 0.4 * h * gsd
    px = x + rng.uniform(-half_x, half_x, n)
    py = y + rng.uniform(-half_y, half_y, n)
    pz = sample_surface(dem, px, py)
    pts = np.stack([px, py, pz], axis=1)
    return pts, project_points(pose, pts, camera)


class Sequence:
    """A rendered flight; frames are produced lazily and deterministically."""

    def __init__(self, config, dem, albedo, ground_truth, planned_path):
        self.config = config
        self.dem = dem
        self.albedo = albedo
        self.ground_truth = ground_truth
        self.planned_path = planned_path

    def __len__(self):
        return len(self.ground_truth.poses)

    def frame(self, k):
        c = self.config
        rng = np.random.default_rng([c.seed, 2, int(k)])
        img, _ = render_frame(self.dem, self.ground_truth.poses[k], c.camera, c.illumination,
                              self.albedo, c.pixel_noise, rng)
        return img

    def frames(self):
        for k in range(len(self)):
            yield self.frame(k)


def render_sequence(config, dem=None):
    """Scene, ground truth, planned path and lazily rendered frames for ``config``."""
    if dem is None:
        dem = scene_dem(config)
    albedo = generate_albedo(dem, config.texture_noise, config.seed) if config.texture_noise > 0 else None
    t, poses = generate_trajectory(config.trajectory, config, dem)
    rng = np.random.default_rng([config.seed, 3])
    anchors, pixels = [], []
    for p in poses:
        gsd, _ = nadir_footprint(dem, config.camera, *p.t)
        a, uv = _anchors(dem, p, config.camera, gsd, rng)
        anchors.append(a)
        pixels.append(uv)
    gt = GroundTruth(t, poses, anchors, pixels)
    pos = gt.positions.copy()
    prng = np.random.default_rng([config.seed, 4])
    pos[:, :2] += prng.uniform(-config.plan_error, config.plan_error, (len(poses), 2))
    planned = PlannedPath(t, pos)
    planned.check_inside(dem)
    return Sequence(config, dem, albedo, gt, planned)


def illumination_sweep(base, axis, values):
    """Scenarios that differ from ``base`` only in one true-illumination field.

    Azimuth and elevation values are in degrees; presumed illumination stays
    at ``base``.
    """
    out = []
    il = base.illumination
    for v in values:
        try:
            if axis == "intensity":
                new = IlluminationConfig(float(v), il.azimuth, il.elevation)
            elif axis == "azimuth":
                new = IlluminationConfig(il.intensity, math.radians(v), il.elevation)
            elif axis == "elevation":
                new = IlluminationConfig(il.intensity, il.azimuth, math.radians(v))
            else:
                raise ScenarioError("axis", f"unknown sweep axis {axis!r}")
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(axis, f"value {v} out of range: {exc}") from None
        out.append(base.replace(illumination=new))
    return out
