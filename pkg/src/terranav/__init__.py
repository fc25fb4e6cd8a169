"""Terrain-aided localisation of a nadir camera against an elevation model."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    DegenerateAltitudeError,
    DegenerateGeometryError,
    DimensionMismatchError,
    OutOfExtentError,
    RasterFormatError,
    ScenarioError,
    TerranavError,
)
from .evalkit import ApeStats, ape, matching_error_histogram
from .fusion import FrameTransform, align_trajectories, build_problem, solve_lm
from .georef import GeoFix, PlannedPath, georeference, georeference_sequence
from .hillshade import CameraModel, IlluminationConfig, shade
from .phasecorr import decompose_spectrum, match_translation
from .pipeline import SlamConfig, run_slam
from .raster import DemGrid, RasterImage, load_dem, load_image, save_dem, save_image
from .simworld import ScenarioConfig, generate_dem, render_sequence
from .vo.geometry import PoseSE3
from .vo.trajectory import Trajectory, read_tum, write_tum

__all__ = [
    "__version__",
    "TerranavError",
    "RasterFormatError",
    "OutOfExtentError",
    "DegenerateAltitudeError",
    "DegenerateGeometryError",
    "DimensionMismatchError",
    "ScenarioError",
    "ApeStats",
    "ape",
    "matching_error_histogram",
    "FrameTransform",
    "align_trajectories",
    "build_problem",
    "solve_lm",
    "GeoFix",
    "PlannedPath",
    "georeference",
    "georeference_sequence",
    "CameraModel",
    "IlluminationConfig",
    "shade",
    "decompose_spectrum",
    "match_translation",
    "SlamConfig",
    "run_slam",
    "DemGrid",
    "RasterImage",
    "load_dem",
    "load_image",
    "save_dem",
    "save_image",
    "ScenarioConfig",
    "generate_dem",
    "render_sequence",
    "PoseSE3",
    "Trajectory",
    "read_tum",
    "write_tum",
]
