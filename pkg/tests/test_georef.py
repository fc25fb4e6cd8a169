from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from terranav.errors import DimensionMismatchError, OutOfExtentError
from terranav.georef import (
    GeoFix,
    PlannedPath,
    georeference,
    georeference_sequence,
    make_reference_chip,
    offset_to_world,
    read_fixes_csv,
    write_fixes_csv,
)
from terranav.hillshade import CameraModel, IlluminationConfig
from terranav.raster import DemGrid, bilinear_sample
from terranav.simworld import ScenarioConfig, generate_albedo, render_frame, scene_dem
from terranav.vo.geometry import NADIR_R, PoseSE3

ILLUM = IlluminationConfig.from_degrees(10, 0, 60)
CAM = CameraModel()
SMALL = CameraModel(image_width=256, image_height=256)


@pytest.fixture(scope="module")
def scene():
    dem = scene_dem(ScenarioConfig(seed=7))
    return dem, generate_albedo(dem, 0.3, seed=7)


def nadir(x, y, z):
    return PoseSE3(NADIR_R, np.array([x, y, z], float))


def test_flat_dem_chip():
    dem = DemGrid(np.full((200, 200), 12.0), 1.0)
    chip, gsd = make_reference_chip(dem, (100.0, 100.0, 52.0), SMALL, ILLUM)
    assert gsd == pytest.approx(2 * 40.0 * math.tan(SMALL.half_fov) / 256)
    assert np.allclose(chip.pixels, 10 * math.sin(math.radians(60)))
    assert chip.shape == SMALL.shape


def test_chip_at_border_fails(scene):
    with pytest.raises(OutOfExtentError):
        make_reference_chip(scene[0], (3.0, 128.0, 40.0), CAM, ILLUM)


def test_chip_deterministic(scene):
    a, ga = make_reference_chip(scene[0], (120.0, 130.0, 40.0), CAM, ILLUM)
    b, gb = make_reference_chip(scene[0], (120.0, 130.0, 40.0), CAM, ILLUM)
    assert ga == gb and np.array_equal(a.pixels, b.pixels)


def test_frame_at_planned_entry(scene):
    dem, albedo = scene
    x, y = 128.0, 128.0
    frame, _ = render_frame(dem, nadir(x, y, 40.0), CAM, ILLUM, albedo)
    fix = georeference(frame, (x, y, 40.0), dem, CAM, ILLUM)
    assert fix.accepted
    assert abs(fix.position[0] - x) <= 0.2 * fix.gsd
    assert abs(fix.position[1] - y) <= 0.2 * fix.gsd


def test_constructed_ten_pixel_offset(scene):
    dem, albedo = scene
    x, y, z = 128.0, 128.0, 48.0
    _, gsd = make_reference_chip(dem, (x, y, z), CAM, ILLUM)
    assert gsd == pytest.approx(0.1)
    frame, _ = render_frame(dem, nadir(x + 10 * gsd, y, z), CAM, ILLUM, albedo)
    fix = georeference(frame, (x, y, z), dem, CAM, ILLUM)
    assert abs(fix.position[0] - (x + 1.0)) <= 0.1
    assert abs(fix.position[1] - y) <= 0.1


def test_uncorrelated_frame_rejected(scene):
    other = scene_dem(ScenarioConfig(seed=99))
    frame, _ = render_frame(other, nadir(128.0, 128.0, 40.0), CAM, ILLUM,
                            generate_albedo(other, 0.3, seed=99))
    right, _ = render_frame(scene[0], nadir(128.0, 128.0, 40.0), CAM, ILLUM, scene[1])
    # matched-illumination true pairs score >= 0.6 on these scenes, unrelated ones <= 0.35
    fix = georeference(frame, (128.0, 128.0, 40.0), scene[0], CAM, ILLUM, min_peak=0.45)
    good = georeference(right, (128.0, 128.0, 40.0), scene[0], CAM, ILLUM, min_peak=0.45)
    assert not fix.accepted and good.accepted
    assert fix.peak < good.peak
    assert np.all(np.isfinite(fix.position))


def test_frame_shape_checked(scene):
    with pytest.raises(DimensionMismatchError):
        georeference(np.ones((10, 10)), (128.0, 128.0, 40.0), scene[0], CAM, ILLUM)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.01, 2), st.floats(-50, 50),
       st.floats(-50, 50), st.integers(-40, 40))
def test_offset_linearity(xr, yr, gsd, dx, dy, k):
    x0, y0 = offset_to_world(xr, yr, gsd, dx, dy)
    x1, y1 = offset_to_world(xr, yr, gsd, dx + k, dy + k)
    # content moving +x means the camera moved -x; rows run southward
    assert x1 - x0 == pytest.approx(-k * gsd, abs=1e-9)
    assert y1 - y0 == pytest.approx(k * gsd, abs=1e-9)


def test_zero_offset_fixpoint(scene):
    dem = scene[0]
    entry = (110.0, 140.0, 40.0)
    chip, _ = make_reference_chip(dem, entry, CAM, ILLUM)
    fix = georeference(chip, entry, dem, CAM, ILLUM, flight_height=37.5)
    assert fix.position[:2] == (110.0, 140.0)
    assert fix.position[2] - 37.5 == pytest.approx(bilinear_sample(dem, 110.0, 140.0), abs=1e-12)


@pytest.fixture(scope="module")
def straight_run(scene):
    dem, albedo = scene
    rng = np.random.default_rng(0)
    ts = np.arange(10.0)
    truth = np.column_stack([70 + 12 * ts, np.full(10, 128.0), np.full(10, 40.0)])
    plan = truth + np.column_stack([rng.uniform(-2, 2, (10, 2)), np.zeros(10)])
    kfs = [(int(k), float(t), render_frame(dem, nadir(*truth[k]), SMALL, ILLUM, albedo)[0])
           for k, t in enumerate(ts)]
    return kfs, PlannedPath(ts, plan), truth


def test_sequence_on_straight_path(scene, straight_run):
    kfs, plan, truth = straight_run
    fixes = georeference_sequence(kfs, plan, scene[0], SMALL, ILLUM)
    assert len(fixes) == 10
    assert sum(f.accepted for f in fixes) >= 8
    ids = [f.keyframe_id for f in fixes]
    assert all(b > a for a, b in zip(ids, ids[1:]))
    err = [math.hypot(f.position[0] - p[0], f.position[1] - p[1]) for f, p in zip(fixes, truth)]
    assert max(err) < 0.05


@given(st.floats(0, 1), st.floats(0, 1))
def test_monotone_acceptance(scene, straight_run, p1, p2):
    kfs, plan, _ = straight_run
    lo, hi = sorted((p1, p2))
    n_lo = sum(f.accepted for f in georeference_sequence(kfs[:3], plan, scene[0], SMALL, ILLUM, min_peak=lo))
    n_hi = sum(f.accepted for f in georeference_sequence(kfs[:3], plan, scene[0], SMALL, ILLUM, min_peak=hi))
    assert n_hi <= n_lo


def test_empty_inputs():
    with pytest.raises(ValueError):
        PlannedPath([], [])
    with pytest.raises(ValueError):
        georeference_sequence([], PlannedPath([0.0], [[0, 0, 0]]), None, SMALL, ILLUM)


def test_planned_path_rules(tmp_path):
    with pytest.raises(ValueError):
        PlannedPath([0.0, 0.0], [[0, 0, 0], [1, 1, 1]])
    p = PlannedPath([0.0, 1.0, 2.0], [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    assert p.nearest(0.5).x == 0.0 and p.nearest(0.6).x == 1.0 and p.nearest(9).x == 2.0
    p.write_csv(tmp_path / "p.csv")
    q = PlannedPath.read_csv(tmp_path / "p.csv")
    assert np.array_equal(p.positions, q.positions)
    with pytest.raises(OutOfExtentError):
        PlannedPath([0.0], [[50.0, 0, 0]]).check_inside(DemGrid(np.zeros((10, 10)), 1.0))


def test_fix_csv_round_trip(tmp_path):
    fixes = [GeoFix(3, 1.5, (1.0, 2.0, 3.0), 0.1, 0.8, True), GeoFix(9, 4.0, (4.0, 5.0, 6.0), 0.2, 0.01, False)]
    write_fixes_csv(fixes, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "kf_id,t,x,y,z,gsd,peak,accepted"
    back = read_fixes_csv(tmp_path / "f.csv")
    assert [(f.keyframe_id, f.position, f.accepted) for f in back] == [(3, (1.0, 2.0, 3.0), True),
                                                                        (9, (4.0, 5.0, 6.0), False)]


def test_fix_invariants():
    with pytest.raises(ValueError):
        GeoFix(0, 0.0, (0, 0, 0), 0.0, 0.5, True)
    with pytest.raises(ValueError):
        GeoFix(0, 0.0, (0, 0, 0), 0.1, 1.5, True)
