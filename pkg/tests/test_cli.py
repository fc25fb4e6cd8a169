from __future__ import annotations

import csv
import io
import json
import shutil

import numpy as np
import pytest

from terranav.cli import main
from terranav.evalkit import ape
from terranav.georef import PlannedPath
from terranav.hillshade import CameraModel, shade
from terranav.pipeline import SlamConfig, run_slam
from terranav.raster import RasterImage, load_dem, save_dem, save_image
from terranav.simworld import ScenarioConfig, scene_dem
from terranav.vo.trajectory import read_tum

SCENARIO = {"camera": {"image_width": 256, "image_height": 256}, "duration": 120, "pixel_noise": 0.05}


def _json_out(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    sc = base / "scenario.json"
    sc.write_text(json.dumps(SCENARIO))
    run = base / "run"
    assert main(["gen-scene", "--scenario", str(sc), "--out", str(run)]) == 0
    assert main(["render", "--run", str(run)]) == 0
    return run


@pytest.fixture(scope="module")
def slam_run(run_dir):
    assert main(["georef", "--run", str(run_dir), "--stride", "10"]) == 0
    assert main(["slam", "--run", str(run_dir), "--scale-drift", "0.01"]) == 0
    return run_dir


def _manifest_ok(run):
    m = json.loads((run / "manifest.json").read_text())
    assert all((run / p).exists() for p in m["outputs"])
    assert all(v >= 0 for v in m["timings_ms"].values())
    return m


def test_gen_scene_outputs(run_dir):
    for name in ("scene.demr", "scenario.json", "frames.npy", "gt.tum", "planned.csv"):
        assert (run_dir / name).exists()
    assert _manifest_ok(run_dir)["subcommand"] == "render"
    frames = np.load(run_dir / "frames.npy", mmap_mode="r")
    assert frames.shape == (120, 256, 256)


def test_gen_scene_repeatable(tmp_path, capsys):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"dem_size": 65, "seed": 4}))
    sums = []
    for d in ("a", "b"):
        assert main(["gen-scene", "--scenario", str(sc), "--out", str(tmp_path / d)]) == 0
        sums.append(_json_out(capsys)["dem_sha256"])
    assert sums[0] == sums[1]
    assert (tmp_path / "a" / "scene.demr").read_bytes() == (tmp_path / "b" / "scene.demr").read_bytes()
    assert main(["gen-scene", "--scenario", str(sc), "--out", str(tmp_path / "c"), "--seed", "5"]) == 0
    assert _json_out(capsys)["dem_sha256"] != sums[0]


@pytest.mark.parametrize("text,field", [
    ('{"frame_rate": 0}', "frame_rate"),
    ('{"roughness": 3}', "roughness"),
    ('{"altitude": 3}', "altitude"),
    ("{broken", "scenario"),
])
def test_malformed_scenario_exit_code(tmp_path, capsys, text, field):
    sc = tmp_path / "bad.json"
    sc.write_text(text)
    assert main(["gen-scene", "--scenario", str(sc), "--out", str(tmp_path / "r")]) == 2
    assert repr(field) in capsys.readouterr().err
    assert not (tmp_path / "r" / "scene.demr").exists()


def test_missing_inputs_exit_nonzero(tmp_path, capsys):
    assert main(["slam", "--run", str(tmp_path / "nowhere")]) == 1
    assert "not found" in capsys.readouterr().err


def test_georef_outputs(slam_run):
    with open(slam_run / "fixes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) >= {"kf_id", "x", "y", "z", "peak", "accepted"}


def test_slam_fused_beats_odometry(slam_run):
    gt = read_tum(slam_run / "gt.tum")
    fused = ape(read_tum(slam_run / "fused.tum"), gt).rmse
    vo = ape(read_tum(slam_run / "vo_only.tum"), gt).rmse
    assert fused < vo


def test_slam_report(slam_run):
    rep = json.loads((slam_run / "report.json").read_text())
    assert rep["frames"] == 120 and rep["frames_per_second"] > 0
    assert rep["fixes_accepted"] > 0 and rep["hardware"]
    stages = rep["stage_ms"]
    assert all(v >= 0 for v in stages.values())
    assert sum(stages.values()) < 1.1 * rep["total_wall_ms"]
    m = _manifest_ok(slam_run)
    assert m["subcommand"] == "slam" and sum(m["timings_ms"].values()) < 1.1 * rep["total_wall_ms"]
    assert (slam_run / "trajectory.svg").read_text().lstrip().startswith("<?xml")


def test_eval_row(slam_run, capsys):
    assert main(["eval", str(slam_run / "fused.tum"), str(slam_run / "gt.tum")]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["max", "median", "min", "mean", "rmse", "std", "count"]
    assert len(rows) == 2 and int(rows[1][-1]) == 120
    assert main(["eval", str(slam_run / "fused.tum"), str(slam_run / "gt.tum"), "--json"]) == 0
    d = _json_out(capsys)
    assert d["rmse"] == pytest.approx(float(rows[1][4]), abs=1e-6)


def test_zero_geo_weight_is_pure_odometry(run_dir):
    """At w_geo = 0 fusion reduces to plain bundle adjustment; the output
    differs from a run without any fixes only by the final frame alignment."""
    cfg = ScenarioConfig.from_json((run_dir / "scenario.json").read_text())
    frames = np.load(run_dir / "frames.npy", mmap_mode="r")[:60]
    plan = PlannedPath.read_csv(run_dir / "planned.csv")
    gt = read_tum(run_dir / "gt.tum").poses()
    dem = load_dem(run_dir / "scene.demr")

    def go(**kw):
        return run_slam((np.asarray(f, float) for f in frames), plan.timestamps[:60], plan, dem, cfg.camera,
                        cfg.presumed_illumination, SlamConfig(**kw), pose_hint=lambda k: gt[k],
                        with_vo_only=False)

    zero = go(w_geo=0.0)
    # every fix rejected: nothing geo enters, and no alignment is applied
    nofix = go(w_geo=10.0, min_peak=1.0)
    assert nofix.alignment_mode == "identity" and zero.alignment_mode != "identity"
    back = zero.transform.inverse().apply(zero.fused.positions)
    assert np.abs(back - nofix.fused.positions).max() < 1e-9


def test_match_identical_files(tmp_path, capsys, seeded_grid):
    save_dem(seeded_grid, tmp_path / "a.demr")
    shutil.copy(tmp_path / "a.demr", tmp_path / "b.demr")
    shutil.copy(tmp_path / "a.demr.json", tmp_path / "b.demr.json")
    assert main(["match", str(tmp_path / "a.demr"), str(tmp_path / "b.demr")]) == 0
    d = _json_out(capsys)
    assert d["dx"] == 0 and d["dy"] == 0
    assert d["peak"] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("azimuth", [0.0, 120.0])
def test_decompose_low_sun(tmp_path, capsys, azimuth):
    dem = scene_dem(ScenarioConfig(seed=2))
    from terranav.hillshade import IlluminationConfig
    opt = shade(dem, IlluminationConfig.from_degrees(10, azimuth, 10)).pixels
    save_image(RasterImage(opt[40:168, 50:178]), tmp_path / "opt.imgr")
    save_image(RasterImage(dem.elevations[43:171, 45:173]), tmp_path / "dem.imgr")
    assert main(["decompose", str(tmp_path / "opt.imgr"), str(tmp_path / "dem.imgr"),
                 "--azimuth", str(azimuth), "--elevation", "10"]) == 0
    d = _json_out(capsys)
    assert d["sign_agreement"] >= 0.85
    assert d["shift"] == pytest.approx([-5.0, 3.0], abs=0.25)


def _sweep_scenario(tmp_path):
    sc = tmp_path / "base.json"
    sc.write_text(json.dumps({"camera": {"image_width": 128, "image_height": 128}, "duration": 30,
                              "pixel_noise": 0.05, "plan_error": 0.0}))
    return sc


@pytest.mark.parametrize("values", ["10", "5,10,12"])
def test_sweep_row_count(tmp_path, values):
    out = tmp_path / "sw"
    assert main(["sweep", "--scenario", str(_sweep_scenario(tmp_path)), "--axis", "intensity",
                 "--values", values, "--keyframes", "5", "--out", str(out)]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(values.split(","))
    assert list(rows[0]) == ["value", "mean_px_err", "max_px_err", "mean_georef_err_m", "accepted"]
    assert all(float(r["mean_px_err"]) < 0.5 for r in rows)
    assert (out / "sweep.svg").exists()
    _manifest_ok(out)


def test_sweep_bad_axis(tmp_path, capsys):
    assert main(["sweep", "--axis", "colour", "--values", "1", "--out", str(tmp_path / "x")]) == 2
    assert "'axis'" in capsys.readouterr().err


def test_thread_cap_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TERRANAV_THREADS", "1")
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"dem_size": 33}))
    assert main(["gen-scene", "--scenario", str(sc), "--out", str(tmp_path / "r")]) == 0
