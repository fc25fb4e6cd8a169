"""``terranav`` command line: scenes, renders, matching, sweeps, SLAM runs, evaluation."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ScenarioError, TerranavError
from .hillshade import IlluminationConfig

SCENE = "scene.demr"
SCENARIO = "scenario.json"
MANIFEST = "manifest.json"
FRAMES = "frames.npy"


# --------------------------------------------------------------------------
# run bookkeeping

@dataclass
class RunManifest:
    run_dir: str
    subcommand: str
    scenario_hash: str | None = None
    versions: dict = field(default_factory=dict)
    timings_ms: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def write(self):
        missing = [p for p in self.outputs if not (Path(self.run_dir) / p).exists()]
        if missing:
            raise RuntimeError(f"declared outputs missing: {missing}")
        path = Path(self.run_dir) / MANIFEST
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
        return path


def _versions():
    import cv2
    import scipy

    return {
        "terranav": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "opencv": cv2.__version__,
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
    }


class _Stages:
    def __init__(self):
        self.ms = {}
        self._t = None
        self._name = None

    def start(self, name):
        self.stop()
        self._name, self._t = name, time.perf_counter()

    def stop(self):
        if self._name is not None:
            self.ms[self._name] = self.ms.get(self._name, 0.0) + (time.perf_counter() - self._t) * 1000.0
            self._name = None


def _limit_threads():
    """Honour ``TERRANAV_THREADS`` for BLAS/FFT pools and OpenCV."""
    n = os.environ.get("TERRANAV_THREADS")
    if not n:
        return None
    try:
        n = max(int(n), 1)
    except ValueError:
        raise SystemExit(f"error: TERRANAV_THREADS must be an integer, got {n!r}")
    import cv2
    from threadpoolctl import threadpool_limits

    cv2.setNumThreads(n)
    return threadpool_limits(limits=n)


def _load_scenario(path):
    from .simworld import ScenarioConfig

    if path is None:
        return ScenarioConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError("scenario", f"cannot read {path}: {exc.strerror}") from None
    return ScenarioConfig.from_json(text)


def _run_scenario(run):
    from .simworld import ScenarioConfig

    p = Path(run) / SCENARIO
    if not p.exists():
        raise FileNotFoundError(f"{p} not found; run gen-scene first")
    return ScenarioConfig.from_json(p.read_text())


def _need(run, *names):
    for n in names:
        if not (Path(run) / n).exists():
            raise FileNotFoundError(f"{Path(run) / n} not found")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _svg(fig, path):
    fig.savefig(path, format="svg")
    import matplotlib.pyplot as plt

    plt.close(fig)


def _figure(**kw):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    return plt.subplots(**kw)


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_scene(args):
    from .raster import save_dem
    from .simworld import scene_dem

    cfg = _load_scenario(args.scenario)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    st = _Stages()
    st.start("generate")
    dem = scene_dem(cfg)
    st.start("write")
    save_dem(dem, out / SCENE)
    (out / SCENARIO).write_text(cfg.to_json())
    st.stop()
    m = RunManifest(str(out), "gen-scene", cfg.digest(), _versions(), st.ms,
                    [SCENE, SCENE + ".json", SCENARIO])
    m.write()
    print(json.dumps({"run": str(out), "dem_sha256": _sha256(out / SCENE), "scenario": cfg.digest()}))


def cmd_render(args):
    from .raster import load_dem
    from .simworld import render_sequence
    from .vo.trajectory import Trajectory, write_tum

    run = Path(args.run)
    _need(run, SCENE, SCENARIO)
    cfg = _run_scenario(run)
    st = _Stages()
    st.start("setup")
    seq = render_sequence(cfg, dem=load_dem(run / SCENE))
    n = len(seq) if args.max_frames is None else min(len(seq), args.max_frames)
    h, w = cfg.camera.shape
    st.start("render")
    stack = np.lib.format.open_memmap(run / FRAMES, mode="w+", dtype=np.float32, shape=(n, h, w))
    for k in range(n):
        stack[k] = seq.frame(k).pixels
    stack.flush()
    del stack
    st.start("write")
    gt = seq.ground_truth
    write_tum(run / "gt.tum", Trajectory.from_poses(gt.timestamps[:n], gt.poses[:n]))
    seq.planned_path.write_csv(run / "planned.csv")
    st.stop()
    RunManifest(str(run), "render", cfg.digest(), _versions(), st.ms,
                [FRAMES, "gt.tum", "planned.csv"]).write()
    print(json.dumps({"run": str(run), "frames": n, "shape": [h, w]}))


def _load_raster(path):
    from .raster import load_image

    return load_image(path)


def cmd_match(args):
    from .phasecorr import match_translation

    a, b = _load_raster(args.target), _load_raster(args.reference)
    m = match_translation(a, b, windowing=args.windowing, min_peak=args.min_peak)
    print(json.dumps(m.as_dict()))


def _illum(args, prefix=""):
    return IlluminationConfig.from_degrees(getattr(args, prefix + "intensity"),
                                           getattr(args, prefix + "azimuth"),
                                           getattr(args, prefix + "elevation"))


def cmd_decompose(args):
    from .phasecorr import cross_power_spectrum, decompose_spectrum, forward_spectrum

    a, b = _load_raster(args.optical), _load_raster(args.dem_image)
    pa = np.flipud(a.pixels) if args.north_up else a.pixels
    q = cross_power_spectrum(forward_spectrum(pa, args.windowing), forward_spectrum(b, args.windowing))
    print(json.dumps(decompose_spectrum(q, _illum(args)).as_dict()))


def cmd_georef(args):
    from .evalkit import matching_error_histogram
    from .georef import PlannedPath, georeference_sequence, write_fixes_csv
    from .raster import load_dem
    from .vo.trajectory import read_tum

    run = Path(args.run)
    _need(run, SCENE, SCENARIO, FRAMES, "planned.csv")
    cfg = _run_scenario(run)
    st = _Stages()
    st.start("load")
    dem = load_dem(run / SCENE)
    frames = np.load(run / FRAMES, mmap_mode="r")
    plan = PlannedPath.read_csv(run / "planned.csv")
    ids = range(0, len(frames), args.stride)
    st.start("georef")
    kfs = [(k, float(plan.timestamps[k]), np.asarray(frames[k], float)) for k in ids]
    fixes = georeference_sequence(kfs, plan, dem, cfg.camera, cfg.presumed_illumination,
                                  min_peak=args.min_peak)
    st.start("write")
    write_fixes_csv(fixes, run / "fixes.csv")
    outputs = ["fixes.csv"]
    summary = {"fixes": len(fixes), "accepted": int(sum(f.accepted for f in fixes))}
    if (run / "gt.tum").exists():
        gt = read_tum(run / "gt.tum")
        err = np.array([np.hypot(*(np.array(f.position[:2]) - gt.positions[f.keyframe_id, :2]))
                        for f in fixes])
        # offset error in pixels against the true camera position
        offs = []
        for f in fixes:
            e = plan.nearest(f.t)
            tx, ty = gt.positions[f.keyframe_id, :2]
            offs.append((f.offset[0] - (e.x - tx) / f.gsd, f.offset[1] - (ty - e.y) / f.gsd))
        hist = matching_error_histogram(offs)
        summary.update(mean_georef_err_m=float(err.mean()), matching=hist.as_dict())
        fig, ax = _figure(figsize=(6, 4))
        ax.stairs(hist.counts, hist.edges)
        ax.set_xscale("symlog", linthresh=2.0)
        ax.set_xlabel("radial matching error (px)")
        ax.set_ylabel("keyframes")
        _svg(fig, run / "matching_hist.svg")
        outputs.append("matching_hist.svg")
    (run / "georef.json").write_text(json.dumps(summary, indent=2))
    outputs.append("georef.json")
    st.stop()
    RunManifest(str(run), "georef", cfg.digest(), _versions(), st.ms, outputs).write()
    print(json.dumps({k: v for k, v in summary.items() if k != "matching"}))


def _plot_trajectories(path, gt, fused, vo_only, fixes):
    fig, ax = _figure(figsize=(6, 6))
    if gt is not None:
        ax.plot(gt.positions[:, 0], gt.positions[:, 1], "k-", lw=1, label="ground truth")
    if vo_only is not None:
        ax.plot(vo_only.positions[:, 0], vo_only.positions[:, 1], "-", lw=1, label="odometry only")
    ax.plot(fused.positions[:, 0], fused.positions[:, 1], "-", lw=1, label="fused")
    acc = np.array([f.position for f in fixes if f.accepted]).reshape(-1, 3)
    ax.plot(acc[:, 0], acc[:, 1], ".", ms=4, label="position fixes")
    ax.set_aspect("equal")
    ax.set_xlabel("east (m)")
    ax.set_ylabel("north (m)")
    ax.legend(loc="best", fontsize="small")
    _svg(fig, path)


def cmd_slam(args):
    from .evalkit import ape
    from .georef import PlannedPath, write_fixes_csv
    from .pipeline import SlamConfig, run_slam
    from .raster import load_dem
    from .vo.geometry import PoseSE3
    from .vo.trajectory import read_tum, write_tum

    run = Path(args.run)
    _need(run, SCENE, SCENARIO, FRAMES, "planned.csv")
    cfg = _run_scenario(run)
    t_start = time.perf_counter()
    st = _Stages()
    st.start("load")
    dem = load_dem(run / SCENE)
    frames = np.load(run / FRAMES, mmap_mode="r")
    plan = PlannedPath.read_csv(run / "planned.csv")
    gt = read_tum(run / "gt.tum") if (run / "gt.tum").exists() else None
    n = len(frames) if args.max_frames is None else min(len(frames), args.max_frames)
    hint = None
    if gt is not None and not args.no_pose_hint:
        gposes = gt.poses()

        def hint(k):
            return PoseSE3(gposes[k].R, gposes[k].t)

    scfg = SlamConfig(w_geo=args.w_geo, window=args.window, similarity=args.similarity, huber=args.huber,
                      min_peak=args.min_peak, scale_drift=args.scale_drift)
    st.stop()
    res = run_slam((np.asarray(frames[k], float) for k in range(n)), plan.timestamps[:n], plan, dem,
                   cfg.camera, cfg.presumed_illumination, scfg, pose_hint=hint,
                   with_vo_only=not args.no_vo_only)
    for k, v in res.timings_ms.items():
        st.ms[k] = v
    st.start("write")
    write_tum(run / "fused.tum", res.fused)
    outputs = ["fused.tum", "fixes.csv", "report.json", "trajectory.svg"]
    if res.vo_only is not None:
        write_tum(run / "vo_only.tum", res.vo_only)
        outputs.append("vo_only.tum")
    write_fixes_csv(res.fixes, run / "fixes.csv")
    report = res.report()
    report.update(w_geo=args.w_geo, window=args.window, frames=n, hardware=_versions()["processor"])
    if gt is not None:
        report["ape_fused"] = ape(res.fused, gt).as_dict()
        if res.vo_only is not None:
            report["ape_vo_only"] = ape(res.vo_only, gt).as_dict()
    _plot_trajectories(run / "trajectory.svg", gt, res.fused, res.vo_only, res.fixes)
    st.stop()
    report["total_wall_ms"] = (time.perf_counter() - t_start) * 1000.0
    (run / "report.json").write_text(json.dumps(report, indent=2))
    RunManifest(str(run), "slam", cfg.digest(), _versions(), st.ms, outputs).write()
    print(json.dumps({k: report[k] for k in ("keyframes", "fixes_accepted", "frames_per_second")}))


def cmd_sweep(args):
    from .experiments import SWEEP_COLUMNS, run_sweep

    if args.axis not in ("intensity", "azimuth", "elevation"):
        raise ScenarioError("axis", f"unknown sweep axis {args.axis!r}")
    cfg = _load_scenario(args.scenario)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ScenarioError("values", "no sweep values given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    st = _Stages()
    st.start("sweep")
    rows = run_sweep(cfg, args.axis, values, n_keyframes=args.keyframes, min_peak=args.min_peak)
    st.start("write")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(r.row())
    fig, ax = _figure(figsize=(6, 4))
    ax.plot(values, [r.mean_px_err for r in rows], "o-", label="mean")
    ax.plot(values, [r.max_px_err for r in rows], "s--", label="max")
    unit = "" if args.axis == "intensity" else " (deg)"
    ax.set_xlabel(f"true {args.axis}{unit}")
    ax.set_ylabel("matching error (px)")
    ax.legend()
    _svg(fig, out / "sweep.svg")
    (out / SCENARIO).write_text(cfg.to_json())
    st.stop()
    RunManifest(str(out), "sweep", cfg.digest(), _versions(), st.ms,
                ["sweep.csv", "sweep.svg", SCENARIO]).write()
    for r in rows:
        print(",".join(f"{v:.6g}" for v in r.row()))


def cmd_eval(args):
    from .evalkit import APE_COLUMNS, ape
    from .vo.trajectory import read_tum

    est, ref = read_tum(args.estimate), read_tum(args.ground_truth)
    s = ape(est, ref, associate_tol=args.tol, align=args.align, similarity=args.similarity)
    if args.json:
        print(json.dumps(s.as_dict()))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(APE_COLUMNS)
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in s.row()])


# --------------------------------------------------------------------------
# parser

def build_parser():
    p = argparse.ArgumentParser(prog="terranav", description=__doc__)
    p.add_argument("--version", action="version", version=f"terranav {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="generate the DEM of a scenario into a run directory")
    g.add_argument("--scenario", help="scenario JSON (defaults used when omitted)")
    g.add_argument("--out", required=True, help="run directory")
    g.add_argument("--seed", type=int, help="override the scenario seed")
    g.set_defaults(func=cmd_gen_scene)

    r = sub.add_parser("render", help="render frames, ground truth and planned path")
    r.add_argument("--run", required=True)
    r.add_argument("--max-frames", type=int)
    r.set_defaults(func=cmd_render)

    m = sub.add_parser("match", help="phase-correlate two raster files")
    m.add_argument("target")
    m.add_argument("reference")
    m.add_argument("--windowing", default="hann", choices=["hann", "none"])
    m.add_argument("--min-peak", type=float, default=0.05)
    m.set_defaults(func=cmd_match)

    d = sub.add_parser("decompose", help="spectral decomposition of an optical/DEM pair")
    d.add_argument("optical")
    d.add_argument("dem_image")
    d.add_argument("--intensity", type=float, default=10.0)
    d.add_argument("--azimuth", type=float, default=0.0, help="degrees")
    d.add_argument("--elevation", type=float, default=60.0, help="degrees")
    d.add_argument("--windowing", default="hann", choices=["hann", "none"])
    d.add_argument("--north-up", action="store_true",
                   help="optical image has row 0 at the north edge (as rendered); flip it to grid layout")
    d.set_defaults(func=cmd_decompose)

    gr = sub.add_parser("georef", help="georeference every n-th rendered frame")
    gr.add_argument("--run", required=True)
    gr.add_argument("--stride", type=int, default=21)
    gr.add_argument("--min-peak", type=float, default=0.05)
    gr.set_defaults(func=cmd_georef)

    s = sub.add_parser("slam", help="odometry + georeferencing + windowed fusion")
    s.add_argument("--run", required=True)
    s.add_argument("--w-geo", type=float, default=10.0)
    s.add_argument("--window", type=int, default=15)
    s.add_argument("--similarity", action="store_true", help="7-DoF alignment to fixes")
    s.add_argument("--huber", action="store_true", help="robust loss on reprojection residuals")
    s.add_argument("--min-peak", type=float, default=0.05)
    s.add_argument("--scale-drift", type=float, default=0.0, help="inject odometry scale drift")
    s.add_argument("--max-frames", type=int)
    s.add_argument("--no-pose-hint", action="store_true", help="bootstrap from the essential matrix")
    s.add_argument("--no-vo-only", action="store_true", help="skip the odometry-only baseline")
    s.set_defaults(func=cmd_slam)

    sw = sub.add_parser("sweep", help="matching error across true illumination values")
    sw.add_argument("--scenario")
    sw.add_argument("--axis", required=True)
    sw.add_argument("--values", required=True, help="comma separated; angles in degrees")
    sw.add_argument("--keyframes", type=int, default=50)
    sw.add_argument("--min-peak", type=float, default=0.05)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="absolute position error of a TUM trajectory")
    e.add_argument("estimate")
    e.add_argument("ground_truth")
    e.add_argument("--tol", type=float, default=0.01, help="association tolerance (s)")
    e.add_argument("--align", action="store_true")
    e.add_argument("--similarity", action="store_true")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    limits = _limit_threads()
    try:
        args.func(args)
    except ScenarioError as exc:
        print(f"error: invalid scenario field {exc.field!r}: {exc}", file=sys.stderr)
        return 2
    except (TerranavError, FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limits is not None:
            limits.restore_original_limits()
    return 0


if __name__ == "__main__":
    sys.exit(main())
