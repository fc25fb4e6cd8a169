"""Release acceptance checks.

Each test prints one ``PASS``/``FAIL`` line with the measured value and its
tolerance, then asserts. Run ``pytest tests/test_acceptance.py -v`` (the
lines appear inline) or ``python -m tests.test_acceptance`` for the lines alone.
"""

from __future__ import annotations

import math
import os
import platform
import time
from dataclasses import dataclass

import numpy as np
import pytest
from scipy import ndimage

from terranav.evalkit import ape, ape_from_errors
from terranav.experiments import matching_trial, run_sweep
from terranav.fusion import build_problem, solve_lm
from terranav.hillshade import CameraModel, IlluminationConfig, shade
from terranav.phasecorr import (
    circular_shift, cross_power_spectrum, decompose_spectrum, forward_spectrum, match_translation,
)
from terranav.pipeline import SlamConfig, run_slam
from terranav.simworld import ScenarioConfig, render_sequence, scene_dem
from terranav.vo.geometry import FeatureObservation, project_points, solve_pnp, so3_log, triangulate
from terranav.vo.trajectory import Trajectory

try:
    from .synth import CAMERA, fixes_for, jacobian_fd_error, nadir_window, perturb, random_state, small_problem
except ImportError:  # run as a script
    from synth import CAMERA, fixes_for, jacobian_fd_error, nadir_window, perturb, random_state, small_problem

CAM_256 = CameraModel(image_width=256, image_height=256)


@dataclass
class Outcome:
    number: int
    title: str
    ok: bool
    detail: str
    seconds: float
    limit: float | None = None

    @property
    def line(self):
        lim = f", limit {self.limit:.0f} s" if self.limit else ""
        tag = "PASS" if self.ok and self.in_time else "FAIL"
        return f"[{tag}] {self.number} {self.title}: {self.detail} ({self.seconds:.1f} s{lim})"

    @property
    def in_time(self):
        return self.limit is None or self.seconds < self.limit


def _timed(fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    return ok, detail, time.perf_counter() - t0


def _smooth(rng, shape=(64, 64)):
    return ndimage.gaussian_filter(rng.normal(size=shape), 1.5, mode="wrap") + 5.0


def _analytic_shift(img, dx, dy):
    # independent route: scipy's frequency-domain shift (rows, cols order)
    return np.real(np.fft.ifft2(ndimage.fourier_shift(np.fft.fft2(img), (dy, dx))))


# ---------------------------------------------------------------------------

def check_shift_theorem():
    def run():
        rng = np.random.default_rng(2024)
        exact = 0
        frac = []
        for i in range(200):
            img = _smooth(rng)
            if i % 2 == 0:
                a, b = (int(v) for v in rng.integers(-31, 32, 2))
                r = match_translation(circular_shift(img, a, b), img, windowing="none")
                exact += (r.integer_dx, r.integer_dy) == (a, b) and abs(r.dx - a) < 1e-6 and abs(r.dy - b) < 1e-6
            else:
                a, b = rng.uniform(-20, 20, 2)
                r = match_translation(_analytic_shift(img, a, b), img, windowing="none")
                frac.append(math.hypot(r.dx - a, r.dy - b))
        mean = float(np.mean(frac))
        return exact == 100 and mean <= 0.25, f"integer {exact}/100 exact, fractional mean {mean:.3f} px (tol 0.25)"

    return Outcome(1, "shift-theorem exactness", *_timed(run), limit=10)


def check_multimodal_matching():
    def run():
        cfg = ScenarioConfig(plan_error=0.0)
        tr = matching_trial(cfg, n_keyframes=50)
        m = float(tr.radial_errors.mean())
        return m <= 0.2 and len(tr.frame_ids) == 50, f"mean radial error {m:.3f} px over {len(tr.frame_ids)} keyframes (tol 0.2)"

    return Outcome(2, "multi-modal matching", *_timed(run), limit=30)


SWEEPS = {
    "intensity": ([0.1, 2.0, 5.0, 10.0, 12.0], 10.0),
    "azimuth": ([-15.0, 0.0, 15.0, 30.0, 45.0], 0.0),
    "elevation": ([45.0, 52.5, 60.0, 67.5, 75.0], 60.0),
}


def check_illumination_sweeps():
    def run():
        base = ScenarioConfig(pixel_noise=0.05, plan_error=0.0)
        ok, parts = True, []
        for axis, (values, presumed) in SWEEPS.items():
            rows = run_sweep(base, axis, values, n_keyframes=50)
            err = np.array([r.mean_px_err for r in rows])
            i_min, i_pre = int(np.argmin(err)), values.index(presumed)
            good = err.max() <= 0.5 and abs(i_min - i_pre) <= 1
            ok &= good
            parts.append(f"{axis} max {err.max():.3f} px, min at {values[i_min]:g} (presumed {presumed:g})")
        return ok, "; ".join(parts) + " (tol 0.5 px, min within one step)"

    return Outcome(3, "illumination robustness sweeps", *_timed(run))


def _optical_dem_q(dem, illum):
    opt = shade(dem, illum).pixels
    a = opt[40:168, 50:178]
    b = dem.elevations[43:171, 45:173]
    return cross_power_spectrum(forward_spectrum(a, "hann"), forward_spectrum(b, "hann"))


def check_decomposition():
    def run():
        dem = scene_dem(ScenarioConfig(seed=2))
        reps = [decompose_spectrum(_optical_dem_q(dem, IlluminationConfig.from_degrees(10, az, 10)),
                                   IlluminationConfig.from_degrees(10, az, 10)) for az in (0.0, 120.0)]
        signs = [r.sign_agreement for r in reps]
        dens = [r.fringe_density for r in reps]
        ori = [r.fringe_orientation for r in reps]
        d_rel = abs(dens[0] - dens[1]) / max(dens)
        o_rel = abs(math.remainder(ori[0] - ori[1], 2 * math.pi)) / max(abs(o) for o in ori)
        ok = min(signs) >= 0.85 and d_rel <= 0.05 and o_rel <= 0.05
        return ok, (f"sign agreement {signs[0]:.2f}/{signs[1]:.2f} (tol 0.85), fringe density differs "
                    f"{100 * d_rel:.2f}%, orientation {100 * o_rel:.2f}% (tol 5%)")

    return Outcome(4, "decomposition theory", *_timed(run), limit=5)


def check_jacobian():
    def run():
        prob = small_problem()
        rng = np.random.default_rng(5)
        errs = [jacobian_fd_error(prob, *random_state(prob, rng)) for _ in range(100)]
        worst = max(errs)
        return worst <= 1e-5, f"worst relative error {worst:.2e} over 100 states (tol 1e-5)"

    return Outcome(5, "Jacobian check", *_timed(run), limit=5)


def _fixture_run(cfg, n, w_geo, drift=0.01, with_vo_only=False):
    seq = render_sequence(cfg)
    gt = seq.ground_truth
    frames = [seq.frame(k) for k in range(n)]
    res = run_slam(frames, gt.timestamps[:n], seq.planned_path, seq.dem, cfg.camera, cfg.presumed_illumination,
                   SlamConfig(w_geo=w_geo, scale_drift=drift), pose_hint=lambda k: gt.poses[k],
                   with_vo_only=with_vo_only)
    return res, Trajectory.from_poses(gt.timestamps[:n], gt.poses[:n])


def check_fusion_ordering():
    def run():
        cfg = ScenarioConfig(camera=CAM_256, trajectory="circular", duration=300)
        rmse = []
        for w in (0.0, 1.0, 10.0):
            res, gt = _fixture_run(cfg, 300, w)
            rmse.append(ape(res.fused, gt).rmse)
        ratio = rmse[2] / rmse[0]
        ok = rmse[0] > rmse[1] > rmse[2] and ratio <= 0.5
        return ok, (f"rmse w_geo 0/1/10 = {rmse[0]:.3f}/{rmse[1]:.3f}/{rmse[2]:.3f} m, "
                    f"ratio {ratio:.2f} (tol 0.5, strictly decreasing)")

    return Outcome(6, "fusion benefit and confidence ordering", *_timed(run), limit=120)


def check_trajectory_insensitivity():
    def run():
        rmse = {}
        for kind in ("circular", "forward", "scanning"):
            cfg = ScenarioConfig(camera=CAM_256, trajectory=kind, duration=170)
            res, gt = _fixture_run(cfg, 170, 10.0)
            rmse[kind] = ape(res.fused, gt).rmse
        ratio = max(rmse.values()) / min(rmse.values())
        return ratio <= 2.0, ", ".join(f"{k} {v:.3f} m" for k, v in rmse.items()) + f"; spread x{ratio:.2f} (tol 2)"

    return Outcome(7, "trajectory insensitivity", *_timed(run), limit=300)


def hardware():
    return f"{platform.processor() or platform.machine()}, {os.cpu_count()} cpu, python {platform.python_version()}"


def check_throughput():
    def run():
        cfg = ScenarioConfig(trajectory="circular", duration=150)
        res, _ = _fixture_run(cfg, 150, 10.0, drift=0.0)
        fps = res.fps
        return fps >= 12.0, f"{fps:.1f} frames/s at 480x480, single thread (tol 12; hardware: {hardware()})"

    return Outcome(8, "throughput", *_timed(run))


def check_oracle_identities():
    def run():
        rng = np.random.default_rng(9)
        window, points, obs = nadir_window(seed=21)
        (ka, pa), (kb, pb) = window[0], window[-1]
        P = np.array(list(points.values()))
        ua, ub = project_points(pa, P, CAMERA), project_points(pb, P, CAMERA)
        rt = 0.0
        for i in range(len(P)):
            mp = triangulate(FeatureObservation(ka, i, *ua[i]), FeatureObservation(kb, i, *ub[i]), pa, pb, CAMERA)
            back = project_points(pa, mp.position[None], CAMERA)[0]
            rt = max(rt, float(np.abs(back - ua[i]).max()))
        pose = solve_pnp(P, ub, CAMERA)
        pnp = max(float(np.linalg.norm(pose.t - pb.t)), float(np.linalg.norm(so3_log(pose.R.T @ pb.R))))
        pw, pp = perturb(window, points, 0.5, 0.5, pt_m=0.2, seed=22)
        a = solve_lm(build_problem(pw, pp, obs, CAMERA, fixes=fixes_for(window, (2, 1, 0)), w_geo=0.0))
        b = solve_lm(build_problem(pw, pp, obs, CAMERA))
        bitwise = a.final_cost == b.final_cost and all(
            np.array_equal(a.poses[k].t, b.poses[k].t) and np.array_equal(a.poses[k].R, b.poses[k].R) for k in a.poses)
        ident = max(abs(s.rmse ** 2 - s.mean ** 2 - s.std ** 2)
                    for s in (ape_from_errors(rng.exponential(3.0, 50)) for _ in range(100)))
        ok = rt <= 1e-6 and pnp <= 1e-6 and bitwise and ident <= 1e-9
        return ok, (f"round trip {rt:.1e} px, PnP {pnp:.1e}, zero-weight fusion bit-identical {bitwise}, "
                    f"rmse identity {ident:.1e} (tols 1e-6 / 1e-6 / exact / 1e-9)")

    return Outcome(9, "oracle identities", *_timed(run), limit=10)


CHECKS = [check_shift_theorem, check_multimodal_matching, check_illumination_sweeps, check_decomposition,
          check_jacobian, check_fusion_ordering, check_trajectory_insensitivity, check_throughput,
          check_oracle_identities]


@pytest.mark.parametrize("check", CHECKS, ids=[f"criterion_{i + 1}" for i in range(len(CHECKS))])
def test_acceptance(check, capsys):
    out = check()
    with capsys.disabled():
        print("\n" + out.line)
    assert out.ok, out.line
    assert out.in_time, out.line


if __name__ == "__main__":
    for c in CHECKS:
        print(c().line, flush=True)
