"""Small synthetic bundle-adjustment windows shared by the fusion tests."""

from __future__ import annotations

import numpy as np

from terranav.fusion import build_problem, dense_jacobian, retract
from terranav.georef import GeoFix
from terranav.hillshade import CameraModel
from terranav.vo.geometry import NADIR_R, PoseSE3, project_points, so3_exp

CAMERA = CameraModel(image_width=320, image_height=320)


def nadir_window(n_cams=5, n_points=60, height=40.0, spacing=4.0, seed=0, camera=CAMERA):
    """Nadir cameras zig-zagging along x over a bumpy point cloud, with exact observations.

    The lateral zig-zag keeps the camera centres off a common line, so
    position fixes alone pin down the full rigid frame.

    Returns ``(window, points, observations)`` in the form taken by
    :func:`build_problem`; every point is seen by every camera.
    """
    rng = np.random.default_rng(seed)
    window = []
    for k in range(n_cams):
        tilt = so3_exp(rng.normal(0, 0.01, 3))
        window.append((10 + k, PoseSE3(NADIR_R @ tilt, np.array([k * spacing, 1.5 * (-1) ** k, height]))))
    span = (n_cams - 1) * spacing
    half = 0.35 * height  # inside every footprint (tan of the half field of view is 0.5)
    P = np.column_stack([
        rng.uniform(span - half, half, n_points),
        rng.uniform(-half, half, n_points),
        rng.uniform(-3.0, 3.0, n_points),
    ])
    points = {100 + i: P[i] for i in range(n_points)}
    obs = []
    for k, pose in window:
        uv = project_points(pose, P, camera)
        for i in range(n_points):
            obs.append((k, 100 + i, uv[i, 0], uv[i, 1]))
    return window, points, obs


def fixes_for(window, offset=(0.0, 0.0, 0.0), accepted=True):
    return [GeoFix(k, float(k), tuple(np.asarray(p.t) + offset), 0.1, 0.8, accepted) for k, p in window]


def perturb(window, points, rot_deg, trans_m, pt_m=0.0, seed=1, skip_first=True):
    """Random rotations/translations of fixed magnitude on each camera (and points)."""
    rng = np.random.default_rng(seed)
    out = []
    for i, (k, p) in enumerate(window):
        if skip_first and i == 0:
            out.append((k, p))
            continue
        a = rng.normal(size=3)
        d = rng.normal(size=3)
        w = np.deg2rad(rot_deg) * a / np.linalg.norm(a)
        out.append((k, PoseSE3(p.R @ so3_exp(w), p.t + trans_m * d / np.linalg.norm(d))))
    pts = {t: x + pt_m * rng.normal(size=3) for t, x in points.items()}
    return out, pts


def jacobian_fd_error(prob, R, C, P, h=1e-6):
    """Relative Frobenius error of the analytic Jacobian against central differences."""
    _, Ja = dense_jacobian(prob, R, C, P)
    Jn = np.zeros_like(Ja)
    for j in range(Ja.shape[1]):
        d = np.zeros(Ja.shape[1])
        d[j] = h
        rp, _ = dense_jacobian(prob, *retract(prob, R, C, P, d))
        rm, _ = dense_jacobian(prob, *retract(prob, R, C, P, -d))
        Jn[:, j] = (rp - rm) / (2 * h)
    return float(np.linalg.norm(Ja - Jn) / np.linalg.norm(Jn))


def random_state(prob, rng, rot_sigma=0.02, trans_sigma=0.5, pt_sigma=0.5):
    """A random linearisation point near the problem's stored state."""
    n = 6 * len(prob.free_cams) + 3 * len(prob.point_ids)
    d = np.zeros(n)
    nc = 6 * len(prob.free_cams)
    for k in range(len(prob.free_cams)):
        d[6 * k:6 * k + 3] = rng.normal(0, rot_sigma, 3)
        d[6 * k + 3:6 * k + 6] = rng.normal(0, trans_sigma, 3)
    d[nc:] = rng.normal(0, pt_sigma, n - nc)
    return retract(prob, prob.R, prob.C, prob.P, d)


def small_problem(seed=0, w_geo=10.0):
    window, points, obs = nadir_window(n_cams=3, n_points=12, seed=seed)
    return build_problem(window, points, obs, CAMERA, fixes=fixes_for(window, (0.3, -0.2, 0.1)), w_geo=w_geo)
