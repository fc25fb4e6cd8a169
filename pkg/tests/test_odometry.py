from __future__ import annotations

import numpy as np
import pytest

from terranav.fusion import align_points
from terranav.hillshade import CameraModel
from terranav.simworld import ScenarioConfig, render_sequence
from terranav.vo.geometry import PoseSE3
from terranav.vo.odometry import VisualOdometry

SMALL = CameraModel(image_width=256, image_height=256)


def run_vo(seq, n, hint=True, blank=()):
    gt = seq.ground_truth
    c0 = gt.poses[0].t
    h = (lambda k: PoseSE3(gt.poses[k].R, gt.poses[k].t - c0)) if hint else None
    vo = VisualOdometry(seq.config.camera, pose_hint=h)
    for k in range(n):
        img = seq.frame(k).pixels
        vo.advance(np.zeros_like(img) if k in blank else img, float(gt.timestamps[k]))
    return vo


@pytest.fixture(scope="module")
def short_seq():
    return render_sequence(ScenarioConfig(camera=SMALL, duration=80))


def test_first_frame_is_origin(short_seq):
    for hint in (True, False):
        vo = run_vo(short_seq, 30, hint)
        assert vo.initialized
        assert np.array_equal(vo.frames[0].pose.t, np.zeros(3))


def test_blank_frame_is_lost_and_held(short_seq):
    vo = run_vo(short_seq, 45, blank={40})
    assert vo.frames[40].lost and not vo.frames[39].lost
    assert np.array_equal(vo.frames[40].pose.t, vo.frames[39].pose.t)
    assert not vo.frames[44].lost


def test_keyframes_well_formed(short_seq):
    vo = run_vo(short_seq, 80)
    ids = [kf.frame_id for kf in vo.keyframes]
    assert ids[0] == 0 and all(b - a > 20 for a, b in zip(ids, ids[1:]))
    assert all(0.0 <= kf.tracked_fraction <= 1.0 for kf in vo.keyframes)
    assert all(len(kf.obs) > 0 for kf in vo.keyframes)


def test_refinement_identity_is_noop(short_seq):
    vo = run_vo(short_seq, 80)
    before = [f.pose.t.copy() for f in vo.frames]
    vo.apply_refinement({kf.frame_id: kf.pose for kf in vo.keyframes}, dict(vo.points))
    assert np.allclose([f.pose.t for f in vo.frames], before, atol=1e-12)


def test_noiseless_replay_drift():
    # full-resolution camera; at 256 px the attitude random walk is several times larger
    seq = render_sequence(ScenarioConfig(duration=300))
    vo = run_vo(seq, 300)
    gt = seq.ground_truth.positions
    est = vo.positions() + gt[0]
    path = np.sum(np.linalg.norm(np.diff(gt, axis=0), axis=1))
    assert not any(f.lost for f in vo.frames)
    assert np.linalg.norm(est[-1] - gt[-1]) <= 0.005 * path


def test_monocular_gauge():
    """Scaling the whole world by c scales the odometry-aligned shape by c."""
    out = {}
    for c in (1.0, 2.5):
        cfg = ScenarioConfig(camera=SMALL, duration=60, cell_size=c, amplitude=20 * c,
                             flight_height=40 * c, speed=c, plan_error=2 * c, detrend_scale=16 * c)
        seq = render_sequence(cfg)
        vo = run_vo(seq, 60, hint=False)
        out[c] = (vo.positions(), seq.ground_truth.positions)
    (v1, g1), (v2, g2) = out[1.0], out[2.5]
    assert np.allclose(g2, 2.5 * g1)
    r = []
    for v, g in ((v1, g1), (v2, g2)):
        H = align_points(v, g, similarity=True)
        r.append(np.sqrt(np.mean(np.sum((H.apply(v) - g) ** 2, axis=1))))
    assert r[1] == pytest.approx(2.5 * r[0], rel=1e-6)
