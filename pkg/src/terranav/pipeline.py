"""End-to-end localisation: odometry, keyframe position fixes and windowed fusion."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError
from .fusion import PLANAR_SPREAD, FrameTransform, align_points, build_problem, solve_lm, spans_plane
from .georef import georeference
from .vo.geometry import PoseSE3, so3_exp, so3_log
from .vo.odometry import VisualOdometry
from .vo.trajectory import Trajectory

__all__ = ["SlamConfig", "SlamResult", "estimate_alignment", "run_slam"]


@dataclass(frozen=True)
class SlamConfig:
    w_geo: float = 10.0
    window: int = 15
    similarity: bool = False
    huber: bool = False
    min_peak: float = 0.05
    lba: bool = True
    n_features: int = 200
    min_parallax_deg: float = 16.0
    scale_drift: float = 0.0
    lba_iters: int = 50
    spread_corrections: bool = True

    def __post_init__(self):
        if self.w_geo < 0:
            raise ValueError("w_geo must be non-negative")
        if self.window < 2:
            raise ValueError("window must hold at least two keyframes")


@dataclass
class SlamResult:
    fused: Trajectory
    vo_only: Trajectory | None
    fixes: list
    keyframe_ids: list
    transform: FrameTransform
    alignment_mode: str
    lba_reports: list = field(default_factory=list)
    timings_ms: dict = field(default_factory=dict)
    n_frames: int = 0
    n_lost: int = 0

    @property
    def processing_ms(self):
        return sum(self.timings_ms.values())

    @property
    def fps(self):
        s = self.processing_ms / 1000.0
        return self.n_frames / s if s > 0 else float("inf")

    def report(self):
        iters = [r["iterations"] for r in self.lba_reports]
        return {
            "frames": self.n_frames,
            "keyframes": len(self.keyframe_ids),
            "fixes_accepted": int(sum(f.accepted for f in self.fixes)),
            "fixes_total": len(self.fixes),
            "lost_frames": self.n_lost,
            "lba_runs": len(self.lba_reports),
            "mean_lba_iters": float(np.mean(iters)) if iters else 0.0,
            "lba_degraded": int(sum(r["degraded"] for r in self.lba_reports)),
            "alignment": self.alignment_mode,
            "stage_ms": dict(self.timings_ms),
            "wall_time_per_frame_ms": self.processing_ms / max(self.n_frames, 1),
            "frames_per_second": self.fps,
        }


def estimate_alignment(vo_positions, fixes, similarity=False):
    """Odometry-to-world transform from accepted fixes.

    Uses the closed-form rigid (or similarity) fit when the paired positions
    span a plane; with fewer than three pairs or a straight-line flight the
    rotation about the line is unobservable and only the mean offset is
    estimated; the same holds when the fixes hug a line (``PLANAR_SPREAD``).
    Returns ``(transform, mode)`` with ``mode`` one of
    ``"rigid"``, ``"similarity"``, ``"translation"`` or ``"identity"``.
    """
    src, dst = [], []
    for f in fixes:
        if f.accepted and f.keyframe_id in vo_positions:
            src.append(vo_positions[f.keyframe_id])
            dst.append(f.position)
    if not src:
        return FrameTransform(), "identity"
    src, dst = np.array(src), np.array(dst)
    if not spans_plane(dst, PLANAR_SPREAD):
        return FrameTransform(t=np.mean(dst - src, axis=0)), "translation"
    try:
        return align_points(src, dst, similarity), ("similarity" if similarity else "rigid")
    except DegenerateGeometryError:
        return FrameTransform(t=np.mean(dst - src, axis=0)), "translation"


class _Timer:
    def __init__(self):
        self.ms = {"tracking": 0.0, "georef": 0.0, "lba": 0.0, "output": 0.0}

    def add(self, key, t0):
        self.ms[key] += (time.perf_counter() - t0) * 1000.0


def _lba_step(vo, fixes, raw, cfg):
    """Refine the newest ``cfg.window`` keyframes; returns the solver report.

    Fixes enter the odometry frame through the alignment of the front-end
    keyframe positions ``raw``. Aligning to the refined positions instead
    would feed each correction back into the next alignment, and the
    odometry frame would slowly rotate away from the camera attitudes.
    """
    kfs = vo.keyframes
    window = kfs[-cfg.window:]
    older = kfs[max(0, len(kfs) - 2 * cfg.window):-len(window)] if len(kfs) > len(window) else []
    obs = [(kf.frame_id, tid, u, v) for kf in list(older) + list(window)
           for tid, (u, v) in kf.obs.items() if tid in vo.points]
    geo = []
    if cfg.w_geo > 0:
        H, _ = estimate_alignment(raw, fixes.values(), cfg.similarity)
        Hi = H.inverse()
        win_ids = {kf.frame_id for kf in window}
        geo = [dataclasses.replace(f, position=tuple(Hi.apply(f.position)))
               for f in fixes.values() if f.accepted and f.keyframe_id in win_ids]
    prob = build_problem([(kf.frame_id, kf.pose) for kf in window], vo.points, obs, vo.camera,
                         fixes=geo, w_geo=cfg.w_geo, fixed=[(kf.frame_id, kf.pose) for kf in older],
                         huber=cfg.huber)
    if len(prob.point_ids) == 0 and len(prob.fix_cam) == 0:
        return None
    res = solve_lm(prob, max_iters=cfg.lba_iters)
    if not res.degraded:
        vo.apply_refinement(res.poses, res.points)
    return res.report()


def _blend(a, b, s):
    """Pose between ``a`` (s=0) and ``b`` (s=1): linear in position, slerp in rotation."""
    d = so3_log(a.R.T @ b.R)
    return PoseSE3(a.R @ so3_exp(s * d), (1.0 - s) * a.t + s * b.t)


def _frame_poses(vo, spread=True):
    """Every frame's pose from its (possibly refined) anchor keyframe.

    With ``spread``, the correction that fusion applied to the next keyframe
    is phased in linearly over the frames leading up to it, so frames
    between keyframes do not keep the open-loop drift of the front end.
    """
    kfs = {kf.frame_id: kf for kf in vo.keyframes}
    child = {kf.parent: kf for kf in vo.keyframes if kf.parent is not None}
    out = []
    for r in vo.frames:
        if r.anchor not in kfs:
            out.append(r.pose)
            continue
        a = kfs[r.anchor]
        pose = a.pose.compose(r.rel)
        nxt = child.get(r.anchor) if spread else None
        if nxt is not None and r.frame_id != a.frame_id:
            # where the forward chain puts the next keyframe vs where fusion put it
            corr = nxt.pose.compose(a.pose.compose(nxt.rel_parent).inverse())
            s = (r.frame_id - a.frame_id) / (nxt.frame_id - a.frame_id)
            pose = _blend(pose, corr.compose(pose), s)
        out.append(pose)
    return out


def run_slam(frames, timestamps, planned_path, dem, camera, presumed_illum, config=None,
             pose_hint=None, flight_height=None, with_vo_only=True):
    """Run the full pipeline over an ordered frame sequence.

    Parameters
    ----------
    frames : iterable of RasterImage
        Consumed once, in order.
    timestamps : sequence of float
    planned_path : PlannedPath
        Each keyframe is georeferenced against the entry nearest in time.
    pose_hint : callable, optional
        Known poses for the two-view bootstrap, see :class:`VisualOdometry`.
    with_vo_only : bool
        Also run an odometry-only pass (no fusion) on the same frames, aligned
        to the same fixes, as a baseline.

    Only odometry, georeferencing and fusion count towards the stage
    timings; producing the frames does not.
    """
    cfg = config or SlamConfig()
    timestamps = np.asarray(timestamps, float)
    kw = dict(pose_hint=pose_hint, n_features=cfg.n_features, min_parallax_deg=cfg.min_parallax_deg,
              scale_drift=cfg.scale_drift)
    vo = VisualOdometry(camera, **kw)
    base = VisualOdometry(camera, **kw) if with_vo_only else None
    timer = _Timer()
    fixes = {}
    raw = {}  # front-end keyframe positions before any refinement
    pending = {}  # frame images held until the bootstrap assigns keyframe 0
    reports = []
    n = 0
    for k, frame in enumerate(frames):
        t = float(timestamps[k])
        n += 1
        t0 = time.perf_counter()
        n_kf = len(vo.keyframes)
        vo.advance(frame, t)
        timer.add("tracking", t0)
        if base is not None:
            base.advance(frame, t)
        if not vo.initialized:
            pending[k] = frame
        for kf in vo.keyframes[n_kf:]:
            raw[kf.frame_id] = kf.pose.t.copy()
            img = frame if kf.frame_id == k else pending[kf.frame_id]
            t0 = time.perf_counter()
            fixes[kf.frame_id] = georeference(img, planned_path.nearest(kf.t), dem, camera, presumed_illum,
                                              flight_height=flight_height, min_peak=cfg.min_peak,
                                              keyframe_id=kf.frame_id, t=kf.t)
            timer.add("georef", t0)
            if cfg.lba and len(vo.keyframes) >= 2:
                t0 = time.perf_counter()
                rep = _lba_step(vo, fixes, raw, cfg)
                timer.add("lba", t0)
                if rep is not None:
                    reports.append(rep)
        if vo.initialized:
            pending.clear()
    if not vo.initialized:
        raise DegenerateGeometryError("odometry never initialised: sequence too short or textureless")

    t0 = time.perf_counter()
    fix_list = [fixes[k] for k in sorted(fixes)]
    H, mode = estimate_alignment({kf.frame_id: kf.pose.t for kf in vo.keyframes}, fix_list, cfg.similarity)
    fused = Trajectory.from_poses(timestamps[:n], [H.apply_pose(p) for p in _frame_poses(vo, cfg.spread_corrections)])
    timer.add("output", t0)
    vo_only = None
    if base is not None and base.initialized:
        pos = {r.frame_id: r.pose.t for r in base.frames}
        Hb, _ = estimate_alignment(pos, fix_list, cfg.similarity)
        vo_only = Trajectory.from_poses(timestamps[:n], [Hb.apply_pose(p) for p in _frame_poses(base)])
    return SlamResult(
        fused=fused,
        vo_only=vo_only,
        fixes=fix_list,
        keyframe_ids=[kf.frame_id for kf in vo.keyframes],
        transform=H,
        alignment_mode=mode,
        lba_reports=reports,
        timings_ms=timer.ms,
        n_frames=n,
        n_lost=sum(r.lost for r in vo.frames),
    )
