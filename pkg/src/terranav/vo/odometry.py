"""Monocular visual odometry: tracking, PnP, triangulation and keyframes.

The odometry frame has the first camera centre at its origin. Scale and
orientation come from the bootstrap: either two known poses (``pose_hint``)
or the essential matrix with a unit baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateGeometryError
from .features import detect_corners, extract_patches, flow_inliers, track_features
from .geometry import PoseSE3, essential_bootstrap, refine_pose, triangulate_batch

__all__ = ["KeyFrame", "FrameRecord", "VisualOdometry", "is_keyframe"]

KF_MIN_GAP = 20
KF_MIN_FEATURES = 50
KF_MAX_TRACKED = 0.90


def is_keyframe(frames_since_last_kf, current_feature_count, tracked_fraction):
    """Keyframe rule: enough frames, enough features, and enough new content."""
    return (
        frames_since_last_kf > KF_MIN_GAP
        and current_feature_count > KF_MIN_FEATURES
        and tracked_fraction < KF_MAX_TRACKED
    )


@dataclass
class KeyFrame:
    frame_id: int
    t: float
    pose: PoseSE3
    n_features: int
    tracked_fraction: float
    obs: dict = field(default_factory=dict, repr=False)  # track_id -> (u, v)
    parent: int | None = None  # previous keyframe
    rel_parent: PoseSE3 | None = None  # pose relative to ``parent`` when created


@dataclass
class FrameRecord:
    """Online result for one frame; ``rel`` is the pose relative to keyframe ``anchor``."""

    frame_id: int
    t: float
    pose: PoseSE3
    anchor: int
    rel: PoseSE3
    lost: bool = False
    n_tracked: int = 0


class VisualOdometry:
    """Sequential odometry front end.

    Parameters
    ----------
    camera : CameraModel
    pose_hint : callable, optional
        ``pose_hint(frame_id) -> PoseSE3`` in the odometry frame, used once
        for the two bootstrap views. Without it the essential matrix is used
        and the first baseline has unit length.
    min_parallax_deg : float
        Image motion, as a viewing angle, a track needs before it is
        triangulated; also ends the bootstrap.
    n_features : int
        Target number of live tracks; new corners are detected below 70 %.
    scale_drift : float
        Test hook: every newly triangulated point has its depth from the
        triangulating camera multiplied by ``1 + scale_drift``, emulating
        the slow scale drift of a real monocular front end.
    """

    def __init__(self, camera, pose_hint=None, n_features=200, min_parallax_deg=16.0,
                 max_bootstrap_frames=15, min_pnp=8, max_reproj=2.0, scale_drift=0.0):
        self.camera = camera
        self.pose_hint = pose_hint
        self.n_features = n_features
        self.min_parallax_px = camera.focal_px * np.tan(np.radians(min_parallax_deg))
        self.max_bootstrap_frames = max_bootstrap_frames
        self.min_pnp = min_pnp
        self.max_reproj = max_reproj
        self.scale_drift = scale_drift

        self.frames = []
        self.keyframes = []
        self.points = {}
        self.initialized = False
        self._next_tid = 0
        self._prev = None
        self._ids = np.empty(0, int)
        self._uv = np.empty((0, 2))
        self._uv0 = np.empty((0, 2))
        self._f0 = np.empty(0, int)
        self._tmpl = np.empty((0, 11, 11), np.float32)
        self._flow = np.zeros(2)
        self._skipped = 0
        self._boot = []  # (frame_id, t, ids, uv) while not initialized
        self._kf_ids = set()

    # -- public state ------------------------------------------------------

    @property
    def lost(self):
        return bool(self.frames and self.frames[-1].lost)

    @property
    def pose(self):
        return self.frames[-1].pose if self.frames else None

    def positions(self):
        return np.array([f.pose.t for f in self.frames])

    def keyframe(self, frame_id):
        for kf in reversed(self.keyframes):
            if kf.frame_id == frame_id:
                return kf
        raise KeyError(frame_id)

    # -- helpers -----------------------------------------------------------

    def _new_tracks(self, img, frame_id):
        want = self.n_features - len(self._ids)
        if want <= 0:
            return
        mask = np.ones(img.shape, bool)
        r = 8
        for u, v in self._uv:
            iu, iv = int(round(u)), int(round(v))
            mask[max(iv - r, 0):iv + r + 1, max(iu - r, 0):iu + r + 1] = False
        pts = detect_corners(img, max_n=want, mask=mask)
        n = len(pts)
        if n == 0:
            return
        ids = np.arange(self._next_tid, self._next_tid + n)
        self._next_tid += n
        self._ids = np.concatenate([self._ids, ids])
        self._uv = np.vstack([self._uv, pts])
        self._uv0 = np.vstack([self._uv0, pts])
        self._f0 = np.concatenate([self._f0, np.full(n, frame_id)])
        self._tmpl = np.concatenate([self._tmpl, extract_patches(img, pts)])

    def _keep(self, mask):
        self._ids = self._ids[mask]
        self._uv = self._uv[mask]
        self._uv0 = self._uv0[mask]
        self._f0 = self._f0[mask]
        self._tmpl = self._tmpl[mask]

    def _track(self, img):
        pred = self._flow * (1 + self._skipped)
        new, _, ok = track_features(None, img, self._uv, prediction=pred, templates=self._tmpl)
        if ok.sum() >= 6:
            idx = np.nonzero(ok)[0]
            ok[idx[~flow_inliers(self._uv[idx], new[idx])]] = False
        if ok.sum() >= 3:
            self._flow = np.median(new[ok] - self._uv[ok], axis=0) / (1 + self._skipped)
        self._uv = np.where(ok[:, None], new, self._uv)
        return ok

    def _add_keyframe(self, rec, n_features, tracked_fraction, parent=None, rel_parent=None):
        obs = {int(i): (float(u), float(v)) for i, (u, v) in zip(self._ids, self._uv)}
        kf = KeyFrame(rec.frame_id, rec.t, rec.pose, n_features, tracked_fraction, obs, parent, rel_parent)
        self.keyframes.append(kf)
        self._kf_ids.add(rec.frame_id)
        return kf

    def _tracked_fraction(self):
        if not self.keyframes:
            return 0.0
        ref = self.keyframes[-1].obs
        if not ref:
            return 0.0
        live = sum(1 for i in self._ids if int(i) in ref)
        return live / len(ref)

    def _triangulate_new(self, frame_id, pose):
        need = np.array([int(i) not in self.points for i in self._ids], bool)
        if not need.any():
            return 0
        parallax = np.hypot(*(self._uv - self._uv0).T)
        cand = need & (parallax >= self.min_parallax_px) & (self._f0 < frame_id)
        added = 0
        for f0 in np.unique(self._f0[cand]):
            sel = np.nonzero(cand & (self._f0 == f0))[0]
            pose0 = self.frames[f0].pose
            pts, ok = triangulate_batch(self._uv0[sel], self._uv[sel], pose0, pose, self.camera,
                                        max_reproj=self.max_reproj)
            if self.scale_drift:
                pts = pose.t + (pts - pose.t) * (1.0 + self.scale_drift)
            for k, good in zip(sel, ok):
                if good:
                    self.points[int(self._ids[k])] = pts[np.nonzero(sel == k)[0][0]]
                    added += 1
        return added

    def _solve_pose(self, init):
        has = np.array([int(i) in self.points for i in self._ids], bool)
        if has.sum() < self.min_pnp:
            return None, has
        idx = np.nonzero(has)[0]
        P = np.array([self.points[int(self._ids[k])] for k in idx])
        uv = self._uv[idx]
        pose = refine_pose(init, P, uv, self.camera, iters=10)
        Xc = pose.to_camera(P)
        f = self.camera.focal_px
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.hypot(self.camera.cx + f * Xc[:, 0] / Xc[:, 2] - uv[:, 0],
                           self.camera.cy + f * Xc[:, 1] / Xc[:, 2] - uv[:, 1])
        good = (Xc[:, 2] > 0) & (err < 3.0 * self.max_reproj)
        if good.sum() < self.min_pnp:
            return None, has
        if not good.all():
            pose = refine_pose(pose, P[good], uv[good], self.camera, iters=10)
        inlier = np.ones(len(self._ids), bool)
        inlier[idx[~good]] = False
        return pose, inlier

    # -- bootstrap ---------------------------------------------------------

    def _bootstrap(self):
        (f0, t0, ids0, uv0) = self._boot[0]
        fb, tb, idsb, uvb = self._boot[-1]
        if self.pose_hint is not None:
            pa, pb = self.pose_hint(f0), self.pose_hint(fb)
            # odometry frame origin is the first camera centre
            pa = PoseSE3(pa.R, pa.t - pa.t)
            pb = PoseSE3(pb.R, pb.t - self.pose_hint(f0).t)
        else:
            pos0 = {int(i): k for k, i in enumerate(ids0)}
            sel = [pos0[int(i)] for i in idsb]
            pb, inl = essential_bootstrap(uv0[sel], uvb, self.camera)
            pa = PoseSE3.identity()
            # keep the essential-matrix frame: first camera at the origin
        pts, ok = triangulate_batch(self._uv0, self._uv, pa, pb, self.camera, self.max_reproj)
        if ok.sum() < self.min_pnp:
            raise DegenerateGeometryError("bootstrap triangulated too few points")
        for k in np.nonzero(ok)[0]:
            self.points[int(self._ids[k])] = pts[k]
        # poses of every buffered frame from the new map
        hist = {}
        for fid, t, ids, uv in self._boot:
            hist[fid] = (t, ids, uv)
        prev_pose = pa
        for fid, (t, ids, uv) in sorted(hist.items()):
            if fid == f0:
                pose = pa
            elif fid == fb:
                pose = pb
            else:
                mask = np.array([int(i) in self.points for i in ids], bool)
                P = np.array([self.points[int(i)] for i in ids[mask]])
                frac = (fid - f0) / max(fb - f0, 1)
                init = PoseSE3(pa.R, pa.t + frac * (pb.t - pa.t))
                pose = refine_pose(init, P, uv[mask], self.camera) if mask.sum() >= self.min_pnp else prev_pose
            prev_pose = pose
            if fid == f0:
                rec = FrameRecord(fid, t, pose, fid, PoseSE3.identity(), False, len(ids))
                self.frames.append(rec)
                kf = KeyFrame(fid, t, pose, len(ids0), 1.0, {int(i): tuple(p) for i, p in zip(ids0, uv0)})
                self.keyframes.append(kf)
                self._kf_ids.add(fid)
            else:
                self.frames.append(FrameRecord(fid, t, pose, f0, pa.inverse().compose(pose), False, len(ids)))
        self.initialized = True
        self._boot = []

    # -- main entry --------------------------------------------------------

    def advance(self, frame, t):
        """Process the next frame; returns ``(FrameRecord, KeyFrame or None)``.

        Before initialisation, frames are buffered until the tracked
        features have moved ``min_parallax_px``; the buffered frames then get
        their poses in one go and the call returns the last of them.
        """
        img = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame, float)
        frame_id = len(self.frames) + len(self._boot)
        if not self.initialized:
            return self._advance_boot(img, frame_id, t)
        prev_rec = self.frames[-1]
        if not np.ptp(img) > 0:
            return self._hold(frame_id, t, prev_rec)
        saved = (self._uv.copy(), self._flow.copy())
        ok = self._track(img)
        if ok.sum() < self.min_pnp:
            # keep the previous image and tracks so the next frame can recover
            self._uv, self._flow = saved
            return self._hold(frame_id, t, prev_rec)
        self._keep(ok)
        # constant-velocity initial guess from the last two tracked frames
        good = [f for f in self.frames[-(self._skipped + 2):] if not f.lost]
        v = good[-1].pose.t - good[-2].pose.t if len(good) >= 2 else np.zeros(3)
        init = PoseSE3(prev_rec.pose.R, prev_rec.pose.t + v * (1 + self._skipped))
        pose, inlier = self._solve_pose(init)
        if pose is None:
            return self._hold(frame_id, t, prev_rec)
        self._keep(inlier)
        self._skipped = 0
        anchor = self.keyframes[-1]
        rec = FrameRecord(frame_id, t, pose, anchor.frame_id, anchor.pose.inverse().compose(pose),
                          False, len(self._ids))
        self.frames.append(rec)
        self._prev = img
        self._triangulate_new(frame_id, pose)
        kf = None
        frac = self._tracked_fraction()
        if is_keyframe(frame_id - anchor.frame_id, len(self._ids), frac):
            parent, rel_parent = rec.anchor, rec.rel
            rec.anchor, rec.rel = frame_id, PoseSE3.identity()
            kf = self._add_keyframe(rec, len(self._ids), frac, parent, rel_parent)
        if len(self._ids) < 0.7 * self.n_features:
            self._new_tracks(img, frame_id)
            if kf is not None:
                # tracks born on a keyframe are observed by it
                kf.obs.update((int(i), (float(u), float(v))) for i, (u, v) in zip(self._ids, self._uv))
        return rec, kf

    def _hold(self, frame_id, t, prev_rec):
        self._skipped += 1
        rec = FrameRecord(frame_id, t, prev_rec.pose, prev_rec.anchor, prev_rec.rel, True, 0)
        self.frames.append(rec)
        return rec, None

    def _advance_boot(self, img, frame_id, t):
        if self._prev is None:
            self._prev = img
            self._new_tracks(img, frame_id)
            self._boot.append((frame_id, t, self._ids.copy(), self._uv.copy()))
            return None, None
        ok = self._track(img)
        self._keep(ok)
        self._prev = img
        self._boot.append((frame_id, t, self._ids.copy(), self._uv.copy()))
        parallax = np.median(np.hypot(*(self._uv - self._uv0).T)) if len(self._ids) else 0.0
        if parallax >= self.min_parallax_px or len(self._boot) > self.max_bootstrap_frames:
            self._bootstrap()
            rec = self.frames[-1]
            if len(self._ids) < 0.7 * self.n_features:
                self._new_tracks(img, frame_id)
            return rec, None
        return None, None

    def apply_refinement(self, poses, points):
        """Merge refined keyframe poses and map points back by id.

        Live-track points that were not part of the refinement, and every
        frame anchored on a refined keyframe, are moved with it so that the
        tracking state stays in one consistent frame.
        """
        if not poses:
            return
        old = {kf.frame_id: kf.pose for kf in self.keyframes}
        for kf in self.keyframes:
            if kf.frame_id in poses:
                kf.pose = poses[kf.frame_id]
        newest = max(poses)
        if newest in old:
            D = poses[newest].compose(old[newest].inverse())
            for tid in self._ids:
                tid = int(tid)
                if tid in self.points and tid not in points:
                    self.points[tid] = D.R @ self.points[tid] + D.t
        for tid, p in points.items():
            self.points[tid] = np.asarray(p, float)
        kf_pose = {kf.frame_id: kf.pose for kf in self.keyframes}
        for rec in self.frames:
            if rec.anchor in poses:
                rec.pose = kf_pose[rec.anchor].compose(rec.rel)
