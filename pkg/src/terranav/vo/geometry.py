"""Camera poses, pinhole projection, triangulation and PnP.

A :class:`PoseSE3` is camera-to-world: ``R`` maps camera axes into the world
and ``t`` is the camera centre. A world point ``M`` sits at
``R.T @ (M - t)`` in the camera frame (x right, y down the image, z along the
optical axis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import DegenerateGeometryError

__all__ = [
    "NADIR_R",
    "PoseSE3",
    "FeatureObservation",
    "MapPoint",
    "skew",
    "so3_exp",
    "so3_log",
    "project",
    "project_points",
    "triangulate",
    "triangulate_batch",
    "solve_pnp",
    "refine_pose",
    "essential_bootstrap",
]

# nadir, north-up: image x east, image y south, optical axis down
NADIR_R = np.diag([1.0, -1.0, -1.0])


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    return Rotation.from_rotvec(np.asarray(w, float)).as_matrix()


def so3_log(R):
    return Rotation.from_matrix(R).as_rotvec()


def _orthonormalize(R):
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid camera-to-world transform."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @property
    def position(self):
        return self.t

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return PoseSE3(_orthonormalize(self.R @ other.R), self.R @ other.t + self.t)

    def inverse(self):
        return PoseSE3(self.R.T, -self.R.T @ self.t)

    def to_camera(self, M):
        """World points (..., 3) into the camera frame."""
        return (np.asarray(M, float) - self.t) @ self.R

    def perturb(self, omega, dc):
        """Right-multiplicative rotation update and additive centre update."""
        return PoseSE3(_orthonormalize(self.R @ so3_exp(omega)), self.t + np.asarray(dc, float))

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def quaternion_xyzw(self):
        return Rotation.from_matrix(self.R).as_quat()

    @classmethod
    def from_quaternion(cls, t, q_xyzw):
        return cls(Rotation.from_quat(q_xyzw).as_matrix(), t)

    def __repr__(self):
        return f"PoseSE3(t={np.array2string(self.t, precision=4)})"


@dataclass(frozen=True)
class FeatureObservation:
    frame_id: int
    track_id: int
    u: float
    v: float


@dataclass(frozen=True, eq=False)
class MapPoint:
    track_id: int
    position: np.ndarray
    n_obs: int = 2

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError("map point must be finite")
        if self.n_obs < 2:
            raise ValueError("a map point needs at least two observations")
        object.__setattr__(self, "position", p)


def project_points(pose, points, camera):
    """Pinhole projection of world points (N, 3) -> pixels (N, 2).

    Raises :class:`DegenerateGeometryError` if any point has non-positive depth.
    """
    Xc = pose.to_camera(np.atleast_2d(points))
    if np.any(Xc[:, 2] <= 0):
        raise DegenerateGeometryError("point at or behind the camera")
    f = camera.focal_px
    return np.stack([camera.cx + f * Xc[:, 0] / Xc[:, 2], camera.cy + f * Xc[:, 1] / Xc[:, 2]], axis=1)


def project(pose, point, camera):
    M = point.position if isinstance(point, MapPoint) else point
    return tuple(project_points(pose, np.asarray(M, float)[None], camera)[0])


def _rays(pose, uv, camera):
    """Unit-free viewing directions in the world frame, one per pixel."""
    uv = np.atleast_2d(uv)
    f = camera.focal_px
    d = np.stack([(uv[:, 0] - camera.cx) / f, (uv[:, 1] - camera.cy) / f, np.ones(len(uv))], axis=1)
    return d @ pose.R.T


def triangulate_batch(uv_a, uv_b, pose_a, pose_b, camera, max_reproj=2.0, min_angle=1e-4):
    """Linear least-squares ray intersection for many correspondences.

    Returns ``(points, ok)``; ``ok`` is False where rays are nearly
    parallel, a depth is non-positive, or the reprojection error in either
    view reaches ``max_reproj`` px.
    """
    da = _rays(pose_a, uv_a, camera)
    db = _rays(pose_b, uv_b, camera)
    da /= np.linalg.norm(da, axis=1, keepdims=True)
    db /= np.linalg.norm(db, axis=1, keepdims=True)
    b = pose_b.t - pose_a.t
    # closest points: ca + s da ~ cb + r db
    ab = np.einsum("ij,ij->i", da, db)
    denom = 1.0 - ab**2
    ok = denom > min_angle**2
    denom = np.where(ok, denom, 1.0)
    bda = da @ b
    bdb = db @ b
    s = (bda - ab * bdb) / denom
    r = (ab * bda - bdb) / denom
    pa = pose_a.t + s[:, None] * da
    pb = pose_b.t + r[:, None] * db
    pts = 0.5 * (pa + pb)
    ok &= (s > 0) & (r > 0)
    for pose, uv in ((pose_a, uv_a), (pose_b, uv_b)):
        Xc = pose.to_camera(pts)
        z = np.where(Xc[:, 2] > 0, Xc[:, 2], 1.0)
        f = camera.focal_px
        pu = camera.cx + f * Xc[:, 0] / z
        pv = camera.cy + f * Xc[:, 1] / z
        err = np.hypot(pu - uv[:, 0], pv - uv[:, 1])
        ok &= (Xc[:, 2] > 0) & (err < max_reproj)
    return pts, ok


def triangulate(obs_a, obs_b, pose_a, pose_b, camera, max_reproj=2.0):
    """Single-point triangulation from two observations of one track."""
    if np.linalg.norm(pose_b.t - pose_a.t) < 1e-12:
        raise DegenerateGeometryError("degenerate baseline: camera centres coincide")
    ua = np.array([[obs_a.u, obs_a.v]])
    ub = np.array([[obs_b.u, obs_b.v]])
    da = _rays(pose_a, ua, camera)[0]
    db = _rays(pose_b, ub, camera)[0]
    if np.linalg.norm(np.cross(da / np.linalg.norm(da), db / np.linalg.norm(db))) < 1e-9:
        raise DegenerateGeometryError("parallel rays")
    pts, ok = triangulate_batch(ua, ub, pose_a, pose_b, camera, max_reproj)
    if not ok[0]:
        raise DegenerateGeometryError("triangulated point rejected (depth or reprojection)")
    return MapPoint(obs_a.track_id, pts[0], 2)


# --------------------------------------------------------------------------
# pose from 2-D/3-D correspondences

def _kabsch(src, dst):
    """Rotation and translation with ``dst ~ R src + t``."""
    cs, cd = src.mean(0), dst.mean(0)
    H = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    R = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return R, cd - R @ cs


def _epnp_candidates(Pw, uv, camera):
    """EPnP camera-frame point estimates for 1, 2 and 3 null-space vectors."""
    n = len(Pw)
    c0 = Pw.mean(0)
    A = Pw - c0
    _, sv, vt = np.linalg.svd(A, full_matrices=False)
    planar = sv[2] < 1e-6 * max(sv[0], 1e-12)
    n_ctrl = 3 if planar else 4
    scale = sv / np.sqrt(n)
    ctrl = [c0] + [c0 + scale[i] * vt[i] for i in range(n_ctrl - 1)]
    C = np.array(ctrl)
    # barycentric coordinates of every point w.r.t. the control points
    B = np.vstack([C.T, np.ones(n_ctrl)])
    rhs = np.vstack([Pw.T, np.ones(n)])
    alphas = np.linalg.lstsq(B, rhs, rcond=None)[0].T
    f = camera.focal_px
    un = (uv[:, 0] - camera.cx) / f
    vn = (uv[:, 1] - camera.cy) / f
    M = np.zeros((2 * n, 3 * n_ctrl))
    for j in range(n_ctrl):
        M[0::2, 3 * j] = alphas[:, j]
        M[0::2, 3 * j + 2] = -alphas[:, j] * un
        M[1::2, 3 * j + 1] = alphas[:, j]
        M[1::2, 3 * j + 2] = -alphas[:, j] * vn
    _, _, vt_m = np.linalg.svd(M.T @ M)
    null = vt_m[::-1][: min(3, n_ctrl)]  # smallest singular vectors first
    pairs = [(i, j) for i in range(n_ctrl) for j in range(i + 1, n_ctrl)]
    dist = np.array([np.sum((C[i] - C[j]) ** 2) for i, j in pairs])
    cands = []
    for N in (1, 2, 3):
        if N > len(null):
            break
        V = [null[k].reshape(n_ctrl, 3) for k in range(N)]
        # linearised distance constraints in the products beta_a * beta_b
        terms = [(a, b) for a in range(N) for b in range(a, N)]
        if len(terms) > len(pairs):
            break
        L = np.zeros((len(pairs), len(terms)))
        for r, (i, j) in enumerate(pairs):
            for c, (a, b) in enumerate(terms):
                da = V[a][i] - V[a][j]
                db = V[b][i] - V[b][j]
                L[r, c] = (1.0 if a == b else 2.0) * (da @ db)
        bb = np.linalg.lstsq(L, dist, rcond=None)[0]
        betas = np.zeros(N)
        betas[0] = np.sqrt(abs(bb[0]))
        for a in range(1, N):
            idx = terms.index((0, a))
            betas[a] = bb[idx] / betas[0] if betas[0] > 0 else 0.0
        Cc = sum(betas[k] * V[k] for k in range(N))
        Pc = alphas @ Cc
        if np.mean(Pc[:, 2]) < 0:
            Pc = -Pc
        cands.append(Pc)
    return cands


def _reproj(pose, Pw, uv, camera):
    return _wreproj(pose, Pw, uv, camera, 1.0)


def refine_pose(pose, Pw, uv, camera, iters=20, tol=1e-12, weights=None):
    """Gauss-Newton refinement of a pose against 2-D/3-D correspondences."""
    Pw = np.asarray(Pw, float)
    uv = np.asarray(uv, float)
    w = np.ones(len(Pw)) if weights is None else np.asarray(weights, float)
    f = camera.focal_px
    best = _wreproj(pose, Pw, uv, camera, w)
    lam = 1e-6
    for _ in range(iters):
        Xc = pose.to_camera(Pw)
        x, y, z = Xc.T
        if np.any(z <= 0):
            break
        r = np.concatenate([camera.cx + f * x / z - uv[:, 0], camera.cy + f * y / z - uv[:, 1]])
        # d(u,v)/dXc then dXc/d(omega) = [Xc]x and dXc/dc = -R^T
        n = len(Pw)
        Ju = np.stack([f / z, np.zeros(n), -f * x / z**2], axis=1)
        Jv = np.stack([np.zeros(n), f / z, -f * y / z**2], axis=1)
        sk = np.zeros((n, 3, 3))
        sk[:, 0, 1], sk[:, 0, 2] = -z, y
        sk[:, 1, 0], sk[:, 1, 2] = z, -x
        sk[:, 2, 0], sk[:, 2, 1] = -y, x
        Jw_u = np.einsum("ni,nij->nj", Ju, sk)
        Jw_v = np.einsum("ni,nij->nj", Jv, sk)
        Jc_u = -Ju @ pose.R.T
        Jc_v = -Jv @ pose.R.T
        J = np.vstack([np.hstack([Jw_u, Jc_u]), np.hstack([Jw_v, Jc_v])])
        ww = np.concatenate([w, w])
        H = J.T @ (J * ww[:, None])
        g = J.T @ (r * ww)
        while True:
            try:
                step = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            except np.linalg.LinAlgError:
                lam *= 10
                if lam > 1e8:
                    return pose
                continue
            cand = pose.perturb(step[:3], step[3:])
            c = _wreproj(cand, Pw, uv, camera, w)
            if c <= best:
                pose, best = cand, c
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
            if lam > 1e8:
                return pose
        if np.linalg.norm(step) < tol:
            break
    return pose


def _wreproj(pose, Pw, uv, camera, w):
    Xc = pose.to_camera(Pw)
    z = Xc[:, 2]
    if np.any(z <= 0):
        return np.inf
    f = camera.focal_px
    pu = camera.cx + f * Xc[:, 0] / z
    pv = camera.cy + f * Xc[:, 1] / z
    return float(np.sum(w * ((pu - uv[:, 0]) ** 2 + (pv - uv[:, 1]) ** 2)))


def solve_pnp(points, obs, camera, refine=True):
    """Camera pose from >= 4 world points and their pixel observations.

    Closed-form EPnP initialisation (planar configurations use three control
    points) followed by Gauss-Newton refinement of the reprojection error.
    """
    Pw = np.array([p.position if isinstance(p, MapPoint) else p for p in points], dtype=float)
    uv = np.array([[o.u, o.v] if isinstance(o, FeatureObservation) else o for o in obs], dtype=float)
    if len(Pw) != len(uv):
        raise ValueError("points and observations differ in length")
    if len(Pw) < 4:
        raise DegenerateGeometryError(f"PnP needs at least 4 correspondences, got {len(Pw)}")
    sv = np.linalg.svd(Pw - Pw.mean(0), compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1e-12):
        raise DegenerateGeometryError("PnP points are collinear")
    best, best_cost = None, np.inf
    for Pc in _epnp_candidates(Pw, uv, camera):
        R_cw, t_cw = _kabsch(Pw, Pc)
        pose = PoseSE3(_orthonormalize(R_cw).T, -_orthonormalize(R_cw).T @ t_cw)
        c = _reproj(pose, Pw, uv, camera)
        if c < best_cost:
            best, best_cost = pose, c
    if best is None:
        raise DegenerateGeometryError("PnP failed to find a pose in front of the points")
    if refine:
        best = refine_pose(best, Pw, uv, camera)
    return best


def essential_bootstrap(uv_a, uv_b, camera):
    """Relative pose of view b w.r.t. view a from the essential matrix, unit baseline.

    Returns ``(pose_b, inlier_mask)`` with view a at the identity.
    """
    import cv2

    uv_a = np.ascontiguousarray(uv_a, dtype=np.float64)
    uv_b = np.ascontiguousarray(uv_b, dtype=np.float64)
    if len(uv_a) < 8:
        raise DegenerateGeometryError("essential matrix needs at least 8 correspondences")
    K = camera.K()
    E, mask = cv2.findEssentialMat(uv_a, uv_b, K, method=cv2.RANSAC, prob=0.999, threshold=1.0)
    if E is None or E.shape != (3, 3):
        raise DegenerateGeometryError("essential matrix estimation failed")
    _, R, t, mask2 = cv2.recoverPose(E, uv_a, uv_b, K, mask=mask)
    # cv2 returns the world-to-camera transform of view b
    R_wc = R.T
    c = -R.T @ t.reshape(3)
    c = c / max(np.linalg.norm(c), 1e-12)
    return PoseSE3(_orthonormalize(R_wc), c), mask2.ravel() > 0
