"""Trajectory alignment and windowed bundle adjustment with position fixes.

The cost of a window is

    f = 1/2 sum_ij w_i e_ij^T e_ij + 1/2 sum_k w_k^G e_k^T e_k

with reprojection residuals ``e_ij = project(P_i, M_j) - m_ij`` and geo
residuals ``e_k = fix_k - C_k`` (signed, so that the squared norm is the sum
of squared per-axis deviations). It is minimised by Levenberg-Marquardt over
pose perturbations (rotation vector, right-multiplied; additive centre) and
point positions, eliminating the points with the Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DegenerateGeometryError
from .vo.geometry import PoseSE3, so3_exp

__all__ = [
    "FrameTransform",
    "align_points",
    "align_trajectories",
    "reprojection_residual",
    "geo_residual",
    "LbaProblem",
    "LbaResult",
    "build_problem",
    "problem_cost",
    "dense_jacobian",
    "retract",
    "solve_lm",
    "spans_plane",
    "PLANAR_SPREAD",
]

HUBER_DELTA = 2.0
# fixes spread less than this (second over first singular value) leave the
# rotation about the flight line too weakly determined to estimate
PLANAR_SPREAD = 0.05


def spans_plane(positions, spread=PLANAR_SPREAD):
    """True when ``positions`` (n, 3) are at least three and not close to a line."""
    x = np.asarray(positions, float).reshape(-1, 3)
    if len(x) < 3:
        return False
    sv = np.linalg.svd(x - x.mean(0), compute_uv=False)
    return bool(sv[1] >= spread * sv[0] and sv[0] > 0)


# --------------------------------------------------------------------------
# frame alignment

@dataclass(frozen=True, eq=False)
class FrameTransform:
    """``x -> scale * R @ x + t``; rigid when ``scale == 1``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        R = np.array(self.R, float).reshape(3, 3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", np.array(self.t, float).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls):
        return cls()

    def apply(self, x):
        return self.scale * np.asarray(x, float) @ self.R.T + self.t

    def inverse(self):
        Ri = self.R.T
        return FrameTransform(Ri, -(Ri @ self.t) / self.scale, 1.0 / self.scale)

    def apply_pose(self, pose):
        return PoseSE3(self.R @ pose.R, self.apply(pose.t))

    def as_dict(self):
        return {"R": self.R.tolist(), "t": self.t.tolist(), "scale": self.scale}


def align_points(src, dst, similarity=False):
    """Least-squares ``H`` with ``dst ~ H(src)`` (centroid/SVD closed form).

    Raises :class:`DegenerateGeometryError` for fewer than 3 pairs or a
    collinear configuration, where the rotation about the line is unobservable.
    """
    src = np.asarray(src, float).reshape(-1, 3)
    dst = np.asarray(dst, float).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("point sets differ in length")
    if len(src) < 3:
        raise DegenerateGeometryError(f"alignment needs at least 3 pairs, got {len(src)}")
    ms, md = src.mean(0), dst.mean(0)
    a, b = src - ms, dst - md
    for pts in (a, b):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1e-12):
            raise DegenerateGeometryError("collinear configuration: rotation about the line is unobservable")
    cov = b.T @ a / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    R = u @ np.diag(s) @ vt
    c = 1.0
    if similarity:
        var = np.mean(np.sum(a * a, axis=1))
        c = float(np.sum(d * s) / var)
    t = md - c * R @ ms
    return FrameTransform(R, t, c)


def align_trajectories(vo_positions, fixes, similarity=False):
    """Align odometry keyframe positions to accepted fixes, paired by keyframe id.

    ``vo_positions`` maps keyframe id to position.
    """
    src, dst = [], []
    for f in fixes:
        if f.accepted and f.keyframe_id in vo_positions:
            src.append(vo_positions[f.keyframe_id])
            dst.append(f.position)
    return align_points(np.array(src).reshape(-1, 3), np.array(dst).reshape(-1, 3), similarity)


# --------------------------------------------------------------------------
# residuals

def reprojection_residual(pose, point, obs, camera):
    """``(project(pose, point) - (u, v), valid)``; invalid behind the camera."""
    M = getattr(point, "position", point)
    uv = (obs.u, obs.v) if hasattr(obs, "u") else obs
    Xc = pose.to_camera(np.asarray(M, float))
    if not Xc[2] > 0:
        return np.zeros(2), False
    f = camera.focal_px
    e = np.array([camera.cx + f * Xc[0] / Xc[2] - uv[0], camera.cy + f * Xc[1] / Xc[2] - uv[1]])
    return e, True


def geo_residual(pose_position, fix):
    """Signed ``fix - position`` per axis (m)."""
    p = getattr(fix, "position", fix)
    return np.asarray(p, float) - np.asarray(pose_position, float)


# --------------------------------------------------------------------------
# problem

@dataclass(eq=False)
class LbaProblem:
    """Window state and measurements.

    Cameras ``0 .. n_window-1`` are optimised (except camera 0 when
    ``gauge_fixed``); the rest are fixed keyframes outside the window that
    observe window points.
    """

    cam_ids: list
    R: np.ndarray  # (K, 3, 3) camera-to-world rotations
    C: np.ndarray  # (K, 3) camera centres
    n_window: int
    point_ids: list
    P: np.ndarray  # (N, 3)
    obs_cam: np.ndarray
    obs_pt: np.ndarray
    obs_uv: np.ndarray
    obs_w: np.ndarray
    fix_cam: np.ndarray
    fix_pos: np.ndarray
    fix_w: np.ndarray
    camera: object
    huber: float | None = None
    gauge_fixed: bool = False
    hold_attitude: bool = False  # camera 0 keeps its rotation but its centre stays free

    @property
    def free_cams(self):
        start = 1 if self.gauge_fixed else 0
        return np.arange(start, self.n_window)

    def copy_state(self):
        return self.R.copy(), self.C.copy(), self.P.copy()


def build_problem(window, points, observations, camera, fixes=(), w_geo=10.0, fixed=(),
                  obs_weight=1.0, huber=False):
    """Assemble an :class:`LbaProblem`.

    Parameters
    ----------
    window : sequence of (keyframe_id, PoseSE3)
        Keyframes to optimise, oldest first.
    points : mapping track_id -> (3,) position
    observations : iterable of (keyframe_id, track_id, u, v)
    fixes : iterable of GeoFix (or objects with ``keyframe_id``, ``position``,
        ``accepted``), already expressed in the odometry frame.
    w_geo : float
        Weight of accepted fixes; rejected fixes get weight 0. Zero-weight
        fixes are left out of the problem entirely.
    fixed : sequence of (keyframe_id, PoseSE3)
        Keyframes outside the window, held constant; only their observations
        of window points are used.
    """
    window = list(window)
    if not window:
        raise ValueError("empty window")
    if w_geo < 0 or obs_weight < 0:
        raise ValueError("weights must be non-negative")
    win_ids = [int(k) for k, _ in window]
    fixed_map = {int(k): p for k, p in fixed if int(k) not in win_ids}
    obs = [(int(k), int(tid), float(u), float(v)) for k, tid, u, v in observations]
    # points seen by at least two window keyframes
    seen = {}
    for k, tid, _, _ in obs:
        if k in win_ids and tid in points:
            seen.setdefault(tid, set()).add(k)
    pids = sorted(t for t, ks in seen.items() if len(ks) >= 2)
    pindex = {t: i for i, t in enumerate(pids)}
    used_fixed = sorted({k for k, tid, _, _ in obs if k in fixed_map and tid in pindex})
    cam_ids = win_ids + used_fixed
    cindex = {k: i for i, k in enumerate(cam_ids)}
    poses = [p for _, p in window] + [fixed_map[k] for k in used_fixed]
    sel = [(cindex[k], pindex[tid], u, v) for k, tid, u, v in obs if tid in pindex and k in cindex]
    oc = np.array([s[0] for s in sel], int)
    op = np.array([s[1] for s in sel], int)
    ouv = np.array([[s[2], s[3]] for s in sel], float).reshape(-1, 2)
    fc, fp = [], []
    for f in fixes:
        if f.accepted and w_geo > 0 and int(f.keyframe_id) in cindex and cindex[int(f.keyframe_id)] < len(win_ids):
            fc.append(cindex[int(f.keyframe_id)])
            fp.append(f.position)
    P = np.array([points[t] for t in pids], float).reshape(-1, 3)
    prob = LbaProblem(
        cam_ids=cam_ids,
        R=np.array([p.R for p in poses]),
        C=np.array([p.t for p in poses]),
        n_window=len(win_ids),
        point_ids=pids,
        P=P,
        obs_cam=oc,
        obs_pt=op,
        obs_uv=ouv,
        obs_w=np.full(len(oc), float(obs_weight)),
        fix_cam=np.array(fc, int),
        fix_pos=np.array(fp, float).reshape(-1, 3),
        fix_w=np.full(len(fc), float(w_geo)),
        camera=camera,
        huber=HUBER_DELTA if huber is True else (huber or None),
    )
    weighted = prob.fix_pos[prob.fix_w > 0]
    prob.gauge_fixed = not used_fixed and len(weighted) == 0
    # fixes along a line pin the centres but not the roll about the line
    prob.hold_attitude = not used_fixed and len(weighted) > 0 and not spans_plane(weighted)
    # observations behind a camera carry no information; drop them up front
    Xc = _camera_points(prob, prob.R, prob.C, prob.P)
    bad = Xc[:, 2] <= 0
    if bad.any():
        prob.obs_w = np.where(bad, 0.0, prob.obs_w)
    return prob


def _camera_points(prob, R, C, P):
    return np.einsum("nji,nj->ni", R[prob.obs_cam], P[prob.obs_pt] - C[prob.obs_cam])


def _residuals(prob, R, C, P):
    """Reprojection residuals (n, 2), camera points and the validity mask."""
    Xc = _camera_points(prob, R, C, P)
    z = Xc[:, 2]
    valid = z > 0
    zs = np.where(valid, z, 1.0)
    f = prob.camera.focal_px
    e = np.stack([prob.camera.cx + f * Xc[:, 0] / zs, prob.camera.cy + f * Xc[:, 1] / zs], axis=1) - prob.obs_uv
    return e, Xc, valid


def _robust_weights(prob, e):
    w = prob.obs_w
    if prob.huber:
        n = np.hypot(e[:, 0], e[:, 1])
        w = w * np.where(n <= prob.huber, 1.0, prob.huber / np.maximum(n, 1e-300))
    return w


def _cost(prob, R, C, P):
    e, _, valid = _residuals(prob, R, C, P)
    active = prob.obs_w > 0
    if np.any(active & ~valid):
        return np.inf
    sq = np.sum(e * e, axis=1)
    if prob.huber:
        n = np.sqrt(sq)
        d = prob.huber
        rho = np.where(n <= d, sq, 2 * d * n - d * d)
    else:
        rho = sq
    cost = 0.5 * float(np.sum(prob.obs_w[active] * rho[active]))
    if len(prob.fix_cam):
        g = prob.fix_pos - C[prob.fix_cam]
        cost += 0.5 * float(np.sum(prob.fix_w * np.sum(g * g, axis=1)))
    return cost


def problem_cost(prob):
    return _cost(prob, prob.R, prob.C, prob.P)


def _jacobians(prob, R, Xc):
    """Per-observation Jacobians w.r.t. (omega, dc) of its camera and its point."""
    f = prob.camera.focal_px
    x, y, z = Xc.T
    n = len(z)
    Jp = np.zeros((n, 2, 3))
    Jp[:, 0, 0] = f / z
    Jp[:, 0, 2] = -f * x / z**2
    Jp[:, 1, 1] = f / z
    Jp[:, 1, 2] = -f * y / z**2
    sk = np.zeros((n, 3, 3))
    sk[:, 0, 1], sk[:, 0, 2] = -z, y
    sk[:, 1, 0], sk[:, 1, 2] = z, -x
    sk[:, 2, 0], sk[:, 2, 1] = -y, x
    Rt = np.transpose(R[prob.obs_cam], (0, 2, 1))
    J_pt = Jp @ Rt
    J_cam = np.concatenate([Jp @ sk, -J_pt], axis=2)
    return J_cam, J_pt


def retract(prob, R, C, P, delta):
    """Apply a stacked update (free cameras then points) to a state copy."""
    free = prob.free_cams
    nc = 6 * len(free)
    R2, C2, P2 = R.copy(), C.copy(), P.copy()
    for k, ci in enumerate(free):
        w = delta[6 * k:6 * k + 3]
        if not (prob.hold_attitude and ci == 0):
            R2[ci] = R[ci] @ so3_exp(w)
        C2[ci] = C[ci] + delta[6 * k + 3:6 * k + 6]
    P2 += delta[nc:].reshape(-1, 3)
    return R2, C2, P2


def dense_jacobian(prob, R=None, C=None, P=None):
    """Stacked weighted-free residual vector and its dense analytic Jacobian.

    Rows: reprojection residuals (u, v per observation) then geo residuals
    (x, y, z per fix). Columns: free cameras (omega, dc) then points.
    """
    R = prob.R if R is None else R
    C = prob.C if C is None else C
    P = prob.P if P is None else P
    e, Xc, _ = _residuals(prob, R, C, P)
    J_cam, J_pt = _jacobians(prob, R, Xc)
    free = prob.free_cams
    fidx = -np.ones(len(prob.cam_ids), int)
    fidx[free] = np.arange(len(free))
    nc, npt = 6 * len(free), 3 * len(prob.point_ids)
    n_obs, n_fix = len(prob.obs_cam), len(prob.fix_cam)
    J = np.zeros((2 * n_obs + 3 * n_fix, nc + npt))
    for i in range(n_obs):
        c = fidx[prob.obs_cam[i]]
        if c >= 0:
            J[2 * i:2 * i + 2, 6 * c:6 * c + 6] = J_cam[i]
            if prob.hold_attitude and prob.obs_cam[i] == 0:
                J[2 * i:2 * i + 2, 6 * c:6 * c + 3] = 0.0
        p = prob.obs_pt[i]
        J[2 * i:2 * i + 2, nc + 3 * p:nc + 3 * p + 3] = J_pt[i]
    r = [e.reshape(-1)]
    for k in range(n_fix):
        c = fidx[prob.fix_cam[k]]
        row = 2 * n_obs + 3 * k
        if c >= 0:
            J[row:row + 3, 6 * c + 3:6 * c + 6] = -np.eye(3)
    if n_fix:
        r.append((prob.fix_pos - C[prob.fix_cam]).reshape(-1))
    return np.concatenate(r), J


# --------------------------------------------------------------------------
# solver

@dataclass
class LbaResult:
    poses: dict
    points: dict
    initial_cost: float
    final_cost: float
    iterations: int
    lambda_history: list
    degraded: bool = False
    converged: bool = False
    cost_history: list = field(default_factory=list)  # cost after each accepted step

    def report(self):
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "lambda_history": self.lambda_history,
            "cost_history": self.cost_history,
            "degraded": self.degraded,
            "converged": self.converged,
        }


def _normal_equations(prob, R, C, P):
    e, Xc, valid = _residuals(prob, R, C, P)
    w = _robust_weights(prob, e) * valid
    J_cam, J_pt = _jacobians(prob, R, Xc)
    free = prob.free_cams
    fidx = -np.ones(len(prob.cam_ids), int)
    fidx[free] = np.arange(len(free))
    K, N = len(free), len(prob.point_ids)
    oc = fidx[prob.obs_cam]
    op = prob.obs_pt
    wJc = J_cam * w[:, None, None]
    wJp = J_pt * w[:, None, None]
    U = np.zeros((K, 6, 6))
    bc = np.zeros((K, 6))
    V = np.zeros((N, 3, 3))
    bp = np.zeros((N, 3))
    np.add.at(V, op, np.einsum("nri,nrj->nij", wJp, J_pt))
    np.add.at(bp, op, -np.einsum("nri,nr->ni", wJp, e))
    m = oc >= 0
    np.add.at(U, oc[m], np.einsum("nri,nrj->nij", wJc[m], J_cam[m]))
    np.add.at(bc, oc[m], -np.einsum("nri,nr->ni", wJc[m], e[m]))
    # W as a dense (6K, 3N) block matrix
    W = np.zeros((K, 6, N, 3))
    np.add.at(W, (oc[m], slice(None), op[m]), np.einsum("nri,nrj->nij", wJc[m], J_pt[m]))
    if len(prob.fix_cam):
        g = prob.fix_pos - C[prob.fix_cam]
        fc = fidx[prob.fix_cam]
        for k in np.nonzero(fc >= 0)[0]:
            c = fc[k]
            U[c, 3:, 3:] += prob.fix_w[k] * np.eye(3)
            # residual derivative is -I, so the gradient term is +w g
            bc[c, 3:] += prob.fix_w[k] * g[k]
    if prob.hold_attitude and K and fidx[0] == 0:
        # decouple the held rotation: identity block, zero gradient and coupling
        U[0, :3, :] = 0.0
        U[0, :, :3] = 0.0
        U[0, :3, :3] = np.eye(3)
        bc[0, :3] = 0.0
        W[0, :3] = 0.0
    return U, bc, V, bp, W.reshape(6 * K, 3 * N)


def _solve_damped(U, bc, V, bp, W, lam):
    K, N = len(U), len(V)
    Ud = U.copy()
    Vd = V.copy()
    idx6 = np.arange(6)
    idx3 = np.arange(3)
    Ud[:, idx6, idx6] += lam * (U[:, idx6, idx6] + 1e-9)
    Vd[:, idx3, idx3] += lam * (V[:, idx3, idx3] + 1e-9)
    Vinv = np.linalg.inv(Vd)
    bc = bc.reshape(-1)
    bpf = bp.reshape(N, 3)
    if K == 0:
        return np.einsum("nij,nj->ni", Vinv, bpf).reshape(-1)
    Ublk = np.zeros((6 * K, 6 * K))
    for k in range(K):
        Ublk[6 * k:6 * k + 6, 6 * k:6 * k + 6] = Ud[k]
    Wr = W.reshape(6 * K, N, 3)
    WVinv = np.einsum("anj,nji->ani", Wr, Vinv).reshape(6 * K, 3 * N)
    S = Ublk - WVinv @ W.T
    rhs = bc - WVinv @ bpf.reshape(-1)
    cf = linalg.cho_factor(S, check_finite=True)
    dc = linalg.cho_solve(cf, rhs)
    dp = np.einsum("nij,nj->ni", Vinv, bpf - (W.T @ dc).reshape(N, 3))
    return np.concatenate([dc, dp.reshape(-1)])


def solve_lm(prob, max_iters=50, lambda_init=1e-3, tol=1e-9, lambda_max=1e10, step_tol=1e-10):
    """Levenberg-Marquardt with Marquardt (diagonal) damping.

    Accepted steps strictly decrease the cost; a rejected step multiplies
    ``lambda`` by 10 and leaves the state untouched. Stops when the relative
    cost decrease of an accepted step falls below ``tol``, the step is
    negligible against the state (``step_tol``), the gradient vanishes, or ``max_iters`` steps have been tried. If the damped system
    cannot be solved even at ``lambda_max`` the best iterate is returned
    flagged ``degraded``.
    """
    R, C, P = prob.copy_state()
    cost = _cost(prob, R, C, P)
    initial = cost
    lam = lambda_init
    hist = []
    costs = []
    iters = 0
    degraded = converged = False
    if not np.isfinite(cost):
        degraded = True
    while not degraded and iters < max_iters:
        U, bc, V, bp, W = _normal_equations(prob, R, C, P)
        gmax = max(np.abs(bc).max(initial=0.0), np.abs(bp).max(initial=0.0))
        if gmax < 1e-10 or cost < 1e-30:
            converged = True
            break
        accepted = False
        scale = np.sqrt(np.sum(C[prob.free_cams] ** 2) + np.sum(P**2))
        while iters < max_iters:
            iters += 1
            hist.append(lam)
            try:
                delta = _solve_damped(U, bc, V, bp, W, lam)
                ok = np.all(np.isfinite(delta))
            except (np.linalg.LinAlgError, linalg.LinAlgError):
                ok = False
            if ok and np.linalg.norm(delta) <= step_tol * (scale + step_tol):
                converged = True
                break
            if ok:
                R2, C2, P2 = retract(prob, R, C, P, delta)
                new = _cost(prob, R2, C2, P2)
                if new < cost:
                    rel = (cost - new) / max(cost, 1e-300)
                    R, C, P, cost = R2, C2, P2, new
                    costs.append(cost)
                    lam = max(lam / 10.0, 1e-12)
                    accepted = True
                    if rel < tol:
                        converged = True
                    break
            lam *= 10.0
            if lam > lambda_max:
                degraded = not ok
                converged = ok
                break
        if not accepted or converged:
            break
    poses = {prob.cam_ids[i]: PoseSE3(R[i], C[i]) for i in range(prob.n_window)}
    points = {t: P[i].copy() for i, t in enumerate(prob.point_ids)}
    return LbaResult(poses, points, initial, cost, iters, hist, degraded, converged, costs)
