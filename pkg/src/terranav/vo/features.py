"""Corner detection and patch tracking for the odometry front end."""

from __future__ import annotations

import cv2
import numpy as np
from scipy import ndimage

from ..raster import RasterImage

__all__ = ["detect_corners", "extract_patches", "track_features", "flow_inliers", "PATCH", "SEARCH_RADIUS", "MIN_ZNCC"]

PATCH = 11
SEARCH_RADIUS = 24
MIN_ZNCC = 0.7


def _f32(img):
    px = img.pixels if isinstance(img, RasterImage) else np.asarray(img)
    return np.ascontiguousarray(px, dtype=np.float32)


def detect_corners(img, max_n=300, nms_radius=6, rel_threshold=0.01, border=None, mask=None):
    """Strongest local maxima of the minimum-eigenvalue corner score.

    Returns an (N, 2) array of ``(u, v)`` pixel positions sorted by
    decreasing score, no two closer than ``nms_radius`` px. ``mask`` (same
    shape as the image) excludes pixels where it is False.
    """
    px = _f32(img)
    h, w = px.shape
    border = PATCH if border is None else border
    score = cv2.cornerMinEigenVal(px, blockSize=5, ksize=3)
    top = float(score.max())
    if not top > 0:
        return np.empty((0, 2))
    # break exact ties (flat-topped maxima at ideal corners) towards the plateau centre
    score = score + 1e-6 * cv2.GaussianBlur(score, (0, 0), 1.0)
    peaks = (score == ndimage.maximum_filter(score, size=2 * nms_radius + 1)) & (score > rel_threshold * top)
    peaks[:border, :] = False
    peaks[-border:, :] = False
    peaks[:, :border] = False
    peaks[:, -border:] = False
    if mask is not None:
        peaks &= mask
    rows, cols = np.nonzero(peaks)
    order = np.argsort(-score[rows, cols], kind="stable")
    rows, cols = rows[order], cols[order]
    # greedy suppression in score order enforces the minimum spacing exactly
    taken = np.zeros((h, w), bool)
    out = []
    r2 = nms_radius * nms_radius
    for r, c in zip(rows, cols):
        if len(out) >= max_n:
            break
        r0, r1 = max(r - nms_radius, 0), min(r + nms_radius + 1, h)
        c0, c1 = max(c - nms_radius, 0), min(c + nms_radius + 1, w)
        if taken[r0:r1, c0:c1].any():
            yy, xx = np.nonzero(taken[r0:r1, c0:c1])
            if np.any((yy + r0 - r) ** 2 + (xx + c0 - c) ** 2 < r2):
                continue
        taken[r, c] = True
        out.append((float(c), float(r)))
    return np.array(out).reshape(-1, 2)


def _parabola(a, b, c):
    den = a - 2 * b + c
    return 0.0 if den >= 0 else float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))


def extract_patches(img, feats, patch=PATCH):
    """``patch`` x ``patch`` templates centred (bilinearly) on each feature."""
    a = _f32(img)
    feats = np.asarray(feats, float).reshape(-1, 2)
    out = np.empty((len(feats), patch, patch), np.float32)
    for i, (u, v) in enumerate(feats):
        out[i] = cv2.getRectSubPix(a, (patch, patch), (float(u), float(v)))
    return out


def track_features(prev, cur, prev_feats, prediction=(0.0, 0.0), patch=PATCH,
                   radius=SEARCH_RADIUS, min_score=MIN_ZNCC, templates=None):
    """Follow features from ``prev`` to ``cur`` by ZNCC patch search.

    Each ``patch`` x ``patch`` template is searched within ``radius`` px of
    its position shifted by ``prediction`` (a shared ``(du, dv)`` or one row
    per feature). ``templates`` overrides the patches cut from ``prev``, e.g.
    to keep matching against a track's first appearance so that sub-pixel
    errors do not accumulate along the track. Returns ``(positions, scores,
    ok)``; ``ok`` is False for features whose best correlation is below
    ``min_score`` or whose search window leaves the image.
    """
    b = _f32(cur)
    if prev is not None and np.shape(prev.pixels if isinstance(prev, RasterImage) else prev) != b.shape:
        raise ValueError("frames differ in shape")
    feats = np.asarray(prev_feats, float).reshape(-1, 2)
    n = len(feats)
    h, w = b.shape
    half = patch // 2
    out = np.full((n, 2), np.nan)
    scores = np.zeros(n)
    ok = np.zeros(n, bool)
    if templates is None:
        templates = extract_patches(prev, feats, patch)
    pred = np.broadcast_to(np.asarray(prediction, float), (n, 2)) if n else np.empty((0, 2))
    for i, (u, v) in enumerate(feats):
        tmpl = templates[i]
        cu, cv_ = int(round(u + pred[i, 0])), int(round(v + pred[i, 1]))
        x0, y0 = cu - radius - half, cv_ - radius - half
        x1, y1 = cu + radius + half + 1, cv_ + radius + half + 1
        # clip the search window; the best match must still fit in the image
        x0c, y0c, x1c, y1c = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
        if x1c - x0c < patch or y1c - y0c < patch:
            continue
        res = cv2.matchTemplate(b[y0c:y1c, x0c:x1c], tmpl, cv2.TM_CCOEFF_NORMED)
        _, best, _, (mx, my) = cv2.minMaxLoc(res)
        if not best >= min_score:
            continue
        dx = _parabola(res[my, mx - 1], best, res[my, mx + 1]) if 0 < mx < res.shape[1] - 1 else 0.0
        dy = _parabola(res[my - 1, mx], best, res[my + 1, mx]) if 0 < my < res.shape[0] - 1 else 0.0
        if np.array_equal(b[y0c + my:y0c + my + patch, x0c + mx:x0c + mx + patch], tmpl):
            # an exact copy sits on the integer position; the parabola would
            # only fit the asymmetry of the neighbours
            dx = dy = 0.0
        out[i] = (x0c + mx + half + dx, y0c + my + half + dy)
        scores[i] = best
        ok[i] = True
    return out, scores, ok


def flow_inliers(src, dst, threshold=1.5, iters=3):
    """Flag correspondences that disagree with a robust affine motion model.

    Between consecutive frames the image motion of a nadir camera is close to
    affine; a track that wandered onto a wrong patch shows up as a large
    residual. Returns a boolean mask of inliers.
    """
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    n = len(src)
    inl = np.ones(n, bool)
    if n < 6:
        return inl
    A = np.hstack([src, np.ones((n, 1))])
    # start from the median translation so gross outliers do not bias the fit
    res = np.hypot(*(dst - src - np.median(dst - src, axis=0)).T)
    inl = res < max(threshold * 4, 3.0 * np.median(res) + threshold)
    for _ in range(iters):
        if inl.sum() < 6:
            break
        M, *_ = np.linalg.lstsq(A[inl], dst[inl], rcond=None)
        res = np.hypot(*(A @ M - dst).T)
        inl = res < threshold
    return inl
