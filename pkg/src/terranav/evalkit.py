"""Absolute trajectory error statistics and matching-error distributions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["ApeStats", "associate", "ape", "ape_from_errors", "MatchingHistogram",
           "matching_error_histogram", "APE_COLUMNS"]

APE_COLUMNS = ("max", "median", "min", "mean", "rmse", "std", "count")
FAILURE_PX = 5.0


@dataclass(frozen=True)
class ApeStats:
    """Position error statistics (m); ``std`` is the population deviation."""

    max: float
    median: float
    min: float
    mean: float
    rmse: float
    std: float
    count: int

    def as_dict(self):
        return asdict(self)

    def row(self):
        return [getattr(self, c) for c in APE_COLUMNS]


def ape_from_errors(errors):
    e = np.asarray(errors, float).reshape(-1)
    if e.size == 0:
        raise ValueError("no errors to summarise")
    mean = float(np.mean(e))
    # population std from the same residuals keeps rmse^2 == mean^2 + std^2
    std = float(np.sqrt(np.mean((e - mean) ** 2)))
    return ApeStats(float(e.max()), float(np.median(e)), float(e.min()), mean,
                    float(np.sqrt(np.mean(e * e))), std, int(e.size))


def associate(t_est, t_ref, tol=0.01):
    """Index pairs ``(i, j)`` matching each estimate time to the nearest reference time within ``tol`` s."""
    t_est = np.asarray(t_est, float)
    t_ref = np.asarray(t_ref, float)
    if len(t_ref) == 0 or len(t_est) == 0:
        return np.empty(0, int), np.empty(0, int)
    j = np.clip(np.searchsorted(t_ref, t_est), 1, max(len(t_ref) - 1, 1))
    j0 = np.clip(j - 1, 0, len(t_ref) - 1)
    j1 = np.clip(j, 0, len(t_ref) - 1)
    pick = np.where(np.abs(t_ref[j0] - t_est) <= np.abs(t_ref[j1] - t_est), j0, j1)
    ok = np.abs(t_ref[pick] - t_est) <= tol
    return np.nonzero(ok)[0], pick[ok]


def ape(estimate, ground_truth, associate_tol=0.01, align=False, similarity=False):
    """Absolute position error of ``estimate`` against ``ground_truth``.

    No alignment is applied unless ``align`` is set, in which case the
    estimate is first fitted to the reference by a rigid (or similarity)
    transform over the associated pairs.
    """
    i, j = associate(estimate.timestamps, ground_truth.timestamps, associate_tol)
    if len(i) == 0:
        raise ValueError(f"no timestamps associate within {associate_tol} s")
    p = estimate.positions[i]
    q = ground_truth.positions[j]
    if align:
        from .fusion import align_points

        p = align_points(p, q, similarity).apply(p)
    return ape_from_errors(np.linalg.norm(p - q, axis=1))


@dataclass(frozen=True)
class MatchingHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    failures: int
    count: int

    def as_dict(self):
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist(),
                "mean": self.mean, "failures": self.failures, "count": self.count}


def _edges(max_err):
    lin = np.round(np.arange(0.0, 2.0 + 1e-9, 0.1), 10)
    top = max(max_err, 2.0)
    if top <= 2.0:
        return lin
    n = int(np.ceil(np.log2(top / 2.0))) + 1
    return np.concatenate([lin, 2.0 * 2.0 ** np.arange(1, n + 1)])


def matching_error_histogram(offsets):
    """Radial error histogram: 0.1 px bins up to 2 px, then doubling bins.

    Offsets larger than 5 px count as failures.
    """
    d = np.asarray(offsets, float).reshape(-1, 2)
    if len(d) == 0:
        raise ValueError("no offsets")
    r = np.hypot(d[:, 0], d[:, 1])
    edges = _edges(float(r.max()))
    counts, _ = np.histogram(r, edges)
    return MatchingHistogram(edges, counts, float(r.mean()), int(np.sum(r > FAILURE_PX)), len(r))
