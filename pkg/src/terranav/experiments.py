"""Matching and georeferencing trials on simulated flights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evalkit import matching_error_histogram
from .georef import georeference
from .simworld import illumination_sweep, render_sequence

__all__ = ["MatchingTrial", "matching_trial", "SweepRow", "run_sweep", "SWEEP_COLUMNS"]

SWEEP_COLUMNS = ("value", "mean_px_err", "max_px_err", "mean_georef_err_m", "accepted")


@dataclass
class MatchingTrial:
    """Per-keyframe matching results against the true offsets."""

    frame_ids: np.ndarray
    offset_errors: np.ndarray  # (n, 2) measured minus true offset, px
    georef_errors: np.ndarray  # (n,) horizontal position error, m
    peaks: np.ndarray
    accepted: np.ndarray

    @property
    def radial_errors(self):
        return np.hypot(self.offset_errors[:, 0], self.offset_errors[:, 1])

    def histogram(self):
        return matching_error_histogram(self.offset_errors)


def _true_offset(entry_xy, true_xy, gsd):
    # inverse of offset_to_world: X_T = X_R - gsd*dx, Y_T = Y_R + gsd*dy
    return (entry_xy[0] - true_xy[0]) / gsd, (true_xy[1] - entry_xy[1]) / gsd


def matching_trial(config, n_keyframes=50, frame_ids=None, sequence=None, min_peak=0.05):
    """Georeference ``n_keyframes`` evenly spaced frames of the flight in ``config``.

    Each frame is matched against the reference chip at its planned
    position; errors are measured against the offset implied by the true
    camera position.
    """
    seq = sequence if sequence is not None else render_sequence(config)
    n = len(seq)
    if frame_ids is None:
        frame_ids = np.unique(np.linspace(0, n - 1, min(n_keyframes, n)).round().astype(int))
    frame_ids = np.asarray(frame_ids, int)
    gt = seq.ground_truth
    off, geo, peaks, acc = [], [], [], []
    for k in frame_ids:
        entry = seq.planned_path[int(k)]
        fix = georeference(seq.frame(int(k)), entry, seq.dem, config.camera, config.presumed_illumination,
                           min_peak=min_peak, keyframe_id=int(k))
        true = gt.poses[int(k)].t
        tdx, tdy = _true_offset((entry.x, entry.y), true, fix.gsd)
        off.append((fix.offset[0] - tdx, fix.offset[1] - tdy))
        geo.append(float(np.hypot(fix.position[0] - true[0], fix.position[1] - true[1])))
        peaks.append(fix.peak)
        acc.append(fix.accepted)
    return MatchingTrial(frame_ids, np.array(off).reshape(-1, 2), np.array(geo), np.array(peaks),
                         np.array(acc, bool))


@dataclass(frozen=True)
class SweepRow:
    value: float
    mean_px_err: float
    max_px_err: float
    mean_georef_err_m: float
    accepted: int

    def row(self):
        return [getattr(self, c) for c in SWEEP_COLUMNS]


def run_sweep(base, axis, values, n_keyframes=50, min_peak=0.05):
    """One :class:`SweepRow` per swept true-illumination value (angles in degrees).

    The terrain, flight and planned path are shared by all values; only the
    rendered frames change.
    """
    scenarios = illumination_sweep(base, axis, values)
    ref = render_sequence(base)
    rows = []
    for v, sc in zip(values, scenarios):
        seq = type(ref)(sc, ref.dem, ref.albedo, ref.ground_truth, ref.planned_path)
        tr = matching_trial(sc, n_keyframes, sequence=seq, min_peak=min_peak)
        r = tr.radial_errors
        rows.append(SweepRow(float(v), float(r.mean()), float(r.max()),
                             float(tr.georef_errors.mean()), int(tr.accepted.sum())))
    return rows
