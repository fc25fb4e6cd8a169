"""Position sequences and TUM trajectory files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PoseSE3

__all__ = ["Trajectory", "write_tum", "read_tum"]

FRAMES = ("vo-local", "world")


@dataclass(eq=False)
class Trajectory:
    """Timestamped camera positions, optionally with orientations.

    ``quaternions`` are ``(qx, qy, qz, qw)`` of the camera-to-world rotation;
    when absent they are written as identity.
    """

    timestamps: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray | None = None
    frame: str = "world"

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, float).reshape(-1)
        self.positions = np.asarray(self.positions, float).reshape(-1, 3)
        if len(self.timestamps) != len(self.positions):
            raise ValueError("timestamps and positions differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.quaternions is not None:
            self.quaternions = np.asarray(self.quaternions, float).reshape(-1, 4)
            if len(self.quaternions) != len(self.timestamps):
                raise ValueError("quaternions and timestamps differ in length")
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}")

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_poses(cls, timestamps, poses, frame="world"):
        poses = list(poses)
        return cls(timestamps, np.array([p.t for p in poses]).reshape(-1, 3),
                   np.array([p.quaternion_xyzw() for p in poses]).reshape(-1, 4), frame)

    @classmethod
    def from_increments(cls, timestamps, start, increments, frame="vo-local"):
        """Positions ``S_k = S_{k-1} + t_k`` from ``S_0 = start``."""
        inc = np.asarray(increments, float).reshape(-1, 3)
        pos = np.vstack([np.asarray(start, float).reshape(1, 3), inc])
        return cls(timestamps, np.cumsum(pos, axis=0), frame=frame)

    def increments(self):
        """Per-step translations ``t_k = S_k - S_{k-1}``."""
        return np.diff(self.positions, axis=0)

    def poses(self):
        q = self.quaternions
        if q is None:
            return [PoseSE3(np.eye(3), p) for p in self.positions]
        return [PoseSE3.from_quaternion(p, qq) for qq, p in zip(q, self.positions)]

    def path_length(self):
        return float(np.sum(np.linalg.norm(self.increments(), axis=1)))

    def transformed(self, H, frame="world"):
        """Apply a :class:`~terranav.fusion.FrameTransform` to every sample."""
        q = None
        if self.quaternions is not None:
            q = np.array([H.apply_pose(p).quaternion_xyzw() for p in self.poses()])
        return Trajectory(self.timestamps, H.apply(self.positions), q, frame)


def write_tum(path, traj):
    """``timestamp tx ty tz qx qy qz qw`` per line."""
    q = traj.quaternions
    if q is None:
        q = np.tile([0.0, 0.0, 0.0, 1.0], (len(traj), 1))
    data = np.column_stack([traj.timestamps, traj.positions, q])
    np.savetxt(path, data, fmt="%.9f")


def read_tum(path, frame="world"):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = line.replace(",", " ").split()
            if len(vals) != 8:
                raise ValueError(f"{path}: expected 8 columns, got {len(vals)}")
            rows.append([float(v) for v in vals])
    if not rows:
        raise ValueError(f"{path}: no samples")
    d = np.array(rows)
    return Trajectory(d[:, 0], d[:, 1:4], d[:, 4:8], frame)
