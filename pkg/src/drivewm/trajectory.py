"""Pose sequences, planar paths and simple kinematics.

Conventions
-----------
World frame is Z-up.  A pose's rotation maps body-frame vectors into the
world frame, body forward is +x, so heading (yaw) is
``atan2(R[1, 0], R[0, 0])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import (
    DegenerateTrajectory,
    IndexOutOfRange,
    InvalidPose,
    InvalidRate,
    PreconditionError,
)

ORTHO_TOL = 1e-6
TIME_TOL = 1e-6
MOVE_EPS = 1e-9
# absorbs float roundoff when a yaw rate sits exactly on the threshold
RATE_ATOL = 1e-9
DEFAULT_TURN_THRESHOLD = 0.12  # rad/s


def _check_rotation(R: np.ndarray) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidPose(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHO_TOL:
        raise InvalidPose("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise InvalidPose("rotation determinant is not +1")


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about world +z by ``yaw`` radians."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        p = np.asarray(self.position, dtype=float).reshape(-1)
        _check_rotation(R)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise InvalidPose("position must be a finite 3-vector")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", p)

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous extrinsic ``[R p; 0 1]``."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T


@dataclass(frozen=True)
class PoseSequence:
    """Timestamped poses sampled at ``sample_rate`` Hz.

    Stored as stacked arrays: ``rotations`` (T, 3, 3), ``positions`` (T, 3),
    ``timestamps`` (T,).  With ``uniform=True`` timestamps must sit on the
    grid ``t0 + i / sample_rate`` within 1e-6 s.
    """

    rotations: np.ndarray
    positions: np.ndarray
    timestamps: np.ndarray
    sample_rate: float
    uniform: bool = True

    def __post_init__(self):
        R = np.asarray(self.rotations, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        n = len(t)
        if n < 2:
            raise PreconditionError(f"a pose sequence needs at least 2 poses, got {n}")
        if R.shape != (n, 3, 3) or p.shape != (n, 3):
            raise PreconditionError(
                f"expected rotations ({n}, 3, 3) and positions ({n}, 3), "
                f"got {R.shape} and {p.shape}"
            )
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
            raise PreconditionError("pose sequence contains non-finite values")
        if not np.all(np.diff(t) > 0):
            raise PreconditionError("timestamps must be strictly increasing")
        if not self.sample_rate > 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate}")
        for i in range(n):
            try:
                _check_rotation(R[i])
            except InvalidPose as exc:
                raise InvalidPose(f"pose {i}: {exc}") from None
        if self.uniform:
            expected = t[0] + np.arange(n) / self.sample_rate
            if np.max(np.abs(t - expected)) > TIME_TOL:
                raise InvalidRate(
                    f"timestamps are not uniform at {self.sample_rate} Hz"
                )
        object.__setattr__(self, "rotations", R)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], sample_rate: float,
                   timestamps: Sequence[float] | None = None, t0: float = 0.0):
        if timestamps is None:
            timestamps = t0 + np.arange(len(poses)) / sample_rate
        return cls(
            rotations=np.stack([p.rotation for p in poses]) if poses else np.empty((0, 3, 3)),
            positions=np.stack([p.position for p in poses]) if poses else np.empty((0, 3)),
            timestamps=timestamps,
            sample_rate=sample_rate,
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> Pose:
        return Pose(self.rotations[i], self.positions[i])

    @property
    def poses(self) -> list[Pose]:
        return [self[i] for i in range(len(self))]

    @property
    def yaws(self) -> np.ndarray:
        return np.arctan2(self.rotations[:, 1, 0], self.rotations[:, 0, 0])

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


@dataclass(frozen=True)
class PlanarPath:
    """Ordered 2D positions in meters."""

    points: np.ndarray
    sample_rate: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise PreconditionError(f"planar path points must be (T, 2), got {pts.shape}")
        if len(pts) < 2:
            raise PreconditionError(f"a planar path needs at least 2 points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise PreconditionError("planar path contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def planar_project(seq: PoseSequence) -> PlanarPath:
    """Drop z: keep the (x, y) position of every pose."""
    return PlanarPath(seq.positions[:, :2].copy(), seq.sample_rate)


def _initial_heading(xy: np.ndarray) -> float:
    disp = np.hypot(xy[:, 0] - xy[0, 0], xy[:, 1] - xy[0, 1])
    moved = np.nonzero(disp > MOVE_EPS)[0]
    if len(moved) == 0:
        raise DegenerateTrajectory("all points coincide; initial heading undefined")
    d = xy[moved[0]] - xy[0]
    return math.atan2(d[1], d[0])


_T = TypeVar("_T", PlanarPath, PoseSequence)


def canonicalize(path_or_seq: _T) -> _T:
    """Rigidly move a trajectory so it starts at the origin heading +x.

    The heading is the direction from the first point to the first point
    displaced by more than 1e-9 m (planar displacement for pose sequences).
    Pose sequences are rotated about world z, so rotations and z are
    transformed consistently.
    """
    if isinstance(path_or_seq, PlanarPath):
        pts = path_or_seq.points
        h = _initial_heading(pts)
        c, s = math.cos(h), math.sin(h)
        # row-vector form of Rz(-h)
        rot_t = np.array([[c, -s], [s, c]])
        return PlanarPath((pts - pts[0]) @ rot_t, path_or_seq.sample_rate)
    if isinstance(path_or_seq, PoseSequence):
        seq = path_or_seq
        h = _initial_heading(seq.positions[:, :2])
        Rz = yaw_matrix(-h)
        return PoseSequence(
            rotations=Rz @ seq.rotations,
            positions=(seq.positions - seq.positions[0]) @ Rz.T,
            timestamps=seq.timestamps.copy(),
            sample_rate=seq.sample_rate,
            uniform=seq.uniform,
        )
    raise TypeError(f"cannot canonicalize {type(path_or_seq).__name__}")


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def yaw_rates(seq: PoseSequence) -> np.ndarray:
    """Yaw rate between every pair of consecutive frames, length T-1."""
    return wrap_angle(np.diff(seq.yaws)) / np.diff(seq.timestamps)


def yaw_rate(seq: PoseSequence, frame_index: int) -> float:
    """Wrapped heading change from ``frame_index`` to the next frame, over dt."""
    n = len(seq)
    if not 0 <= frame_index < n - 1:
        raise IndexOutOfRange(f"frame_index must be in [0, {n - 2}], got {frame_index}")
    y = seq.yaws
    dt = seq.timestamps[frame_index + 1] - seq.timestamps[frame_index]
    return wrap_angle(y[frame_index + 1] - y[frame_index]) / dt


def is_turn_event(seq: PoseSequence, threshold: float = DEFAULT_TURN_THRESHOLD) -> bool:
    """True if the initial yaw rate is at least ``threshold`` in magnitude.

    The comparison is inclusive and tolerates 1e-9 rad/s of roundoff, so an
    arc integrated at exactly the threshold rate counts as a turn.
    """
    if not threshold > 0:
        raise PreconditionError(f"threshold must be positive, got {threshold}")
    return abs(yaw_rate(seq, 0)) >= threshold - RATE_ATOL


def _is_integer_ratio(src: float, dst: float) -> tuple[bool, int]:
    ratio = src / dst
    step = int(round(ratio))
    return step >= 1 and abs(ratio - step) < 1e-9, step


def resample(seq: PoseSequence, target_hz: float, mode: str = "auto") -> PoseSequence:
    """Change the sample rate of a pose sequence.

    ``mode="decimate"`` keeps every n-th pose and requires the source rate to
    be an integer multiple of ``target_hz``.  ``mode="interpolate"`` places
    poses on the new time grid with linear position and spherical rotation
    interpolation.  ``"auto"`` decimates when possible and interpolates
    otherwise.  The first pose is always preserved.
    """
    if not target_hz > 0:
        raise InvalidRate(f"target rate must be positive, got {target_hz}")
    if mode not in ("auto", "decimate", "interpolate"):
        raise ValueError(f"unknown resample mode {mode!r}")

    integer, step = _is_integer_ratio(seq.sample_rate, target_hz)
    if mode == "decimate" and not integer:
        raise InvalidRate(
            f"cannot decimate {seq.sample_rate} Hz to {target_hz} Hz: "
            "target must divide the source rate"
        )
    if integer and mode != "interpolate":
        idx = np.arange(0, len(seq), step)
        if len(idx) < 2:
            raise InvalidRate(
                f"decimating {len(seq)} poses by {step} leaves fewer than 2 poses"
            )
        return PoseSequence(
            rotations=seq.rotations[idx].copy(),
            positions=seq.positions[idx].copy(),
            timestamps=seq.timestamps[idx].copy(),
            sample_rate=float(target_hz),
            uniform=seq.uniform,
        )

    t = seq.timestamps
    n_out = int(math.floor((t[-1] - t[0]) * target_hz + 1e-9)) + 1
    if n_out < 2:
        raise InvalidRate(f"sequence too short to resample at {target_hz} Hz")
    t_new = t[0] + np.arange(n_out) / target_hz
    t_new = np.minimum(t_new, t[-1])
    pos = np.stack([np.interp(t_new, t, seq.positions[:, i]) for i in range(3)], axis=1)
    rots = Slerp(t, Rotation.from_matrix(seq.rotations))(t_new).as_matrix()
    rots[0] = seq.rotations[0]
    pos[0] = seq.positions[0]
    return PoseSequence(rots, pos, t_new, float(target_hz))
