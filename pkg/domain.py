"""
domain.py - Shared domain types for the LatentSLAM pipeline.

Poses, odometry deltas, observations, actions and frame records, plus the
error hierarchy every other module raises from.
"""

import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


# ---------------------------
# Errors
# ---------------------------

class LatentSlamError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LatentSlamError, ValueError):
    """Input violates a shape, range or finiteness contract."""


class DegenerateGridError(LatentSlamError):
    """Pose-cell activity collapsed to all zeros."""


class TrainingDivergedError(LatentSlamError, RuntimeError):
    def __init__(self, epoch: int, message: str = "free energy became NaN"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


class InputError(LatentSlamError, IOError):
    """An input file could not be used; `missing` is set when it does not exist."""

    def __init__(self, message: str, missing: bool = False):
        super().__init__(message)
        self.missing = missing


class DatasetError(InputError):
    def __init__(self, path, message: str, missing: bool = False):
        super().__init__(f"{path}: {message}", missing)
        self.path = str(path)


class MapFileError(InputError):
    """Map file is malformed, truncated or has the wrong version."""


class CheckpointError(InputError):
    """Checkpoint file is malformed or does not match the requested model."""


class FrameProcessingError(LatentSlamError):
    def __init__(self, frame_index: int, message: str):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


# ---------------------------
# Angles
# ---------------------------

def wrap_angle(theta: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValidationError(f"angle must be finite, got {theta}")
    if -math.pi <= theta < math.pi:
        return theta
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    # % can round up to exactly 2*pi for tiny negative inputs
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised wrap_angle."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValidationError("angles must be finite")
    wrapped = np.mod(theta + math.pi, TWO_PI) - math.pi
    wrapped = np.where(wrapped >= math.pi, wrapped - TWO_PI, wrapped)
    inside = (theta >= -math.pi) & (theta < math.pi)
    return np.where(inside, theta, wrapped)


def _require_finite(name: str, *values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise ValidationError(f"{name} must be finite, got {value}")


# ---------------------------
# Poses and odometry
# ---------------------------

@dataclass(frozen=True)
class Pose2D:
    """3-DOF pose (meters, meters, radians). theta is always wrapped."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        _require_finite("pose", self.x, self.y, self.theta)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def compose(self, delta: "Pose2D") -> "Pose2D":
        """Apply a body-frame relative pose: self (+) delta."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + c * delta.x - s * delta.y,
            self.y + s * delta.x + c * delta.y,
            self.theta + delta.theta,
        )

    def between(self, other: "Pose2D") -> "Pose2D":
        """Relative pose of `other` expressed in this pose's frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = other.x - self.x, other.y - self.y
        return Pose2D(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)


ORIGIN = Pose2D(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class OdometryDelta:
    """Per-frame body-frame motion increment."""

    dx: float
    dy: float
    dtheta: float

    def __post_init__(self):
        _require_finite("odometry delta", self.dx, self.dy, self.dtheta)
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))
        object.__setattr__(self, "dtheta", wrap_angle(self.dtheta))

    @classmethod
    def zero(cls) -> "OdometryDelta":
        return cls(0.0, 0.0, 0.0)

    def as_pose(self) -> Pose2D:
        return Pose2D(self.dx, self.dy, self.dtheta)

    def is_zero(self) -> bool:
        return self.dx == 0.0 and self.dy == 0.0 and self.dtheta == 0.0


def integrate_odometry(deltas: Iterable[OdometryDelta], start: Pose2D = ORIGIN) -> List[Pose2D]:
    """Dead-reckon a delta sequence. Element k is the pose after delta k."""
    poses = []
    pose = start
    for delta in deltas:
        pose = pose.compose(delta.as_pose())
        poses.append(pose)
    return poses


def delta_between(a: Pose2D, b: Pose2D) -> OdometryDelta:
    rel = a.between(b)
    return OdometryDelta(rel.x, rel.y, rel.theta)


# ---------------------------
# Observations, actions, frames
# ---------------------------

def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Observation:
    """H x W x C image, row-major, channel-last, values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = _frozen_array(self.pixels)
        if pixels.ndim != 3:
            raise ValidationError(f"observation must be H x W x C, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
            raise ValidationError("observation pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def shape(self):
        return self.pixels.shape

    def __eq__(self, other):
        return isinstance(other, Observation) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class Action:
    """Control vector a_t (default: thrust, roll, pitch, yaw-rate)."""

    controls: np.ndarray

    def __post_init__(self):
        controls = _frozen_array(self.controls).reshape(-1)
        if not np.all(np.isfinite(controls)):
            raise ValidationError("action controls must be finite")
        object.__setattr__(self, "controls", controls)

    @classmethod
    def zero(cls, dim: int) -> "Action":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return int(self.controls.shape[0])

    def __eq__(self, other):
        return isinstance(other, Action) and np.array_equal(self.controls, other.controls)


@dataclass(frozen=True)
class FrameRecord:
    """
    One timestep of a sequence.

    `action` is the control applied between t-1 and t, `odometry` the motion
    measured over the same interval. Both are zero at t = 0.
    """

    t: int
    observation: Observation
    action: Action
    odometry: OdometryDelta
    ground_truth: Optional[Pose2D] = field(default=None)


def validate_sequence(frames: Sequence[FrameRecord]) -> None:
    """Check the per-sequence invariants: increasing t, constant shapes."""
    if not frames:
        raise ValidationError("sequence is empty")
    first = frames[0]
    for prev, frame in zip(frames, frames[1:]):
        if frame.t <= prev.t:
            raise ValidationError(f"frame index not increasing at t={frame.t}")
    for frame in frames:
        if frame.observation.shape != first.observation.shape:
            raise ValidationError(f"observation shape changed at t={frame.t}")
        if frame.action.dim != first.action.dim:
            raise ValidationError(f"action dimension changed at t={frame.t}")


# ---------------------------
# Files
# ---------------------------

@contextmanager
def atomic_write(path, mode: str = "w"):
    """Yield a handle on a temp sibling of `path`; rename over `path` only on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
