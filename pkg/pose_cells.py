"""
pose_cells.py - 3D continuous attractor network over (x, y, theta).

Activity lives on a torus of nx x ny x ntheta cells. Odometry shifts it,
view cells inject into it, and the attractor dynamics (wrapped Gaussian
excitation, global inhibition, divisive normalization) keep a single bump
whose peak is the pose estimate.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy import fft as sp_fft

from domain import (
    DegenerateGridError,
    OdometryDelta,
    Pose2D,
    TWO_PI,
    ValidationError,
    atomic_write,
    wrap_angle,
)

logger = logging.getLogger(__name__)

Coords = Tuple[int, int, int]

DECODE_RADIUS = 3


@dataclass(frozen=True)
class CANConfig:
    nx: int = 40
    ny: int = 40
    ntheta: int = 36
    cell_size_xy: float = 0.5          # meters per cell
    excite_sigma_xy: float = 1.0       # cells
    excite_sigma_theta: float = 1.0    # cells
    inhibit_amount: float = 1e-3
    injection_energy: float = 0.5

    def __post_init__(self):
        if min(self.nx, self.ny, self.ntheta) < 3:
            raise ValidationError("pose-cell grid needs at least 3 cells per axis")
        if self.excite_sigma_xy <= 0 or self.excite_sigma_theta <= 0:
            raise ValidationError("excitation sigmas must be positive")
        if self.inhibit_amount < 0:
            raise ValidationError("inhibit_amount must be >= 0")
        if self.injection_energy <= 0:
            raise ValidationError("injection_energy must be > 0")
        if self.cell_size_xy <= 0:
            raise ValidationError("cell_size_xy must be > 0")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.nx, self.ny, self.ntheta)

    @property
    def cell_size_theta(self) -> float:
        return TWO_PI / self.ntheta


@dataclass(frozen=True, eq=False)
class PoseCellGrid:
    """Non-negative activity volume. Treat as immutable; every op returns a new grid."""

    activity: np.ndarray
    cell_size_xy: float
    cell_size_theta: float

    def __post_init__(self):
        activity = np.array(self.activity, dtype=np.float64, copy=True)
        if activity.ndim != 3 or min(activity.shape) < 3:
            raise ValidationError(f"activity must be a 3D volume, got shape {activity.shape}")
        if not np.all(np.isfinite(activity)) or activity.min() < 0.0:
            raise ValidationError("activity must be finite and non-negative")
        activity.flags.writeable = False
        object.__setattr__(self, "activity", activity)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.activity.shape

    def with_activity(self, activity: np.ndarray) -> "PoseCellGrid":
        return PoseCellGrid(activity, self.cell_size_xy, self.cell_size_theta)

    @classmethod
    def uniform(cls, cfg: CANConfig) -> "PoseCellGrid":
        activity = np.full(cfg.shape, 1.0 / (cfg.nx * cfg.ny * cfg.ntheta))
        return cls(activity, cfg.cell_size_xy, cfg.cell_size_theta)

    @classmethod
    def spike(cls, cfg: CANConfig, coords: Coords = (0, 0, 0)) -> "PoseCellGrid":
        _check_coords(coords, cfg.shape)
        activity = np.zeros(cfg.shape)
        activity[tuple(coords)] = 1.0
        return cls(activity, cfg.cell_size_xy, cfg.cell_size_theta)

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "cell_size_xy": self.cell_size_xy,
            "cell_size_theta": self.cell_size_theta,
            "activity": self.activity.ravel().tolist(),
        }


@dataclass(frozen=True)
class DecodedPose:
    pose: Pose2D
    coords: Coords


def _check_coords(coords, shape) -> None:
    if len(coords) != 3 or any(not (0 <= int(c) < n) for c, n in zip(coords, shape)):
        raise ValidationError(f"coords {tuple(coords)} outside grid {shape}")


def _normalize(activity: np.ndarray) -> np.ndarray:
    total = activity.sum()
    if not total > 0.0:
        raise DegenerateGridError("pose-cell activity is all zero")
    return activity / total


# ---------------------------
# Attractor dynamics
# ---------------------------

def excitation_kernel(shape: Tuple[int, int, int], sigma_xy: float, sigma_theta: float) -> np.ndarray:
    """
    Wrapped 3D Gaussian centred on cell (0, 0, 0), summing to one.

    Entry [i, j, k] is the weight a cell passes to the cell offset by
    (i, j, k) on the torus.
    """
    axes = []
    for n, sigma in zip(shape, (sigma_xy, sigma_xy, sigma_theta)):
        offsets = np.arange(n)
        dist = np.minimum(offsets, n - offsets).astype(np.float64)
        axes.append(np.exp(-dist ** 2 / (2.0 * sigma ** 2)))
    kernel = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return kernel / kernel.sum()


@lru_cache(maxsize=8)
def _kernel_spectrum(shape: Tuple[int, int, int], sigma_xy: float, sigma_theta: float) -> np.ndarray:
    return sp_fft.rfftn(excitation_kernel(shape, sigma_xy, sigma_theta))


def _wrapped_convolve(activity: np.ndarray, cfg: CANConfig) -> np.ndarray:
    spectrum = _kernel_spectrum(activity.shape, cfg.excite_sigma_xy, cfg.excite_sigma_theta)
    return sp_fft.irfftn(sp_fft.rfftn(activity) * spectrum, s=activity.shape)


def iterate(grid: PoseCellGrid, cfg: CANConfig) -> PoseCellGrid:
    """One attractor step: excite, inhibit, rectify, normalize."""
    if grid.shape != cfg.shape:
        raise ValidationError(f"grid shape {grid.shape} does not match config {cfg.shape}")
    excited = _wrapped_convolve(grid.activity, cfg)
    inhibited = np.maximum(excited - cfg.inhibit_amount, 0.0)
    if not inhibited.sum() > 0.0:
        raise DegenerateGridError(
            f"inhibition {cfg.inhibit_amount} removed all activity (peak was {excited.max():.3g})"
        )
    return grid.with_activity(_normalize(inhibited))


# ---------------------------
# Path integration
# ---------------------------

def _shift_axis(activity: np.ndarray, cells: float, axis: int) -> np.ndarray:
    """Wrapped shift by a real number of cells, linear interpolation between rolls."""
    whole = math.floor(cells)
    frac = cells - whole
    shifted = np.roll(activity, whole, axis=axis)
    if frac == 0.0:
        return shifted
    return (1.0 - frac) * shifted + frac * np.roll(activity, whole + 1, axis=axis)


def path_integrate(grid: PoseCellGrid, delta: OdometryDelta, cfg: CANConfig) -> PoseCellGrid:
    """
    Shift activity by a body-frame odometry increment.

    The translation is rotated into the grid frame with the currently decoded
    heading, then x, y and theta are shifted with trilinear weights. Total
    activity is conserved.
    """
    if delta.is_zero():
        return grid
    activity = grid.activity
    if delta.dx != 0.0 or delta.dy != 0.0:
        theta = decode_pose(grid).pose.theta
        c, s = math.cos(theta), math.sin(theta)
        gx = c * delta.dx - s * delta.dy
        gy = s * delta.dx + c * delta.dy
        activity = _shift_axis(activity, gx / grid.cell_size_xy, axis=0)
        activity = _shift_axis(activity, gy / grid.cell_size_xy, axis=1)
    if delta.dtheta != 0.0:
        activity = _shift_axis(activity, delta.dtheta / grid.cell_size_theta, axis=2)
    return grid.with_activity(np.maximum(activity, 0.0))


# ---------------------------
# Injection and decoding
# ---------------------------

def inject(grid: PoseCellGrid, coords: Coords, energy: float, cfg: CANConfig) -> PoseCellGrid:
    """Add `energy` at one cell and renormalize to unit total."""
    _check_coords(coords, grid.shape)
    if not energy > 0.0:
        raise ValidationError(f"injection energy must be > 0, got {energy}")
    activity = np.array(grid.activity)
    activity[tuple(int(c) for c in coords)] += energy
    return grid.with_activity(_normalize(activity))


def _axis_centroid(weights: np.ndarray, radius: int) -> float:
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    return float(np.dot(offsets, weights) / weights.sum())


def decode_pose(grid: PoseCellGrid) -> DecodedPose:
    """
    Peak cell (lowest linear index on ties) refined by the activity-weighted
    centroid of its wrapped neighbourhood, mapped to metric units.
    """
    activity = grid.activity
    if not activity.max() > 0.0:
        raise DegenerateGridError("cannot decode an all-zero grid")
    peak = np.unravel_index(int(np.argmax(activity)), activity.shape)
    coords = tuple(int(c) for c in peak)

    radii = [min(DECODE_RADIUS, (n - 1) // 2) for n in activity.shape]
    index = [np.arange(c - r, c + r + 1) % n for c, r, n in zip(coords, radii, activity.shape)]
    patch = activity[np.ix_(*index)]

    refined = []
    for axis, (c, r, n) in enumerate(zip(coords, radii, activity.shape)):
        other = tuple(a for a in range(3) if a != axis)
        offset = _axis_centroid(patch.sum(axis=other), r)
        refined.append((c + offset) % n)

    pose = Pose2D(
        refined[0] * grid.cell_size_xy,
        refined[1] * grid.cell_size_xy,
        wrap_angle(refined[2] * grid.cell_size_theta),
    )
    return DecodedPose(pose=pose, coords=coords)


def wrapped_cell_distance(a: Coords, b: Coords, shape: Tuple[int, int, int]) -> float:
    """Euclidean distance between two cells on the torus, in cells."""
    total = 0.0
    for ca, cb, n in zip(a, b, shape):
        d = abs(int(ca) - int(cb)) % n
        d = min(d, n - d)
        total += d * d
    return math.sqrt(total)


def save_snapshot(grid: PoseCellGrid, path: str) -> None:
    """Dump dimensions and activity as JSON for offline plotting."""
    with atomic_write(path) as fh:
        json.dump(grid.to_dict(), fh)
    logger.debug(f"Grid snapshot written to {path}")
