"""
evaluation.py - Numbers for judging a run against ground truth.

Place separation: how well cosine distance between two codes tells
"same place" from "different place", for latent codes and for the raw-pixel
baseline. Dead reckoning: how far integrated odometry drifts on its own.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from sklearn.metrics import roc_auc_score
from sklearn.metrics.pairwise import cosine_distances
from sklearn.preprocessing import StandardScaler

from domain import FrameRecord, Pose2D, ValidationError, integrate_odometry, wrap_angles

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeparationStats:
    intra_place_mean: float      # mean cosine distance over same-place pairs
    inter_place_mean: float      # ... over different-place pairs
    auc: float                   # ROC AUC of "same place" scored by -distance
    same_pairs: int
    different_pairs: int

    def to_dict(self) -> Dict:
        return asdict(self)


def _place_labels(poses: Sequence[Pose2D], place_radius: float, heading_tolerance: float,
                  min_frame_gap: int):
    xy = np.array([[p.x, p.y] for p in poses])
    theta = np.array([p.theta for p in poses])
    i, j = np.triu_indices(len(poses), k=max(1, min_frame_gap))
    dist = np.hypot(xy[i, 0] - xy[j, 0], xy[i, 1] - xy[j, 1])
    heading = np.abs(wrap_angles(theta[i] - theta[j]))
    same = (dist <= place_radius) & (heading <= heading_tolerance)
    # pairs in the ambiguous band between the two radii are left out
    different = dist > 2.0 * place_radius
    keep = same | different
    return i[keep], j[keep], same[keep]


def _separation(features: np.ndarray, poses: Sequence[Pose2D], place_radius: float,
                heading_tolerance: float, min_frame_gap: int, max_items: Optional[int],
                seed: int) -> SeparationStats:
    if len(features) != len(poses):
        raise ValidationError(f"{len(features)} codes but {len(poses)} poses")
    if any(p is None for p in poses):
        raise ValidationError("place separation needs ground truth for every frame")
    index = np.arange(len(poses))
    if max_items is not None and len(index) > max_items:
        index = np.sort(np.random.default_rng(seed).choice(len(index), size=max_items, replace=False))
    features = features[index]
    poses = [poses[k] for k in index]

    i, j, same = _place_labels(poses, place_radius, heading_tolerance, min_frame_gap)
    if same.all() or not same.any():
        raise ValidationError("need both same-place and different-place pairs to score separation")
    distances = cosine_distances(features)[i, j]
    return SeparationStats(
        intra_place_mean=float(distances[same].mean()),
        inter_place_mean=float(distances[~same].mean()),
        auc=float(roc_auc_score(same.astype(int), -distances)),
        same_pairs=int(same.sum()),
        different_pairs=int((~same).sum()),
    )


def latent_separation(latents: np.ndarray, poses: Sequence[Pose2D], place_radius: float = 0.5,
                      heading_tolerance: float = math.pi / 4, min_frame_gap: int = 0,
                      max_items: Optional[int] = 2000, seed: int = 0) -> SeparationStats:
    """
    Same-place vs different-place statistics of latent codes.

    Two frames show the same place when their true positions are within
    `place_radius` and headings within `heading_tolerance`; they show
    different places when more than twice that radius apart.
    """
    latents = np.asarray(latents, dtype=np.float64)
    return _separation(latents, poses, place_radius, heading_tolerance, min_frame_gap, max_items, seed)


def pixel_separation(observations: np.ndarray, poses: Sequence[Pose2D], place_radius: float = 0.5,
                     heading_tolerance: float = math.pi / 4, min_frame_gap: int = 0,
                     max_items: Optional[int] = 2000, seed: int = 0) -> SeparationStats:
    """Raw-pixel baseline: same statistics on flattened, mean-centred images."""
    flat = np.asarray(observations, dtype=np.float64).reshape(len(observations), -1)
    centred = StandardScaler(with_std=False).fit_transform(flat)
    return _separation(centred, poses, place_radius, heading_tolerance, min_frame_gap, max_items, seed)


@dataclass(frozen=True)
class DeadReckoningError:
    endpoint: float
    mean: float

    def to_dict(self) -> Dict:
        return asdict(self)


def dead_reckoning_error(frames: Sequence[FrameRecord]) -> DeadReckoningError:
    """Position error of integrated odometry, anchored at the first true pose."""
    if not frames or any(f.ground_truth is None for f in frames):
        raise ValidationError("dead-reckoning error needs ground truth for every frame")
    anchor = frames[0].ground_truth
    estimate = integrate_odometry([f.odometry for f in frames], anchor)
    errors = [est.distance_to(f.ground_truth) for est, f in zip(estimate, frames)]
    return DeadReckoningError(endpoint=float(errors[-1]), mean=float(np.mean(errors)))


def calibrate_match_threshold(codes: np.ndarray, poses: Sequence[Pose2D], separation: float = 0.1,
                              heading_tolerance: float = 0.1, margin: float = 0.5) -> float:
    """
    View-match threshold from a calibration run with known poses.

    Pairs whose true positions differ by more than `separation` or whose
    headings differ by more than `heading_tolerance` are distinct places.
    The threshold is `margin` times the smallest cosine distance between the
    codes of any distinct pair, so a code can only match a template recorded
    at (nearly) its own pose.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or len(codes) != len(poses):
        raise ValidationError(f"need one code per pose, got {codes.shape} codes for {len(poses)} poses")
    if any(p is None for p in poses):
        raise ValidationError("calibration needs ground truth for every frame")
    if not 0.0 < margin < 1.0:
        raise ValidationError(f"margin must lie in (0, 1), got {margin}")
    xy = np.array([[p.x, p.y] for p in poses]).reshape(-1, 2)
    theta = np.array([p.theta for p in poses])
    i, j = np.triu_indices(len(poses), k=1)
    distinct = (np.hypot(xy[i, 0] - xy[j, 0], xy[i, 1] - xy[j, 1]) > separation) | \
               (np.abs(wrap_angles(theta[i] - theta[j])) > heading_tolerance)
    if not distinct.any():
        raise ValidationError("calibration needs at least two distinct places")
    closest = float(cosine_distances(codes)[i[distinct], j[distinct]].min())
    if closest <= 1e-12:       # identical up to rounding
        raise ValidationError("two distinct places share a code; no threshold separates them")
    threshold = margin * closest
    logger.info(f"Calibrated match threshold {threshold:.3g} from {int(distinct.sum())} distinct pairs")
    return threshold
