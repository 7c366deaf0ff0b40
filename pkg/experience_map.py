"""
experience_map.py - Topological map of experiences and the links between them.

An experience pairs a view cell with the pose-cell coordinates active when
it was created and a pose in the (unwrapped) map frame. Links carry the
odometry accumulated between consecutive activations. Re-activating an old
experience adds a loop-closure link, after which the graph is relaxed so the
map poses agree with the link measurements.
"""

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import spsolve

from domain import (
    ORIGIN,
    MapFileError,
    OdometryDelta,
    Pose2D,
    ValidationError,
    atomic_write,
    wrap_angles,
)
from pose_cells import Coords, DecodedPose, wrapped_cell_distance
from view_cells import ViewCellStore, ViewMatch

logger = logging.getLogger(__name__)

MAP_FILE_VERSION = 1
EDGE_COLUMNS = ["from_x", "from_y", "to_x", "to_y", "is_loop_closure"]
RELAX_METHODS = ("jacobi", "least_squares")
GN_DAMPING = 1e-9


# ---------------------------
# Types
# ---------------------------

@dataclass(frozen=True)
class ExperienceMapConfig:
    pose_match_radius: float = 4.0       # cells, wrapped Euclidean
    relax_alpha: float = 0.25
    relax_iterations: int = 20
    relax_on_closure: bool = True
    pose_gate: bool = True
    grid_shape: Tuple[int, int, int] = (40, 40, 36)
    relax_method: str = "jacobi"         # on closure: "jacobi" or "least_squares"
    link_history: int = 9                # traversals kept per link, 1 keeps only the first

    def __post_init__(self):
        if self.pose_match_radius < 0:
            raise ValidationError("pose_match_radius must be >= 0")
        if not 0.0 <= self.relax_alpha <= 0.5:
            raise ValidationError(f"relax_alpha must lie in [0, 0.5], got {self.relax_alpha}")
        if self.relax_iterations < 0:
            raise ValidationError("relax_iterations must be >= 0")
        if self.relax_method not in RELAX_METHODS:
            raise ValidationError(f"relax_method must be one of {RELAX_METHODS}, got {self.relax_method!r}")
        if self.link_history < 1:
            raise ValidationError("link_history must be >= 1")
        object.__setattr__(self, "grid_shape", tuple(int(n) for n in self.grid_shape))
        if len(self.grid_shape) != 3 or min(self.grid_shape) < 3:
            raise ValidationError(f"grid_shape must be three axes of >= 3 cells, got {self.grid_shape}")


@dataclass
class Experience:
    id: int
    map_pose: Pose2D
    view_cell_id: int
    pose_coords: Coords
    visit_count: int = 1
    created_at: int = 0


@dataclass(frozen=True)
class Link:
    """
    Directed edge between two experiences.

    `measurements` holds the odometry of each traversal (oldest first) and
    `relative_pose` is their per-component median, so a single corrupted
    traversal cannot drag the estimate once the link has been driven three
    times.
    """

    from_id: int
    to_id: int
    relative_pose: Pose2D
    is_loop_closure: bool = False
    created_at: int = 0
    measurements: Tuple[Pose2D, ...] = ()

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValidationError(f"self-link on experience {self.from_id}")
        object.__setattr__(self, "measurements", tuple(self.measurements) or (self.relative_pose,))


class EventKind(str, Enum):
    CREATED = "created"
    STAY = "stay"
    TRANSITION = "transition"
    LOOP_CLOSURE = "loop_closure"


@dataclass(frozen=True)
class MapEvent:
    kind: EventKind
    experience_id: int
    link: Optional[Link] = None
    relax_residuals: List[float] = field(default_factory=list)


# ---------------------------
# Map
# ---------------------------

class ExperienceMap:
    """
    Experience graph driven one frame at a time by `step`.

    Experience ids are dense from 0 in creation order, experience 0 sits at
    the map origin and anchors relaxation.
    """

    def __init__(self, config: Optional[ExperienceMapConfig] = None):
        self.config = config or ExperienceMapConfig()
        self.experiences: List[Experience] = []
        self.links: List[Link] = []
        self.current_experience_id: Optional[int] = None
        self.accumulated_odometry: Pose2D = ORIGIN
        self._link_index: Dict[Tuple[int, int], int] = {}
        self._by_view_cell: Dict[int, List[int]] = {}

    def __len__(self) -> int:
        return len(self.experiences)

    def __eq__(self, other):
        return (
            isinstance(other, ExperienceMap)
            and self.config == other.config
            and self.experiences == other.experiences
            and self.links == other.links
            and self.current_experience_id == other.current_experience_id
            and self.accumulated_odometry == other.accumulated_odometry
        )

    @property
    def current(self) -> Optional[Experience]:
        if self.current_experience_id is None:
            return None
        return self.experiences[self.current_experience_id]

    @property
    def loop_closures(self) -> List[Link]:
        return [link for link in self.links if link.is_loop_closure]

    def has_link(self, from_id: int, to_id: int) -> bool:
        return (from_id, to_id) in self._link_index

    # ---------------------------
    # Frame update
    # ---------------------------

    def step(self, view_match: ViewMatch, decoded: DecodedPose, odometry: OdometryDelta,
             frame: int = 0) -> MapEvent:
        """
        Fold one frame into the map.

        Args:
            view_match: result of the view-cell store for this frame
            decoded: pose-cell estimate after this frame's CAN update
            odometry: body-frame motion since the previous frame
            frame: frame index, recorded on new experiences and links

        Returns:
            MapEvent describing what happened
        """
        self.accumulated_odometry = self.accumulated_odometry.compose(odometry.as_pose())

        if self.current_experience_id is None:
            exp = self._create(ORIGIN, view_match.cell_id, decoded.coords, frame)
            self.accumulated_odometry = ORIGIN
            self.current_experience_id = exp.id
            return MapEvent(EventKind.CREATED, exp.id)

        if view_match.is_new:
            return self._create_from_current(view_match.cell_id, decoded.coords, frame)

        target = self._select_candidate(view_match.cell_id, decoded.coords)
        if target is None:
            # view matched but the pose cells disagree: same view, different place
            return self._create_from_current(view_match.cell_id, decoded.coords, frame)

        current = self.current
        if target.id == current.id:
            return MapEvent(EventKind.STAY, current.id)

        link = None
        if not self.has_link(current.id, target.id):
            is_closure = target.id < current.id - 1
            link = self._add_link(current.id, target.id, self.accumulated_odometry, is_closure, frame)
        else:
            self._observe_link(current.id, target.id, self.accumulated_odometry)
        kind = EventKind.LOOP_CLOSURE if target.id < current.id - 1 else EventKind.TRANSITION

        target.visit_count += 1
        self.accumulated_odometry = ORIGIN
        self.current_experience_id = target.id

        residuals: List[float] = []
        if kind is EventKind.LOOP_CLOSURE:
            logger.info(f"Loop closure at frame {frame}: experience {current.id} -> {target.id}")
            if self.config.relax_on_closure:
                residuals = self.correct_in_place()
        return MapEvent(kind, target.id, link, residuals)

    def _select_candidate(self, view_cell_id: int, coords: Coords) -> Optional[Experience]:
        best, best_key = None, None
        for exp_id in self._by_view_cell.get(view_cell_id, []):
            exp = self.experiences[exp_id]
            dist = wrapped_cell_distance(exp.pose_coords, coords, self.config.grid_shape)
            if self.config.pose_gate and dist > self.config.pose_match_radius:
                continue
            key = (dist, exp.id)
            if best_key is None or key < best_key:
                best, best_key = exp, key
        return best

    def _create_from_current(self, view_cell_id: int, coords: Coords, frame: int) -> MapEvent:
        current = self.current
        pose = current.map_pose.compose(self.accumulated_odometry)
        exp = self._create(pose, view_cell_id, coords, frame)
        link = self._add_link(current.id, exp.id, self.accumulated_odometry, False, frame)
        self.accumulated_odometry = ORIGIN
        self.current_experience_id = exp.id
        return MapEvent(EventKind.CREATED, exp.id, link)

    def _create(self, pose: Pose2D, view_cell_id: int, coords: Coords, frame: int) -> Experience:
        exp = Experience(
            id=len(self.experiences),
            map_pose=pose,
            view_cell_id=int(view_cell_id),
            pose_coords=tuple(int(c) for c in coords),
            visit_count=1,
            created_at=int(frame),
        )
        self.experiences.append(exp)
        self._by_view_cell.setdefault(exp.view_cell_id, []).append(exp.id)
        return exp

    def _add_link(self, from_id: int, to_id: int, rel: Pose2D, is_closure: bool, frame: int,
                  measurements: Sequence[Pose2D] = ()) -> Link:
        link = Link(from_id, to_id, rel, is_closure, int(frame), tuple(measurements))
        self._link_index[(from_id, to_id)] = len(self.links)
        self.links.append(link)
        return link

    def _observe_link(self, from_id: int, to_id: int, rel: Pose2D) -> Link:
        index = self._link_index[(from_id, to_id)]
        link = self.links[index]
        history = self.config.link_history
        if history == 1:
            return link
        measurements = (link.measurements + (rel,))[-history:]
        link = replace(link, relative_pose=median_pose(measurements), measurements=measurements)
        self.links[index] = link
        return link

    # ---------------------------
    # Relaxation
    # ---------------------------

    def _arrays(self):
        poses = np.array([e.map_pose.as_array() for e in self.experiences], dtype=np.float64).reshape(-1, 3)
        src = np.array([l.from_id for l in self.links], dtype=np.int64)
        dst = np.array([l.to_id for l in self.links], dtype=np.int64)
        rel = np.array([l.relative_pose.as_array() for l in self.links], dtype=np.float64).reshape(-1, 3)
        return poses, src, dst, rel

    def residual(self) -> float:
        """Total squared disagreement between map poses and link measurements."""
        poses, src, dst, rel = self._arrays()
        return _residual(poses, src, dst, rel)

    def relax_in_place(self, iterations: Optional[int] = None, alpha: Optional[float] = None) -> List[float]:
        """
        Damped Jacobi relaxation of the map poses, experience 0 held fixed.

        Every other experience moves by `alpha` times the mean disagreement
        between its pose and the poses its incident links imply. A step that
        would raise the residual is halved (up to 10 times) and relaxation
        stops if none of the halvings help.

        Returns:
            residual before the first iteration followed by one entry per
            accepted iteration
        """
        iterations = self.config.relax_iterations if iterations is None else int(iterations)
        alpha = self.config.relax_alpha if alpha is None else float(alpha)
        if iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if not 0.0 <= alpha <= 0.5:
            raise ValidationError(f"alpha must lie in [0, 0.5], got {alpha}")

        poses, src, dst, rel = self._arrays()
        history = [_residual(poses, src, dst, rel)]
        if alpha == 0.0 or not self.links or len(self.experiences) < 2:
            return history

        for _ in range(iterations):
            accepted = _line_search(poses, _mean_correction(poses, src, dst, rel), alpha, src, dst, rel, history[-1])
            if accepted is None:
                break
            poses = accepted[0]
            history.append(accepted[1])
            if accepted[1] == 0.0:
                break

        self._write_poses(poses)
        return history

    def optimize_in_place(self, iterations: int = 10, tolerance: float = 1e-12) -> List[float]:
        """
        Gauss-Newton solve of the whole pose graph, experience 0 held fixed.

        Each iteration linearizes the link disagreements around the current
        poses and solves the sparse normal equations. The full step is halved
        (up to 10 times) until it does not raise the residual. Stops early
        once an iteration gains less than `tolerance` relative to the
        residual.

        Returns:
            residual history in the same form as relax_in_place
        """
        if iterations < 0:
            raise ValidationError("iterations must be >= 0")
        poses, src, dst, rel = self._arrays()
        history = [_residual(poses, src, dst, rel)]
        if not self.links or len(self.experiences) < 2:
            return history

        for _ in range(iterations):
            accepted = _line_search(poses, _gauss_newton_step(poses, src, dst, rel), 1.0, src, dst, rel, history[-1])
            if accepted is None:
                break
            poses = accepted[0]
            history.append(accepted[1])
            if history[-2] - history[-1] <= tolerance * (1.0 + history[-2]):
                break

        self._write_poses(poses)
        return history

    def correct_in_place(self) -> List[float]:
        """Loop-closure correction with the configured method."""
        if self.config.relax_method == "least_squares":
            return self.optimize_in_place()
        return self.relax_in_place()

    def _write_poses(self, poses: np.ndarray) -> None:
        for exp, row in zip(self.experiences, poses):
            exp.map_pose = Pose2D(row[0], row[1], row[2])

    # ---------------------------
    # Persistence
    # ---------------------------

    def to_dict(self) -> Dict:
        return {
            "config": {**asdict(self.config), "grid_shape": list(self.config.grid_shape)},
            "current_experience_id": self.current_experience_id,
            "accumulated_odometry": self.accumulated_odometry.as_array().tolist(),
            "experiences": [
                {
                    "id": e.id,
                    "x": e.map_pose.x,
                    "y": e.map_pose.y,
                    "theta": e.map_pose.theta,
                    "view_cell_id": e.view_cell_id,
                    "pose_coords": list(e.pose_coords),
                    "visit_count": e.visit_count,
                    "created_at": e.created_at,
                }
                for e in self.experiences
            ],
            "links": [
                {
                    "from_id": l.from_id,
                    "to_id": l.to_id,
                    "dx": l.relative_pose.x,
                    "dy": l.relative_pose.y,
                    "dtheta": l.relative_pose.theta,
                    "is_loop_closure": l.is_loop_closure,
                    "created_at": l.created_at,
                    "measurements": [m.as_array().tolist() for m in l.measurements],
                }
                for l in self.links
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperienceMap":
        exp_map = cls(ExperienceMapConfig(**data["config"]))
        for expected_id, e in enumerate(data["experiences"]):
            if int(e["id"]) != expected_id:
                raise ValidationError(f"experience ids must be dense, got {e['id']} at position {expected_id}")
            exp = exp_map._create(Pose2D(e["x"], e["y"], e["theta"]), e["view_cell_id"],
                                  e["pose_coords"], e["created_at"])
            exp.visit_count = int(e["visit_count"])
        count = len(exp_map.experiences)
        for l in data["links"]:
            from_id, to_id = int(l["from_id"]), int(l["to_id"])
            if not (0 <= from_id < count and 0 <= to_id < count):
                raise ValidationError(f"link {from_id}->{to_id} references a missing experience")
            if exp_map.has_link(from_id, to_id):
                raise ValidationError(f"duplicate link {from_id}->{to_id}")
            measurements = [Pose2D(*m) for m in l.get("measurements", [])]
            exp_map._add_link(from_id, to_id, Pose2D(l["dx"], l["dy"], l["dtheta"]),
                              bool(l["is_loop_closure"]), l["created_at"], measurements)
        current = data["current_experience_id"]
        if current is not None and not 0 <= int(current) < count:
            raise ValidationError(f"current experience {current} does not exist")
        exp_map.current_experience_id = None if current is None else int(current)
        exp_map.accumulated_odometry = Pose2D(*data["accumulated_odometry"])
        return exp_map


def relax(exp_map: ExperienceMap, iterations: int, alpha: float) -> ExperienceMap:
    """Relaxed copy of `exp_map`; the input is left untouched."""
    relaxed = copy.deepcopy(exp_map)
    relaxed.relax_in_place(iterations, alpha)
    return relaxed


def median_pose(measurements: Sequence[Pose2D]) -> Pose2D:
    """Per-component median; headings are taken as offsets from the first one."""
    if not measurements:
        raise ValidationError("median_pose needs at least one measurement")
    if len(measurements) == 1:
        return measurements[0]
    values = np.array([m.as_array() for m in measurements])
    reference = values[0, 2]
    offsets = wrap_angles(values[:, 2] - reference)
    return Pose2D(float(np.median(values[:, 0])), float(np.median(values[:, 1])),
                  reference + float(np.median(offsets)))


def _line_search(poses: np.ndarray, direction: np.ndarray, step: float, src: np.ndarray, dst: np.ndarray,
                 rel: np.ndarray, current: float) -> Optional[Tuple[np.ndarray, float]]:
    for _ in range(11):
        candidate = poses + step * direction
        candidate[:, 2] = wrap_angles(candidate[:, 2])
        value = _residual(candidate, src, dst, rel)
        if value <= current:
            return candidate, value
        step *= 0.5
    return None


def _gauss_newton_step(poses: np.ndarray, src: np.ndarray, dst: np.ndarray, rel: np.ndarray) -> np.ndarray:
    n, m = poses.shape[0], src.size
    residual = _disagreement(_implied(poses, src, rel), poses[dst]).ravel()
    c, s = np.cos(poses[src, 2]), np.sin(poses[src, 2])
    ones = np.ones(m)
    base = 3 * np.arange(m)
    # (row within the link's block, node, column within the node's block, value)
    blocks = [
        (0, src, 0, ones), (1, src, 1, ones), (2, src, 2, ones),
        (0, src, 2, -s * rel[:, 0] - c * rel[:, 1]),
        (1, src, 2, c * rel[:, 0] - s * rel[:, 1]),
        (0, dst, 0, -ones), (1, dst, 1, -ones), (2, dst, 2, -ones),
    ]
    rows = np.concatenate([base + r for r, _, _, _ in blocks])
    cols = np.concatenate([3 * node + k for _, node, k, _ in blocks])
    vals = np.concatenate([v for _, _, _, v in blocks])
    jacobian = sparse.csr_matrix((vals, (rows, cols)), shape=(3 * m, 3 * n))[:, 3:]   # experience 0 fixed
    normal = (jacobian.T @ jacobian + GN_DAMPING * sparse.identity(3 * (n - 1))).tocsc()
    delta = np.atleast_1d(spsolve(normal, -(jacobian.T @ residual)))
    return np.vstack([np.zeros((1, 3)), delta.reshape(-1, 3)])


def _implied(poses: np.ndarray, src: np.ndarray, rel: np.ndarray) -> np.ndarray:
    base = poses[src]
    c, s = np.cos(base[:, 2]), np.sin(base[:, 2])
    return np.stack([
        base[:, 0] + c * rel[:, 0] - s * rel[:, 1],
        base[:, 1] + s * rel[:, 0] + c * rel[:, 1],
        base[:, 2] + rel[:, 2],
    ], axis=1)


def _inverse(rel: np.ndarray) -> np.ndarray:
    c, s = np.cos(rel[:, 2]), np.sin(rel[:, 2])
    return np.stack([
        -(c * rel[:, 0] + s * rel[:, 1]),
        s * rel[:, 0] - c * rel[:, 1],
        -rel[:, 2],
    ], axis=1)


def _disagreement(implied: np.ndarray, actual: np.ndarray) -> np.ndarray:
    diff = implied - actual
    diff[:, 2] = wrap_angles(diff[:, 2])
    return diff


def _residual(poses: np.ndarray, src: np.ndarray, dst: np.ndarray, rel: np.ndarray) -> float:
    if src.size == 0:
        return 0.0
    diff = _disagreement(_implied(poses, src, rel), poses[dst])
    return float(np.sum(diff ** 2))


def _mean_correction(poses: np.ndarray, src: np.ndarray, dst: np.ndarray, rel: np.ndarray) -> np.ndarray:
    n = poses.shape[0]
    total = np.zeros_like(poses)
    count = np.zeros(n)
    # destination side: pose implied by source (+) rel
    np.add.at(total, dst, _disagreement(_implied(poses, src, rel), poses[dst]))
    np.add.at(count, dst, 1.0)
    # source side: pose implied by destination (+) rel^-1
    np.add.at(total, src, _disagreement(_implied(poses, dst, _inverse(rel)), poses[src]))
    np.add.at(count, src, 1.0)
    correction = np.divide(total, count[:, None], out=np.zeros_like(total), where=count[:, None] > 0)
    correction[0] = 0.0
    return correction


# ---------------------------
# Files
# ---------------------------

def save_map(exp_map: ExperienceMap, store: ViewCellStore, path: str) -> None:
    """Write map and view cells as one versioned JSON document."""
    document = {
        "version": MAP_FILE_VERSION,
        "map": exp_map.to_dict(),
        "view_cells": store.to_dict(),
    }
    with atomic_write(path) as fh:
        json.dump(document, fh)
    logger.debug(f"Map with {len(exp_map)} experiences written to {path}")


def load_map(path: str) -> Tuple[ExperienceMap, ViewCellStore]:
    try:
        with open(path, "r") as fh:
            document = json.load(fh)
    except FileNotFoundError as e:
        raise MapFileError(f"{path}: map file not found", missing=True) from e
    except OSError as e:
        raise MapFileError(f"{path}: cannot read map file ({e})") from e
    except ValueError as e:
        raise MapFileError(f"{path}: malformed map file ({e})") from e
    if not isinstance(document, dict):
        raise MapFileError(f"{path}: map file must contain a JSON object")
    version = document.get("version")
    if version != MAP_FILE_VERSION:
        raise MapFileError(f"{path}: unsupported map file version {version!r}, expected {MAP_FILE_VERSION}")
    try:
        exp_map = ExperienceMap.from_dict(document["map"])
        store = ViewCellStore.from_dict(document["view_cells"])
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise MapFileError(f"{path}: invalid map contents ({e})") from e
    for exp in exp_map.experiences:
        if exp.view_cell_id >= len(store):
            raise MapFileError(f"{path}: experience {exp.id} references missing view cell {exp.view_cell_id}")
    return exp_map, store


def edge_list(exp_map: ExperienceMap) -> pd.DataFrame:
    rows = []
    for link in exp_map.links:
        a = exp_map.experiences[link.from_id].map_pose
        b = exp_map.experiences[link.to_id].map_pose
        rows.append((a.x, a.y, b.x, b.y, int(link.is_loop_closure)))
    return pd.DataFrame(rows, columns=EDGE_COLUMNS)


def save_edge_list(exp_map: ExperienceMap, path: str) -> None:
    with atomic_write(path) as fh:
        edge_list(exp_map).to_csv(fh, index=False, float_format="%.17g")


# ---------------------------
# Evaluation against ground truth
# ---------------------------

@dataclass(frozen=True)
class TopologyMetrics:
    node_count: int
    link_count: int
    loop_closure_count: int
    true_closures: int
    false_closures: int
    missed_revisits: int
    revisit_match_rate: Optional[float]
    false_closure_rate: float
    mean_node_error: float
    revisit_frames: int = 0       # per-frame counts, filled when the active experiences are known
    recognized_frames: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


def _same_place(ground_truth: Sequence[Pose2D], frames: np.ndarray, here: Pose2D, radius: float,
                heading_tolerance: float) -> np.ndarray:
    xy = np.array([[ground_truth[f].x, ground_truth[f].y] for f in frames]).reshape(-1, 2)
    theta = np.array([ground_truth[f].theta for f in frames])
    near = np.hypot(xy[:, 0] - here.x, xy[:, 1] - here.y) <= radius
    return near & (np.abs(wrap_angles(theta - here.theta)) <= heading_tolerance)


def _recognized_frames(exp_map: ExperienceMap, ground_truth: Sequence[Pose2D], active: Sequence[int],
                       radius: float, heading_tolerance: float, min_frame_gap: int) -> Tuple[int, int]:
    created = np.array([e.created_at for e in exp_map.experiences])
    revisits = recognized = 0
    for t, exp_id in enumerate(active):
        eligible = np.flatnonzero(created <= t - min_frame_gap)
        if eligible.size == 0:
            continue
        same = _same_place(ground_truth, created[eligible], ground_truth[t], radius, heading_tolerance)
        if not same.any():
            continue
        revisits += 1
        recognized += int(exp_id in set(eligible[same].tolist()))
    return revisits, recognized


def topology_metrics(exp_map: ExperienceMap, ground_truth: Sequence[Pose2D], radius: float = 1.0,
                     heading_tolerance: float = math.pi / 4, min_frame_gap: int = 50,
                     active_experiences: Optional[Sequence[int]] = None) -> TopologyMetrics:
    """
    Score the map against per-frame ground-truth poses.

    Parameters:
    -----------
    ground_truth : sequence of Pose2D
        True pose at every frame index the map saw.
    radius : float
        Two places are the same when their true positions are within this
        distance (meters).
    heading_tolerance : float
        ...and their true headings differ by at most this much.
    min_frame_gap : int
        Only experiences created at least this many frames earlier count as
        revisit targets, so neighbours along the path are not revisits.
    active_experiences : sequence of int, optional
        Experience active after each frame (FrameReport.experience_id).

    Returns:
    --------
    TopologyMetrics. A closure is false when the true positions of the frame
    that made it and of its target experience are more than `radius` apart.
    A revisit is missed when a new experience is created at a place an older
    experience already covers.

    With `active_experiences`, revisit_match_rate is per frame: of the frames
    whose true pose an older experience covers, the share whose active
    experience is one of those. Without it, revisit_match_rate is
    true_closures / (true_closures + missed_revisits). Either way it is None
    when there is nothing to count.
    """
    if not exp_map.experiences:
        return TopologyMetrics(0, 0, 0, 0, 0, 0, None, 0.0, 0.0)
    needed = max([e.created_at for e in exp_map.experiences] + [l.created_at for l in exp_map.links])
    if active_experiences is not None:
        needed = max(needed, len(active_experiences) - 1)
        if any(not 0 <= int(e) < len(exp_map.experiences) for e in active_experiences):
            raise ValidationError("active experience ids must exist in the map")
    if ground_truth is None or len(ground_truth) <= needed or any(p is None for p in ground_truth[:needed + 1]):
        raise ValidationError(f"ground truth required for frames 0..{needed}")

    true_closures = false_closures = 0
    for link in exp_map.loop_closures:
        target = exp_map.experiences[link.to_id]
        if ground_truth[link.created_at].distance_to(ground_truth[target.created_at]) > radius:
            false_closures += 1
        else:
            true_closures += 1

    missed = 0
    for exp in exp_map.experiences[1:]:
        older = np.array([o.created_at for o in exp_map.experiences[:exp.id]
                          if o.created_at <= exp.created_at - min_frame_gap])
        if older.size and _same_place(ground_truth, older, ground_truth[exp.created_at], radius,
                                      heading_tolerance).any():
            missed += 1

    closures = true_closures + false_closures
    if active_experiences is None:
        revisit_frames = recognized = 0
        revisits = true_closures + missed
        match_rate = (true_closures / revisits) if revisits else None
    else:
        revisit_frames, recognized = _recognized_frames(exp_map, ground_truth, active_experiences, radius,
                                                        heading_tolerance, min_frame_gap)
        match_rate = (recognized / revisit_frames) if revisit_frames else None

    anchor = ground_truth[exp_map.experiences[0].created_at]
    errors = [
        anchor.compose(e.map_pose).distance_to(ground_truth[e.created_at])
        for e in exp_map.experiences
    ]
    return TopologyMetrics(
        node_count=len(exp_map.experiences),
        link_count=len(exp_map.links),
        loop_closure_count=closures,
        true_closures=true_closures,
        false_closures=false_closures,
        missed_revisits=missed,
        revisit_match_rate=match_rate,
        false_closure_rate=(false_closures / closures) if closures else 0.0,
        mean_node_error=float(np.mean(errors)),
        revisit_frames=revisit_frames,
        recognized_frames=recognized,
    )
