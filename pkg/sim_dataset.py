"""
sim_dataset.py - Synthetic warehouse flights and the on-disk dataset format.

The warehouse is a row of parallel aisles running along x (aisle i at
y = i * aisle_spacing) lined by racks whose shelf texture is the same in every
aisle. A per-aisle cue, scaled by (1 - aliasing_level), is the only thing that
tells aisles apart. Odometry is corrupted with Gaussian noise and occasional
resets to the origin, the failure mode of an optical-flow tracker losing lock.

Dataset directory layout:
    manifest.json
    <sequence>/frames/000000.png ...
    <sequence>/odometry.csv      t, dx, dy, dtheta, a0..a{A-1}, gt_x, gt_y, gt_theta
"""

import json
import logging
import math
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image

from domain import (
    ORIGIN,
    Action,
    DatasetError,
    FrameRecord,
    Observation,
    OdometryDelta,
    Pose2D,
    ValidationError,
    delta_between,
    integrate_odometry,
    wrap_angle,
)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
ODOMETRY_NAME = "odometry.csv"
FRAMES_DIR = "frames"

# renderer constants
HORIZONTAL_FOV = 1.6        # radians
VERTICAL_FOV = 1.2
MAX_RANGE = 8.0             # meters
KNOT_SPACING = 0.5          # meters between texture knots along a rack
SHELF_PITCH = 0.4           # meters between shelf boards
RACK_HALF_HEIGHT = 1.2
BACKGROUND = 0.35
CUE_BLOCKS = 8
CUE_GAIN = 0.2


# ---------------------------
# Specs
# ---------------------------

@dataclass(frozen=True)
class WarehouseSpec:
    num_aisles: int = 3
    aisle_length: float = 10.0      # meters
    aisle_spacing: float = 3.0      # meters between aisle centre lines
    aliasing_level: float = 0.9     # 1 = aisles indistinguishable
    texture_seed: int = 0
    margin: float = 1.0             # free space beyond aisle ends and outer racks

    def __post_init__(self):
        if self.num_aisles < 1:
            raise ValidationError("num_aisles must be >= 1")
        if self.aisle_length <= 0 or self.aisle_spacing <= 0 or self.margin < 0:
            raise ValidationError("aisle_length and aisle_spacing must be > 0, margin >= 0")
        if not 0.0 <= self.aliasing_level <= 1.0:
            raise ValidationError(f"aliasing_level must lie in [0, 1], got {self.aliasing_level}")

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max)"""
        return (-self.margin, self.aisle_length + self.margin,
                -self.margin, (self.num_aisles - 1) * self.aisle_spacing + self.margin)

    def contains(self, x: float, y: float) -> bool:
        x_min, x_max, y_min, y_max = self.bounds
        return x_min <= x <= x_max and y_min <= y <= y_max

    def aisle_of(self, y: float) -> int:
        return int(min(max(round(y / self.aisle_spacing), 0), self.num_aisles - 1))


@dataclass(frozen=True)
class OdometryNoiseSpec:
    gaussian_std_xy: float = 0.05
    gaussian_std_theta: float = 0.01
    reset_probability: float = 0.005

    def __post_init__(self):
        if self.gaussian_std_xy < 0 or self.gaussian_std_theta < 0:
            raise ValidationError("odometry noise std must be >= 0")
        if not 0.0 <= self.reset_probability < 1.0:
            raise ValidationError("reset_probability must lie in [0, 1)")


@dataclass(frozen=True)
class DatasetSpec:
    warehouse: WarehouseSpec = field(default_factory=WarehouseSpec)
    noise: OdometryNoiseSpec = field(default_factory=OdometryNoiseSpec)
    num_sequences: int = 7
    loops_per_sequence: int = 2
    frames_per_meter: float = 10.0
    image_shape: Tuple[int, int, int] = (64, 64, 3)
    action_dim: int = 4
    waypoint_jitter: float = 0.15
    max_turn: float = 0.3          # radians per frame
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))
        if self.num_sequences < 1 or self.loops_per_sequence < 1:
            raise ValidationError("num_sequences and loops_per_sequence must be >= 1")
        if self.frames_per_meter <= 0 or self.max_turn <= 0:
            raise ValidationError("frames_per_meter and max_turn must be > 0")
        if len(self.image_shape) != 3 or min(self.image_shape) < 1:
            raise ValidationError(f"image_shape must be (H, W, C), got {self.image_shape}")
        if self.image_shape[2] not in (1, 3, 4):
            raise ValidationError("PNG frames need 1, 3 or 4 channels")
        if self.action_dim < 0 or self.waypoint_jitter < 0:
            raise ValidationError("action_dim and waypoint_jitter must be >= 0")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["image_shape"] = list(self.image_shape)
        return data


@dataclass
class SequenceData:
    name: str
    frames: List[FrameRecord]
    reset_frames: List[int] = field(default_factory=list)
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def ground_truth(self) -> List[Optional[Pose2D]]:
        return [f.ground_truth for f in self.frames]


@dataclass
class DatasetManifest:
    image_shape: Tuple[int, int, int]
    action_dim: int
    sequences: List[Dict]
    spec: Optional[Dict] = None
    version: int = MANIFEST_VERSION

    @property
    def total_frames(self) -> int:
        return sum(int(s["frame_count"]) for s in self.sequences)


# ---------------------------
# Rendering
# ---------------------------

class WarehouseRenderer:
    """
    Column-wise ray caster over the two racks of the nearest aisle.

    Every column looks along bearing theta + b; the ray hits the left or right
    rack depending on the sign of sin(bearing), at the range where it crosses
    the rack line, capped at MAX_RANGE. Rows sample elevation, shelf boards
    repeat every SHELF_PITCH meters. Pixels are quantized to k/255 so PNG
    storage is lossless.
    """

    def __init__(self, spec: WarehouseSpec, image_shape: Tuple[int, int, int] = (64, 64, 3),
                 seed: Optional[int] = None):
        self.spec = spec
        self.image_shape = tuple(int(v) for v in image_shape)
        h, w, c = self.image_shape
        rng = np.random.default_rng(spec.texture_seed if seed is None else seed)

        x_min, x_max, _, _ = spec.bounds
        first = math.floor((x_min - MAX_RANGE) / KNOT_SPACING) - 1
        last = math.ceil((x_max + MAX_RANGE) / KNOT_SPACING) + 1
        self._knots = np.arange(first, last + 1) * KNOT_SPACING
        # index 0: rack on the +y side of an aisle, 1: rack on the -y side
        self._texture = rng.uniform(-1.0, 1.0, size=(2, self._knots.size))
        self._cues = rng.uniform(-1.0, 1.0, size=(spec.num_aisles, CUE_BLOCKS, CUE_BLOCKS))

        self._bearings = (np.arange(w) - (w - 1) / 2.0) / (w / 2.0) * (HORIZONTAL_FOV / 2.0)
        self._tan_elev = np.tan(((h - 1) / 2.0 - np.arange(h)) / (h / 2.0) * (VERTICAL_FOV / 2.0))
        self._channel_offset = 0.04 * (np.arange(c) - (c - 1) / 2.0)
        self._cue_rows = np.arange(h) * CUE_BLOCKS // h
        self._cue_cols = np.arange(w) * CUE_BLOCKS // w

    def render(self, pose: Pose2D) -> Observation:
        spec = self.spec
        if not spec.contains(pose.x, pose.y):
            raise ValidationError(f"pose ({pose.x:.3f}, {pose.y:.3f}) outside warehouse bounds {spec.bounds}")
        aisle = spec.aisle_of(pose.y)
        half_width = spec.aisle_spacing / 2.0
        lateral = pose.y - aisle * spec.aisle_spacing

        phi = pose.theta + self._bearings
        sin_phi, cos_phi = np.sin(phi), np.cos(phi)
        upper = sin_phi > 0
        wall_dist = np.maximum(np.where(upper, half_width - lateral, half_width + lateral), 0.05)
        with np.errstate(divide="ignore"):
            ray = np.where(np.abs(sin_phi) > 1e-12, wall_dist / np.abs(sin_phi), np.inf)
        hit = ray < MAX_RANGE
        ray = np.minimum(ray, MAX_RANGE)
        u = pose.x + cos_phi * ray

        tex = np.where(
            upper,
            np.interp(u, self._knots, self._texture[0]),
            np.interp(u, self._knots, self._texture[1]),
        )
        z = self._tan_elev[:, None] * ray[None, :]                     # (H, W) elevation of the hit point
        board = np.cos(2.0 * math.pi * z / SHELF_PITCH)
        on_rack = hit[None, :] & (np.abs(z) <= RACK_HALF_HEIGHT)
        base = np.where(on_rack, 0.5 + 0.25 * tex[None, :] * board, BACKGROUND)

        cue = self._cues[aisle][np.ix_(self._cue_rows, self._cue_cols)]
        value = base + (1.0 - spec.aliasing_level) * CUE_GAIN * cue
        pixels = np.clip(value[:, :, None] + self._channel_offset[None, None, :], 0.0, 1.0)
        return Observation(np.round(pixels * 255.0) / 255.0)


def render_observation(pose: Pose2D, spec: WarehouseSpec, seed: Optional[int] = None,
                       image_shape: Tuple[int, int, int] = (64, 64, 3)) -> Observation:
    """One-off render; prefer a WarehouseRenderer when rendering many frames."""
    return WarehouseRenderer(spec, image_shape, seed).render(pose)


# ---------------------------
# Trajectories
# ---------------------------

@dataclass
class Trajectory:
    poses: List[Pose2D]
    actions: np.ndarray              # (T, A); row t is the control that led to pose t
    odometry: List[OdometryDelta]    # element t is the motion from t-1 to t

    def __len__(self) -> int:
        return len(self.poses)


def aisle_loop_plan(spec: WarehouseSpec, loops: int = 1) -> List[Tuple[float, float]]:
    """
    Serpentine through every aisle and back to (0, 0).

    With an odd number of aisles the return runs along the far end (x = L)
    and then down aisle 0; with an even number it runs along x = 0.
    """
    if loops < 1:
        raise ValidationError("loops must be >= 1")
    L, s = spec.aisle_length, spec.aisle_spacing
    lap: List[Tuple[float, float]] = []
    for i in range(spec.num_aisles):
        y = i * s
        ends = (0.0, L) if i % 2 == 0 else (L, 0.0)
        lap += [(ends[0], y), (ends[1], y)]
    last_x = lap[-1][0]
    if last_x == L:
        lap += [(L, 0.0), (0.0, 0.0)]
    else:
        lap += [(0.0, 0.0)]
    plan = [lap[0]]
    for _ in range(loops):
        for point in lap[1:]:
            if point != plan[-1]:
                plan.append(point)
        if plan[-1] != lap[0]:
            plan.append(lap[0])
    return plan


def generate_trajectory(spec: WarehouseSpec, plan: Sequence[Tuple[float, float]], seed: int = 0,
                        frames_per_meter: float = 10.0, max_turn: float = 0.3,
                        jitter: float = 0.0, action_dim: int = 4) -> Trajectory:
    """
    Constant-speed flight through `plan`, turning in place at each corner.

    Args:
        plan: (x, y) waypoints; a repeated waypoint holds position for one frame
        seed: drives the waypoint jitter
        frames_per_meter: frames per meter of travel
        max_turn: largest heading change per frame (radians)
        jitter: std (meters) of Gaussian noise added to interior waypoints

    Returns:
        Trajectory whose actions are [thrust, roll, pitch, yaw-rate]-style
        controls derived from the body-frame motion, truncated or zero-padded
        to `action_dim`
    """
    if not plan:
        raise ValidationError("plan needs at least one waypoint")
    points = np.array(plan, dtype=np.float64).reshape(-1, 2)
    for x, y in points:
        if not spec.contains(x, y):
            raise ValidationError(f"waypoint ({x}, {y}) outside warehouse bounds {spec.bounds}")
    if jitter > 0 and len(points) > 2:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, jitter, size=(len(points) - 2, 2))
        moved = points[1:-1] + noise
        x_min, x_max, y_min, y_max = spec.bounds
        moved[:, 0] = np.clip(moved[:, 0], x_min, x_max)
        moved[:, 1] = np.clip(moved[:, 1], y_min, y_max)
        # keep repeated waypoints repeated
        same_as_prev = np.all(points[1:-1] == points[:-2], axis=1)
        for k in np.flatnonzero(same_as_prev):
            moved[k] = moved[k - 1] if k > 0 else points[0]
        points = np.vstack([points[:1], moved, points[-1:]])

    heading = 0.0
    for q in points[1:]:
        if not np.array_equal(q, points[0]):
            heading = math.atan2(q[1] - points[0][1], q[0] - points[0][0])
            break
    poses = [Pose2D(points[0][0], points[0][1], heading)]

    for p, q in zip(points[:-1], points[1:]):
        current = poses[-1]
        dist = math.hypot(q[0] - p[0], q[1] - p[1])
        if dist == 0.0:
            poses.append(current)
            continue
        target = math.atan2(q[1] - p[1], q[0] - p[0])
        turn = wrap_angle(target - current.theta)
        n_turn = math.ceil(abs(turn) / max_turn - 1e-12)
        for k in range(1, n_turn + 1):
            poses.append(Pose2D(current.x, current.y, current.theta + turn * k / n_turn))
        n_steps = max(1, int(round(dist * frames_per_meter)))
        for k in range(1, n_steps + 1):
            f = k / n_steps
            poses.append(Pose2D(p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1]), target))

    odometry = [OdometryDelta.zero()] + [delta_between(a, b) for a, b in zip(poses, poses[1:])]
    controls = np.zeros((len(poses), 4))
    for t, delta in enumerate(odometry[1:], start=1):
        controls[t] = [0.0, delta.dy * frames_per_meter, delta.dx * frames_per_meter, delta.dtheta / max_turn]
    actions = np.zeros((len(poses), action_dim))
    keep = min(4, action_dim)
    actions[:, :keep] = controls[:, :keep]
    return Trajectory(poses=poses, actions=actions, odometry=odometry)


# ---------------------------
# Odometry corruption
# ---------------------------

def corrupt_odometry(deltas: Sequence[OdometryDelta], noise: OdometryNoiseSpec, seed: int = 0,
                     forced_resets: Sequence[int] = ()) -> Tuple[List[OdometryDelta], np.ndarray]:
    """
    Add Gaussian noise to every delta after frame 0 and inject resets.

    A reset at frame k replaces the delta so that dead reckoning lands on
    (0, 0) at frame k while keeping its heading. Flags mark reset frames and
    are meant for evaluation only.
    """
    n = len(deltas)
    rng = np.random.default_rng(seed)
    gaussian = rng.normal(size=(n, 3)) * np.array([noise.gaussian_std_xy, noise.gaussian_std_xy,
                                                   noise.gaussian_std_theta])
    draws = rng.random(n)
    resets = draws < noise.reset_probability
    resets[0] = False
    for k in forced_resets:
        if not 0 <= k < n:
            raise ValidationError(f"forced reset at {k} outside sequence of {n} frames")
        resets[k] = True

    noisy: List[OdometryDelta] = []
    pose = ORIGIN
    for t, delta in enumerate(deltas):
        if t == 0:
            step = OdometryDelta(delta.dx, delta.dy, delta.dtheta)
        else:
            step = OdometryDelta(delta.dx + gaussian[t, 0], delta.dy + gaussian[t, 1],
                                 delta.dtheta + gaussian[t, 2])
        if resets[t]:
            heading = pose.theta + step.dtheta
            step = delta_between(pose, Pose2D(0.0, 0.0, heading))
        pose = pose.compose(step.as_pose())
        noisy.append(step)
    return noisy, resets


def dead_reckon(frames: Sequence[FrameRecord]) -> List[Pose2D]:
    """Integrated odometry of a sequence, starting at the origin."""
    return integrate_odometry([f.odometry for f in frames], ORIGIN)


# ---------------------------
# Sequence and dataset generation
# ---------------------------

def generate_sequence(spec: DatasetSpec, seed: int, name: str = "seq_000",
                      forced_resets: Sequence[int] = ()) -> SequenceData:
    plan = aisle_loop_plan(spec.warehouse, spec.loops_per_sequence)
    traj = generate_trajectory(spec.warehouse, plan, seed, spec.frames_per_meter, spec.max_turn,
                               spec.waypoint_jitter, spec.action_dim)
    noisy, resets = corrupt_odometry(traj.odometry, spec.noise, seed, forced_resets)
    renderer = WarehouseRenderer(spec.warehouse, spec.image_shape)
    frames = [
        FrameRecord(t, renderer.render(pose), Action(traj.actions[t]), noisy[t], pose)
        for t, pose in enumerate(traj.poses)
    ]
    return SequenceData(name=name, frames=frames, reset_frames=[int(k) for k in np.flatnonzero(resets)], seed=seed)


def sequence_seeds(seed: int, count: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def generate_dataset(spec: DatasetSpec, max_workers: Optional[int] = None) -> List[SequenceData]:
    """Generate every sequence in parallel; output is independent of scheduling."""
    seeds = sequence_seeds(spec.seed, spec.num_sequences)
    names = [f"seq_{i:03d}" for i in range(spec.num_sequences)]
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        sequences = list(executor.map(lambda args: generate_sequence(spec, *args), zip(seeds, names)))
    logger.info(f"Generated {len(sequences)} sequences, {sum(len(s) for s in sequences)} frames")
    return sequences


# ---------------------------
# Dataset IO
# ---------------------------

def _odometry_frame(frames: Sequence[FrameRecord]) -> pd.DataFrame:
    action_dim = frames[0].action.dim
    rows = []
    has_gt = all(f.ground_truth is not None for f in frames)
    for f in frames:
        row = {"t": f.t, "dx": f.odometry.dx, "dy": f.odometry.dy, "dtheta": f.odometry.dtheta}
        row.update({f"a{i}": float(v) for i, v in enumerate(f.action.controls)})
        if has_gt:
            row.update({"gt_x": f.ground_truth.x, "gt_y": f.ground_truth.y, "gt_theta": f.ground_truth.theta})
        rows.append(row)
    columns = ["t", "dx", "dy", "dtheta"] + [f"a{i}" for i in range(action_dim)]
    if has_gt:
        columns += ["gt_x", "gt_y", "gt_theta"]
    return pd.DataFrame(rows, columns=columns)


def _write_png(pixels: np.ndarray, path: str) -> None:
    data = np.round(pixels * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    Image.fromarray(data).save(path, format="PNG")


def _read_png(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            data = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError as e:
        raise DatasetError(path, "missing frame", missing=True) from e
    except OSError as e:
        raise DatasetError(path, f"unreadable frame ({e})") from e
    if data.ndim == 2:
        data = data[:, :, None]
    return data.astype(np.float64) / 255.0


def save_dataset(sequences: Sequence[SequenceData], directory: str, spec: Optional[DatasetSpec] = None) -> DatasetManifest:
    """
    Write sequences under `directory`.

    Everything is written into a temporary sibling first and renamed into
    place, so a failure leaves no partial dataset. `directory` must not exist
    or be empty.
    """
    if not sequences:
        raise ValidationError("nothing to save")
    directory = os.path.abspath(directory)
    if os.path.isdir(directory) and os.listdir(directory):
        raise ValidationError(f"{directory} exists and is not empty")
    first = sequences[0].frames[0]
    image_shape = tuple(first.observation.shape)
    action_dim = first.action.dim

    parent = os.path.dirname(directory)
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(dir=parent, prefix=".tmp-dataset-")
    try:
        entries = []
        for seq in sequences:
            for frame in seq.frames:
                if tuple(frame.observation.shape) != image_shape or frame.action.dim != action_dim:
                    raise ValidationError(f"{seq.name}: frame {frame.t} does not match the dataset shapes")
            seq_dir = os.path.join(staging, seq.name)
            os.makedirs(os.path.join(seq_dir, FRAMES_DIR))
            for i, frame in enumerate(seq.frames):
                _write_png(frame.observation.pixels, os.path.join(seq_dir, FRAMES_DIR, f"{i:06d}.png"))
            _odometry_frame(seq.frames).to_csv(os.path.join(seq_dir, ODOMETRY_NAME), index=False)
            entries.append({
                "name": seq.name,
                "frame_count": len(seq.frames),
                "frames_dir": f"{seq.name}/{FRAMES_DIR}",
                "odometry_csv": f"{seq.name}/{ODOMETRY_NAME}",
                "seed": seq.seed,
                "reset_frames": list(seq.reset_frames),
            })
        manifest = DatasetManifest(image_shape, action_dim, entries, spec.to_dict() if spec else None)
        with open(os.path.join(staging, MANIFEST_NAME), "w") as fh:
            json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        if os.path.isdir(directory):
            os.rmdir(directory)
        os.replace(staging, directory)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info(f"Dataset with {len(sequences)} sequences written to {directory}")
    return manifest


def load_manifest(directory: str) -> DatasetManifest:
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path, "r") as fh:
            data = json.load(fh)
    except FileNotFoundError as e:
        raise DatasetError(path, "missing manifest", missing=True) from e
    except (OSError, ValueError) as e:
        raise DatasetError(path, f"unreadable manifest ({e})") from e
    try:
        manifest = DatasetManifest(
            image_shape=tuple(int(v) for v in data["image_shape"]),
            action_dim=int(data["action_dim"]),
            sequences=list(data["sequences"]),
            spec=data.get("spec"),
            version=int(data.get("version", MANIFEST_VERSION)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(path, f"invalid manifest ({e})") from e
    if manifest.version != MANIFEST_VERSION:
        raise DatasetError(path, f"unsupported manifest version {manifest.version}")
    return manifest


def _load_sequence(directory: str, entry: Dict, manifest: DatasetManifest) -> SequenceData:
    name = entry["name"]
    csv_path = os.path.join(directory, entry.get("odometry_csv", f"{name}/{ODOMETRY_NAME}"))
    frames_dir = os.path.join(directory, entry.get("frames_dir", f"{name}/{FRAMES_DIR}"))
    try:
        table = pd.read_csv(csv_path, float_precision="round_trip")
    except FileNotFoundError as e:
        raise DatasetError(csv_path, "missing odometry file", missing=True) from e
    except (OSError, ValueError) as e:
        raise DatasetError(csv_path, f"unreadable odometry file ({e})") from e

    action_cols = [f"a{i}" for i in range(manifest.action_dim)]
    missing = [c for c in ["t", "dx", "dy", "dtheta"] + action_cols if c not in table.columns]
    if missing:
        raise DatasetError(csv_path, f"missing columns {missing}")
    expected = int(entry["frame_count"])
    if len(table) != expected:
        raise DatasetError(csv_path, f"manifest says {expected} frames, odometry has {len(table)}")
    has_gt = all(c in table.columns for c in ("gt_x", "gt_y", "gt_theta"))

    frames = []
    for i, row in enumerate(table.itertuples(index=False)):
        row = row._asdict()
        pixels = _read_png(os.path.join(frames_dir, f"{i:06d}.png"))
        if tuple(pixels.shape) != manifest.image_shape:
            raise DatasetError(os.path.join(frames_dir, f"{i:06d}.png"),
                               f"image shape {pixels.shape} != manifest {manifest.image_shape}")
        try:
            frames.append(FrameRecord(
                t=int(row["t"]),
                observation=Observation(pixels),
                action=Action(np.array([row[c] for c in action_cols], dtype=np.float64)),
                odometry=OdometryDelta(row["dx"], row["dy"], row["dtheta"]),
                ground_truth=Pose2D(row["gt_x"], row["gt_y"], row["gt_theta"]) if has_gt else None,
            ))
        except ValidationError as e:
            raise DatasetError(csv_path, f"row {i}: {e}") from e
    return SequenceData(name=name, frames=frames, reset_frames=list(entry.get("reset_frames", [])),
                        seed=entry.get("seed"))


def load_dataset(directory: str) -> Tuple[List[SequenceData], DatasetManifest]:
    """Load every sequence listed in the manifest. Works for recorded logs in the same layout."""
    manifest = load_manifest(directory)
    sequences = [_load_sequence(directory, entry, manifest) for entry in manifest.sequences]
    logger.info(f"Loaded {len(sequences)} sequences ({manifest.total_frames} frames) from {directory}")
    return sequences, manifest
