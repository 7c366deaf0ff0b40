"""
SLAM pipeline: per-frame orchestration of the latent encoder, the view cells,
the pose-cell network and the experience map.

For every frame:
    1. latent = encode(prev_latent, action, observation)
    2. shift pose-cell activity by the odometry
    3. match the latent against the view cells (new cells link to the current
       peak); a match injects energy at the cell's linked coordinates
    4. attractor iterations
    5. decode the pose estimate
    6. experience map update
"""

import json
import logging
import queue
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from domain import (
    Action,
    FrameProcessingError,
    FrameRecord,
    InputError,
    LatentSlamError,
    Observation,
    Pose2D,
    ValidationError,
    atomic_write,
    validate_sequence,
)
from experience_map import EventKind, ExperienceMap, ExperienceMapConfig
from latent_model import LatentSample
from pose_cells import (
    CANConfig,
    Coords,
    PoseCellGrid,
    decode_pose,
    inject,
    iterate,
    path_integrate,
)
from view_cells import ViewCellConfig, ViewCellStore, active_injection

logger = logging.getLogger(__name__)


class Encoder(Protocol):
    """Anything that maps (previous latent, action, observation) to a latent."""

    latent_dim: int

    def encode(self, prev: LatentSample, action: Action, obs: Observation) -> LatentSample:
        ...


# ---------------------------
# Configuration and state
# ---------------------------

@dataclass(frozen=True)
class SlamConfig:
    can: CANConfig = field(default_factory=CANConfig)
    view: ViewCellConfig = field(default_factory=ViewCellConfig)
    map: Optional[ExperienceMapConfig] = None      # None: defaults on the CAN grid shape
    can_iterations: int = 1
    checkpoint_path: Optional[str] = None
    initial_coords: Coords = (0, 0, 0)

    def __post_init__(self):
        if self.map is None:
            object.__setattr__(self, "map", ExperienceMapConfig(grid_shape=self.can.shape))
        if tuple(self.map.grid_shape) != self.can.shape:
            raise ValidationError(f"experience map grid {self.map.grid_shape} != pose-cell grid {self.can.shape}")
        if self.can_iterations < 0:
            raise ValidationError("can_iterations must be >= 0")
        if any(not 0 <= c < n for c, n in zip(self.initial_coords, self.can.shape)):
            raise ValidationError(f"initial_coords {self.initial_coords} outside grid {self.can.shape}")


@dataclass
class SlamState:
    prev_latent: LatentSample
    grid: PoseCellGrid
    store: ViewCellStore
    map: ExperienceMap
    frame_index: int = 0

    @classmethod
    def initial(cls, cfg: SlamConfig, latent_dim: int) -> "SlamState":
        return cls(
            prev_latent=LatentSample.zero(latent_dim),
            grid=PoseCellGrid.spike(cfg.can, cfg.initial_coords),
            store=ViewCellStore(cfg.view.match_threshold),
            map=ExperienceMap(cfg.map),
        )


@dataclass(frozen=True)
class FrameReport:
    t: int
    latent: Tuple[float, ...]
    view_cell_id: int
    is_new_view: bool
    match_distance: Optional[float]
    decoded_pose: Pose2D
    pose_coords: Coords
    event: EventKind
    experience_id: int
    map_pose: Pose2D
    latency_ms: float = field(default=0.0, compare=False)

    def to_dict(self) -> Dict:
        return {
            "t": self.t,
            "latent": list(self.latent),
            "view_cell_id": self.view_cell_id,
            "is_new_view": self.is_new_view,
            "match_distance": self.match_distance,
            "decoded_pose": asdict(self.decoded_pose),
            "pose_coords": list(self.pose_coords),
            "event": self.event.value,
            "experience_id": self.experience_id,
            "map_pose": asdict(self.map_pose),
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FrameReport":
        return cls(
            t=int(data["t"]),
            latent=tuple(float(v) for v in data["latent"]),
            view_cell_id=int(data["view_cell_id"]),
            is_new_view=bool(data["is_new_view"]),
            match_distance=data["match_distance"],
            decoded_pose=Pose2D(**data["decoded_pose"]),
            pose_coords=tuple(int(c) for c in data["pose_coords"]),
            event=EventKind(data["event"]),
            experience_id=int(data["experience_id"]),
            map_pose=Pose2D(**data["map_pose"]),
            latency_ms=float(data.get("latency_ms", 0.0)),
        )


# ---------------------------
# Frame processing
# ---------------------------

def process_frame(state: SlamState, frame: FrameRecord, encoder: Encoder, cfg: SlamConfig,
                  latent: Optional[LatentSample] = None) -> Tuple[SlamState, FrameReport]:
    """
    Run one frame through the pipeline.

    The view-cell store and experience map inside `state` are updated in
    place; the returned state carries the new grid and latent. Pass `latent`
    when the encoder already ran for this frame.
    """
    start = time.perf_counter()
    try:
        if latent is None:
            latent = encoder.encode(state.prev_latent, frame.action, frame.observation)
        grid = path_integrate(state.grid, frame.odometry, cfg.can)
        linked = decode_pose(grid)
        match = state.store.match_or_create(latent.values, linked.coords, frame.t)
        if not match.is_new:
            request = active_injection(state.store[match.cell_id], cfg.can)
            grid = inject(grid, request.coords, request.energy, cfg.can)
        for _ in range(cfg.can_iterations):
            grid = iterate(grid, cfg.can)
        decoded = decode_pose(grid)
        event = state.map.step(match, decoded, frame.odometry, frame.t)
    except FrameProcessingError:
        raise
    except (LatentSlamError, ValueError) as e:
        raise FrameProcessingError(frame.t, str(e)) from e

    state.prev_latent = latent
    state.grid = grid
    state.frame_index = frame.t + 1
    experience = state.map.experiences[event.experience_id]
    report = FrameReport(
        t=frame.t,
        latent=tuple(float(v) for v in latent.values),
        view_cell_id=match.cell_id,
        is_new_view=match.is_new,
        match_distance=match.distance,
        decoded_pose=decoded.pose,
        pose_coords=decoded.coords,
        event=event.kind,
        experience_id=event.experience_id,
        map_pose=experience.map_pose,
        latency_ms=(time.perf_counter() - start) * 1000.0,
    )
    logger.debug(f"Frame {frame.t}: view {match.cell_id}{'*' if match.is_new else ''} "
                 f"coords {decoded.coords} -> {event.kind.value} {event.experience_id}")
    return state, report


def _encode_ahead(encoder: Encoder, frames: Sequence[FrameRecord], start: LatentSample,
                  out: "queue.Queue") -> None:
    prev = start
    for frame in frames:
        try:
            prev = encoder.encode(prev, frame.action, frame.observation)
        except Exception as e:
            out.put((frame.t, e))
            return
        out.put((frame.t, prev))


def run_sequence(frames: Sequence[FrameRecord], encoder: Encoder, cfg: SlamConfig,
                 state: Optional[SlamState] = None, pipelined: bool = False) -> Tuple[SlamState, List[FrameReport]]:
    """
    Fold process_frame over a sequence.

    With `pipelined` the encoder chain runs on a worker thread ahead of the
    pose-cell and map updates. Latents only depend on earlier latents, so the
    reports are identical to a sequential run.
    """
    if not frames:
        raise ValidationError("run_sequence needs at least one frame")
    validate_sequence(frames)
    state = state or SlamState.initial(cfg, encoder.latent_dim)
    reports: List[FrameReport] = []

    if not pipelined:
        for frame in frames:
            state, report = process_frame(state, frame, encoder, cfg)
            reports.append(report)
        return state, reports

    latents: "queue.Queue" = queue.Queue(maxsize=32)
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="encode") as executor:
        future = executor.submit(_encode_ahead, encoder, frames, state.prev_latent, latents)
        try:
            for frame in frames:
                t, latent = latents.get()
                if isinstance(latent, Exception):
                    raise FrameProcessingError(t, str(latent)) from latent
                state, report = process_frame(state, frame, encoder, cfg, latent=latent)
                reports.append(report)
        except BaseException:
            # unblock the producer so the executor can shut down
            while not future.done():
                try:
                    latents.get(timeout=0.05)
                except queue.Empty:
                    pass
            raise
    return state, reports


def finish_run(state: SlamState, iterations: int = 10) -> List[float]:
    """
    Solve the whole experience graph once the run is over.

    Online corrections only see the links up to each closure; a final
    least-squares pass lets every link measurement pull on every pose.
    Returns the residual history.
    """
    history = state.map.optimize_in_place(iterations)
    logger.info(f"Final optimization: residual {history[0]:.4g} -> {history[-1]:.4g} in {len(history) - 1} iterations")
    return history


def summarize(state: SlamState, reports: Sequence[FrameReport]) -> Dict:
    latencies = [r.latency_ms for r in reports]
    return {
        "frames": len(reports),
        "nodes": len(state.map.experiences),
        "links": len(state.map.links),
        "loop_closures": sum(1 for r in reports if r.event is EventKind.LOOP_CLOSURE),
        "view_cells": len(state.store),
        "mean_latency_ms": float(np.mean(latencies)) if latencies else 0.0,
    }


# ---------------------------
# Report stream
# ---------------------------

def write_reports(reports: Sequence[FrameReport], path: str) -> None:
    with atomic_write(path) as fh:
        for report in reports:
            fh.write(json.dumps(report.to_dict()) + "\n")


def read_reports(path: str) -> List[FrameReport]:
    reports = []
    try:
        with open(path, "r") as fh:
            lines = fh.readlines()
    except FileNotFoundError as e:
        raise InputError(f"{path}: reports file not found", missing=True) from e
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            reports.append(FrameReport.from_dict(json.loads(line)))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"{path}:{number}: malformed frame report ({e})") from e
    return reports
