"""
config.py - RunConfig, the flat view of every tunable.

Values are layered, lowest precedence first:
    1. dataclass defaults below
    2. a flat KEY=value config file (parsed with python-dotenv)
    3. LATENTSLAM_<KEY> environment variables (a .env file is loaded by main)
    4. command-line flags, one --flag per key

Config file keys are the field names; unknown keys are rejected.
"""

import argparse
import logging
import math
import os
from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from domain import ValidationError
from experience_map import ExperienceMapConfig
from latent_model import ModelConfig, TrainConfig
from pose_cells import CANConfig
from sim_dataset import DatasetSpec, OdometryNoiseSpec, WarehouseSpec
from slam_pipeline import SlamConfig
from view_cells import ViewCellConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "LATENTSLAM_"


def _opt(default, help_text: str, group: str):
    return field(default=default, metadata={"help": help_text, "group": group})


@dataclass(frozen=True)
class RunConfig:
    # general
    seed: int = _opt(0, "global random seed", "general")
    log_level: str = _opt("INFO", "logging level (DEBUG, INFO, WARNING, ERROR)", "general")

    # warehouse
    num_aisles: int = _opt(3, "number of parallel aisles", "warehouse")
    aisle_length: float = _opt(10.0, "aisle length in meters", "warehouse")
    aisle_spacing: float = _opt(3.0, "distance between aisle centre lines in meters", "warehouse")
    aliasing_level: float = _opt(0.9, "cross-aisle visual similarity in [0, 1]", "warehouse")
    texture_seed: int = _opt(0, "seed of the rack textures and aisle cues", "warehouse")

    # dataset
    num_sequences: int = _opt(7, "sequences generated by simulate", "dataset")
    loops_per_sequence: int = _opt(2, "laps through the aisles per sequence", "dataset")
    frames_per_meter: float = _opt(10.0, "frames per meter of travel", "dataset")
    image_height: int = _opt(64, "observation height in pixels", "dataset")
    image_width: int = _opt(64, "observation width in pixels", "dataset")
    image_channels: int = _opt(3, "observation channels (1, 3 or 4)", "dataset")
    action_dim: int = _opt(4, "action vector dimension", "dataset")
    waypoint_jitter: float = _opt(0.15, "std of waypoint perturbation in meters", "dataset")
    max_turn: float = _opt(0.3, "largest heading change per frame in radians", "dataset")

    # odometry noise
    odom_std_xy: float = _opt(0.05, "odometry noise std per frame in meters", "odometry")
    odom_std_theta: float = _opt(0.01, "odometry noise std per frame in radians", "odometry")
    reset_probability: float = _opt(0.005, "per-frame probability of an odometry reset", "odometry")

    # latent model
    latent_dim: int = _opt(32, "latent state dimension", "model")
    conv_channels: str = _opt("32,64,128,256", "comma-separated encoder channels", "model")
    hidden_dim: int = _opt(256, "hidden units of the MLP heads", "model")
    min_stddev: float = _opt(1e-4, "floor added to softplus stddev", "model")
    activation: str = _opt("relu", "hidden activation (relu or elu)", "model")
    dtype: str = _opt("float32", "model dtype (float32 or float64)", "model")

    # training
    epochs: int = _opt(500, "training epochs", "training")
    learning_rate: float = _opt(1e-4, "Adam learning rate", "training")
    batch_size: int = _opt(16, "windows per batch", "training")
    sequence_length: int = _opt(16, "frames per training window", "training")
    kl_weight: float = _opt(1.0, "weight of the KL term in the free energy", "training")

    # pose cells
    grid_x: int = _opt(40, "pose-cell grid size along x", "pose_cells")
    grid_y: int = _opt(40, "pose-cell grid size along y", "pose_cells")
    grid_theta: int = _opt(36, "pose-cell grid size along theta", "pose_cells")
    cell_size_xy: float = _opt(0.5, "meters per pose cell", "pose_cells")
    excite_sigma_xy: float = _opt(1.0, "excitation width in cells (x, y)", "pose_cells")
    excite_sigma_theta: float = _opt(1.0, "excitation width in cells (theta)", "pose_cells")
    inhibit_amount: float = _opt(1e-3, "global inhibition per iteration", "pose_cells")
    injection_energy: float = _opt(0.5, "energy a matched view cell injects", "pose_cells")
    can_iterations: int = _opt(1, "attractor iterations per frame", "pose_cells")

    # view cells
    match_threshold: float = _opt(0.10, "cosine distance below which a view cell matches", "view_cells")

    # experience map
    pose_match_radius: float = _opt(4.0, "pose-cell agreement radius in cells", "experience_map")
    relax_alpha: float = _opt(0.25, "relaxation step size in (0, 0.5]", "experience_map")
    relax_iterations: int = _opt(20, "relaxation iterations per loop closure", "experience_map")
    relax_on_closure: bool = _opt(True, "relax the map after each loop closure", "experience_map")
    pose_gate: bool = _opt(True, "require pose-cell agreement for loop closures", "experience_map")
    relax_method: str = _opt("jacobi", "loop-closure correction: jacobi or least_squares", "experience_map")
    link_history: int = _opt(9, "traversals kept per link, the link uses their median", "experience_map")
    final_optimize: bool = _opt(True, "solve the whole pose graph once the run ends", "experience_map")

    # evaluation
    revisit_radius: float = _opt(1.0, "ground-truth distance for same place (meters)", "evaluation")
    heading_tolerance: float = _opt(math.pi / 4, "ground-truth heading tolerance for revisits", "evaluation")
    min_frame_gap: int = _opt(50, "frames between a node and the older node it revisits", "evaluation")
    place_radius: float = _opt(0.5, "same-place radius for latent separation (meters)", "evaluation")

    # ---------------------------
    # Module configs
    # ---------------------------

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.image_height, self.image_width, self.image_channels)

    def warehouse_spec(self) -> WarehouseSpec:
        return WarehouseSpec(self.num_aisles, self.aisle_length, self.aisle_spacing,
                             self.aliasing_level, self.texture_seed)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            warehouse=self.warehouse_spec(),
            noise=OdometryNoiseSpec(self.odom_std_xy, self.odom_std_theta, self.reset_probability),
            num_sequences=self.num_sequences,
            loops_per_sequence=self.loops_per_sequence,
            frames_per_meter=self.frames_per_meter,
            image_shape=self.image_shape,
            action_dim=self.action_dim,
            waypoint_jitter=self.waypoint_jitter,
            max_turn=self.max_turn,
            seed=self.seed,
        )

    def model_config(self) -> ModelConfig:
        try:
            channels = tuple(int(c) for c in self.conv_channels.split(",") if c.strip())
        except ValueError as e:
            raise ValidationError(f"conv_channels must be comma-separated integers, got {self.conv_channels!r}") from e
        return ModelConfig(
            latent_dim=self.latent_dim,
            obs_shape=self.image_shape,
            action_dim=self.action_dim,
            conv_channels=channels,
            hidden_dim=self.hidden_dim,
            min_stddev=self.min_stddev,
            activation=self.activation,
            dtype=self.dtype,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.learning_rate, self.batch_size, self.sequence_length,
                           self.kl_weight, self.seed)

    def can_config(self) -> CANConfig:
        return CANConfig(self.grid_x, self.grid_y, self.grid_theta, self.cell_size_xy,
                         self.excite_sigma_xy, self.excite_sigma_theta, self.inhibit_amount,
                         self.injection_energy)

    def slam_config(self, checkpoint_path: Optional[str] = None) -> SlamConfig:
        can = self.can_config()
        return SlamConfig(
            can=can,
            view=ViewCellConfig(self.match_threshold),
            map=ExperienceMapConfig(self.pose_match_radius, self.relax_alpha, self.relax_iterations,
                                    self.relax_on_closure, self.pose_gate, can.shape, self.relax_method,
                                    self.link_history),
            can_iterations=self.can_iterations,
            checkpoint_path=checkpoint_path,
        )

    def validate(self) -> "RunConfig":
        """Build every module config once so bad values fail before any work starts."""
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValidationError(f"unknown log level {self.log_level!r}")
        self.dataset_spec()
        self.model_config()
        self.train_config()
        self.slam_config()
        if self.revisit_radius <= 0 or self.place_radius <= 0 or self.min_frame_gap < 0:
            raise ValidationError("evaluation radii must be > 0 and min_frame_gap >= 0")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------------------------
# Parsing and layering
# ---------------------------

def _parse_bool(value: str) -> bool:
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


_CONVERTERS: Dict[Any, Callable[[str], Any]] = {int: int, float: float, str: str, bool: _parse_bool}


def _fields() -> Dict[str, Any]:
    return {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw: Any, source: str) -> Any:
    spec = _fields()[name]
    if not isinstance(raw, str):
        return raw
    try:
        return _CONVERTERS[spec.type](raw)
    except ValueError as e:
        raise ValidationError(f"{source}: bad value for {name}: {e}") from e


def read_config_file(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    known = _fields()
    values = {}
    for key, raw in dotenv_values(path).items():
        name = key.strip().lower()
        if name not in known:
            raise ValidationError(f"{path}: unknown config key {key!r}")
        if raw is None:
            raise ValidationError(f"{path}: key {key!r} has no value")
        values[name] = _convert(name, raw, path)
    return values


def read_environment(environ: Mapping[str, str]) -> Dict[str, Any]:
    values = {}
    for name in _fields():
        env_key = ENV_PREFIX + name.upper()
        if env_key in environ:
            values[name] = _convert(name, environ[env_key], env_key)
    return values


def load_run_config(config_file: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                    environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Layer file, environment and explicit overrides over the defaults and validate."""
    values: Dict[str, Any] = {}
    if config_file:
        values.update(read_config_file(config_file))
        logger.debug(f"Loaded configuration from {config_file}")
    values.update(read_environment(os.environ if environ is None else environ))
    for name, value in (overrides or {}).items():
        if name not in _fields():
            raise ValidationError(f"unknown config key {name!r}")
        if value is not None:
            values[name] = _convert(name, value, "command line")
    return RunConfig(**values).validate()


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """One --flag per RunConfig field; flags default to None so unset ones never override."""
    groups: Dict[str, argparse._ArgumentGroup] = {}
    for f in fields(RunConfig):
        group_name = f.metadata.get("group", "general")
        group = groups.get(group_name)
        if group is None:
            group = groups[group_name] = parser.add_argument_group(f"{group_name} options")
        default = f.default if f.default is not MISSING else None
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(
            flag,
            dest=f.name,
            type=_CONVERTERS[f.type],
            default=None,
            metavar=f.type.__name__.upper(),
            help=f"{f.metadata.get('help', '')} (default: {default})",
        )


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    return {name: getattr(args, name, None) for name in _fields()}
