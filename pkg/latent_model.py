"""
latent_model.py - Recurrent state-space model used to turn camera frames into
latent codes.

Three networks share one torch module:
    prior       p(s_t | s_{t-1}, a_{t-1})          MLP on [state, action]
    posterior   q(s_t | s_{t-1}, a_{t-1}, o_t)     conv features + MLP
    likelihood  p(o_t | s_t)                       mirrored deconv decoder

Training minimizes the free energy, sum over time of KL(posterior || prior)
plus the negative unit-variance Gaussian log-likelihood of the frame. At run
time only the posterior mean is used (`encode`).
"""

import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from domain import (
    Action,
    CheckpointError,
    FrameRecord,
    Observation,
    TrainingDivergedError,
    ValidationError,
    atomic_write,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ["epoch", "free_energy", "kl_term", "recon_term"]
_ACTIVATIONS = {"relu": nn.ReLU, "elu": nn.ELU}
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


# ---------------------------
# Configuration
# ---------------------------

@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 32
    obs_shape: Tuple[int, int, int] = (64, 64, 3)     # H, W, C
    action_dim: int = 4
    conv_channels: Tuple[int, ...] = (32, 64, 128, 256)
    hidden_dim: int = 256
    min_stddev: float = 1e-4
    activation: str = "relu"
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "obs_shape", tuple(int(v) for v in self.obs_shape))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        if self.latent_dim < 1 or self.action_dim < 0 or self.hidden_dim < 1:
            raise ValidationError("latent_dim and hidden_dim must be >= 1, action_dim >= 0")
        if len(self.obs_shape) != 3 or min(self.obs_shape) < 1:
            raise ValidationError(f"obs_shape must be (H, W, C), got {self.obs_shape}")
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ValidationError("conv_channels needs at least one positive entry")
        scale = 2 ** len(self.conv_channels)
        if self.obs_shape[0] % scale or self.obs_shape[1] % scale:
            raise ValidationError(
                f"observation {self.obs_shape[0]}x{self.obs_shape[1]} not divisible by {scale} "
                f"({len(self.conv_channels)} stride-2 layers)"
            )
        if self.min_stddev <= 0:
            raise ValidationError("min_stddev must be > 0")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if self.dtype not in _DTYPES:
            raise ValidationError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    @property
    def feature_hw(self) -> Tuple[int, int]:
        scale = 2 ** len(self.conv_channels)
        return self.obs_shape[0] // scale, self.obs_shape[1] // scale

    @property
    def feature_dim(self) -> int:
        h, w = self.feature_hw
        return self.conv_channels[-1] * h * w

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["obs_shape"] = list(self.obs_shape)
        data["conv_channels"] = list(self.conv_channels)
        return data


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-4
    batch_size: int = 16
    sequence_length: int = 16
    kl_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.batch_size < 1 or self.sequence_length < 1:
            raise ValidationError("batch_size and sequence_length must be >= 1")
        if self.kl_weight < 0:
            raise ValidationError("kl_weight must be >= 0")


# ---------------------------
# Value types
# ---------------------------

@dataclass(frozen=True, eq=False)
class GaussianLatent:
    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        stddev = np.array(self.stddev, dtype=np.float64).reshape(-1)
        if mean.shape != stddev.shape:
            raise ValidationError(f"mean and stddev dimensions differ: {mean.shape} vs {stddev.shape}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(stddev)):
            raise ValidationError("Gaussian parameters must be finite")
        if np.any(stddev <= 0):
            raise ValidationError("stddev entries must be > 0")
        mean.flags.writeable = False
        stddev.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stddev", stddev)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


@dataclass(frozen=True, eq=False)
class LatentSample:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValidationError("latent sample must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, dim: int) -> "LatentSample":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other):
        return isinstance(other, LatentSample) and np.array_equal(self.values, other.values)


def kl_gaussian(q: GaussianLatent, p: GaussianLatent) -> float:
    """Closed-form KL(q || p) between diagonal Gaussians."""
    if q.dim != p.dim:
        raise ValidationError(f"dimension mismatch: {q.dim} vs {p.dim}")
    per_dim = (
        np.log(p.stddev / q.stddev)
        + (q.stddev ** 2 + (q.mean - p.mean) ** 2) / (2.0 * p.stddev ** 2)
        - 0.5
    )
    total = float(np.sum(per_dim))
    # >= 0 analytically; only rounding noise on the sum is clipped
    if -1e-12 <= total < 0.0:
        return 0.0
    return total


def reconstruction_loss(obs: Observation, recon: Observation) -> float:
    """0.5 * sum of squared pixel errors (unit-variance Gaussian, constants dropped)."""
    if obs.shape != recon.shape:
        raise ValidationError(f"shape mismatch: {obs.shape} vs {recon.shape}")
    return float(0.5 * np.sum((obs.pixels - recon.pixels) ** 2))


def _kl_torch(mq, sq, mp, sp):
    return (torch.log(sp / sq) + (sq ** 2 + (mq - mp) ** 2) / (2.0 * sp ** 2) - 0.5).sum(dim=-1)


# ---------------------------
# Model
# ---------------------------

class LatentModel(nn.Module):
    """
    Prior, posterior and likelihood networks.

    Use `LatentModel.initialize(config, seed)` for reproducible weights.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        act = _ACTIVATIONS[config.activation]
        h, w, c = config.obs_shape
        D, A, H = config.latent_dim, config.action_dim, config.hidden_dim

        layers: List[nn.Module] = []
        in_ch = c
        for out_ch in config.conv_channels:
            layers += [nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1), act()]
            in_ch = out_ch
        self.encoder = nn.Sequential(*layers)

        self.posterior_net = nn.Sequential(
            nn.Linear(config.feature_dim + D + A, H), act(),
            nn.Linear(H, H), act(),
        )
        self.posterior_mean = nn.Linear(H, D)
        self.posterior_std = nn.Linear(H, D)

        self.prior_net = nn.Sequential(
            nn.Linear(D + A, H), act(),
            nn.Linear(H, H), act(),
        )
        self.prior_mean = nn.Linear(H, D)
        self.prior_std = nn.Linear(H, D)

        self.decoder_fc = nn.Linear(D, config.feature_dim)
        layers = []
        channels = list(config.conv_channels)
        for i in range(len(channels) - 1, -1, -1):
            out_ch = channels[i - 1] if i > 0 else c
            layers.append(nn.ConvTranspose2d(channels[i], out_ch, kernel_size=4, stride=2, padding=1))
            if i > 0:
                layers.append(act())
        self.decoder = nn.Sequential(*layers)
        self._act = act()

        self.to(config.torch_dtype)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "LatentModel":
        """Fan-in scaled uniform init (torch defaults) under a fixed seed."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(seed))
            model = cls(config)
        model.eval()
        return model

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # ---------------------------
    # torch forward pieces
    # ---------------------------

    def _features(self, obs: torch.Tensor) -> torch.Tensor:
        """(N, H, W, C) -> (N, feature_dim)"""
        x = obs.permute(0, 3, 1, 2)
        return self.encoder(x).flatten(start_dim=1)

    def _posterior(self, features, prev, action):
        hidden = self.posterior_net(torch.cat([features, prev, action], dim=-1))
        return self.posterior_mean(hidden), F.softplus(self.posterior_std(hidden)) + self.config.min_stddev

    def _prior(self, prev, action):
        hidden = self.prior_net(torch.cat([prev, action], dim=-1))
        return self.prior_mean(hidden), F.softplus(self.prior_std(hidden)) + self.config.min_stddev

    def _decode(self, state: torch.Tensor) -> torch.Tensor:
        """(N, D) -> (N, H, W, C) in [0, 1]"""
        h, w = self.config.feature_hw
        x = self._act(self.decoder_fc(state)).reshape(-1, self.config.conv_channels[-1], h, w)
        return torch.sigmoid(self.decoder(x)).permute(0, 2, 3, 1)

    def _tensor(self, values) -> torch.Tensor:
        return torch.as_tensor(np.asarray(values), dtype=self.config.torch_dtype)

    # ---------------------------
    # Validation
    # ---------------------------

    def _check_latent(self, sample: LatentSample) -> None:
        if sample.dim != self.config.latent_dim:
            raise ValidationError(f"latent dimension {sample.dim} != {self.config.latent_dim}")

    def _check_action(self, action: Action) -> None:
        if action.dim != self.config.action_dim:
            raise ValidationError(f"action dimension {action.dim} != {self.config.action_dim}")

    def _check_obs(self, obs: Observation) -> None:
        if tuple(obs.shape) != self.config.obs_shape:
            raise ValidationError(f"observation shape {tuple(obs.shape)} != {self.config.obs_shape}")

    # ---------------------------
    # Public numpy-facing operations
    # ---------------------------

    @torch.inference_mode()
    def prior_predict(self, prev: LatentSample, action: Action) -> GaussianLatent:
        self._check_latent(prev)
        self._check_action(action)
        mean, std = self._prior(self._tensor(prev.values)[None], self._tensor(action.controls)[None])
        return GaussianLatent(mean[0].double().numpy(), std[0].double().numpy())

    @torch.inference_mode()
    def posterior_infer(self, prev: LatentSample, action: Action, obs: Observation) -> GaussianLatent:
        self._check_latent(prev)
        self._check_action(action)
        self._check_obs(obs)
        features = self._features(self._tensor(obs.pixels)[None])
        mean, std = self._posterior(features, self._tensor(prev.values)[None], self._tensor(action.controls)[None])
        return GaussianLatent(mean[0].double().numpy(), std[0].double().numpy())

    @torch.inference_mode()
    def likelihood_reconstruct(self, sample: LatentSample) -> Observation:
        self._check_latent(sample)
        image = self._decode(self._tensor(sample.values)[None])[0]
        return Observation(image.double().numpy())

    def encode(self, prev: LatentSample, action: Action, obs: Observation) -> LatentSample:
        """Posterior mean; the latent code used as a view template."""
        return LatentSample(self.posterior_infer(prev, action, obs).mean)

    # ---------------------------
    # Free energy
    # ---------------------------

    def _batch_tensors(self, batch: Sequence[Sequence[FrameRecord]]):
        if not batch:
            raise ValidationError("free energy needs a non-empty batch")
        groups: Dict[int, List[int]] = {}
        for idx, seq in enumerate(batch):
            if not seq:
                raise ValidationError(f"sequence {idx} of the batch is empty")
            for frame in seq:
                self._check_obs(frame.observation)
                self._check_action(frame.action)
            groups.setdefault(len(seq), []).append(idx)
        return groups

    def free_energy_terms(self, batch: Sequence[Sequence[FrameRecord]], seed: int,
                          kl_weight: float = 1.0) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Differentiable (loss, kl, recon), each a mean over the batch of the
        per-sequence sum over time.

        One noise draw of shape (T, D) from a generator seeded with `seed` is
        shared by every sequence, so duplicating sequences leaves the mean
        (and its gradient) unchanged. kl_weight = 0 skips the prior entirely.
        """
        groups = self._batch_tensors(batch)
        cfg = self.config
        max_len = max(groups)
        generator = torch.Generator().manual_seed(int(seed) % (2 ** 63))
        noise = torch.randn((max_len, cfg.latent_dim), generator=generator, dtype=torch.float64)
        noise = noise.to(cfg.torch_dtype)

        kl_total = torch.zeros((), dtype=cfg.torch_dtype)
        recon_total = torch.zeros((), dtype=cfg.torch_dtype)
        for length, indices in sorted(groups.items()):
            obs = self._tensor(np.stack([[f.observation.pixels for f in batch[i]] for i in indices]))
            actions = self._tensor(np.stack([[f.action.controls for f in batch[i]] for i in indices]))
            n = len(indices)
            features = self._features(obs.reshape(n * length, *cfg.obs_shape)).reshape(n, length, -1)

            state = torch.zeros((n, cfg.latent_dim), dtype=cfg.torch_dtype)
            states = []
            for t in range(length):
                mean_q, std_q = self._posterior(features[:, t], state, actions[:, t])
                if kl_weight > 0:
                    mean_p, std_p = self._prior(state, actions[:, t])
                    kl_total = kl_total + _kl_torch(mean_q, std_q, mean_p, std_p).sum()
                state = mean_q + std_q * noise[t]
                states.append(state)

            recon = self._decode(torch.stack(states, dim=1).reshape(n * length, cfg.latent_dim))
            recon_total = recon_total + 0.5 * ((obs.reshape(n * length, *cfg.obs_shape) - recon) ** 2).sum()

        count = float(len(batch))
        kl_mean = kl_total / count
        recon_mean = recon_total / count
        return kl_weight * kl_mean + recon_mean, kl_mean, recon_mean

    def free_energy(self, batch: Sequence[Sequence[FrameRecord]], seed: int, kl_weight: float = 1.0) -> float:
        with torch.no_grad():
            loss, _, _ = self.free_energy_terms(batch, seed, kl_weight)
        return float(loss)

    def grad_free_energy(self, batch: Sequence[Sequence[FrameRecord]], seed: int,
                         kl_weight: float = 1.0) -> Dict[str, np.ndarray]:
        """Reverse-mode gradient of free_energy, keyed like state_dict; unused parameters get zeros."""
        names, params = zip(*self.named_parameters())
        loss, _, _ = self.free_energy_terms(batch, seed, kl_weight)
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        return {
            name: (np.zeros(p.shape) if g is None else g.detach().double().numpy())
            for name, p, g in zip(names, params, grads)
        }

    # ---------------------------
    # Parameter access
    # ---------------------------

    def get_params(self) -> Dict[str, np.ndarray]:
        return {name: p.detach().double().numpy().copy() for name, p in self.named_parameters()}

    def set_params(self, values: Dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name in values:
                    array = np.asarray(values[name])
                    if array.shape != tuple(p.shape):
                        raise ValidationError(f"{name}: shape {array.shape} != {tuple(p.shape)}")
                    p.copy_(torch.as_tensor(array, dtype=p.dtype))


def encode_sequence(encoder, frames: Sequence[FrameRecord]) -> List[LatentSample]:
    """Chain `encoder.encode` over a sequence starting from the zero state."""
    prev = LatentSample.zero(encoder.latent_dim)
    out = []
    for frame in frames:
        prev = encoder.encode(prev, frame.action, frame.observation)
        out.append(prev)
    return out


# ---------------------------
# Training
# ---------------------------

def make_windows(sequences: Sequence[Sequence[FrameRecord]], length: int) -> List[Sequence[FrameRecord]]:
    """Cut sequences into non-overlapping windows; shorter sequences are kept whole."""
    windows = []
    for seq in sequences:
        if len(seq) == 0:
            continue
        if len(seq) <= length:
            windows.append(seq)
            continue
        for start in range(0, len(seq) - length + 1, length):
            windows.append(seq[start:start + length])
    return windows


def _batch_seed(seed: int, epoch: int, batch: int) -> int:
    state = np.random.SeedSequence([seed, epoch, batch]).generate_state(2)
    return (int(state[0]) << 31) | (int(state[1]) >> 1)


@dataclass
class TrainingResult:
    history: pd.DataFrame
    epoch: int                                  # epochs completed in total
    optimizer: Optional[torch.optim.Adam] = field(default=None, repr=False)

    @property
    def final_loss(self) -> Optional[float]:
        if self.history.empty:
            return None
        return float(self.history["free_energy"].iloc[-1])


def train(model: LatentModel, sequences: Sequence[Sequence[FrameRecord]], config: TrainConfig,
          start_epoch: int = 0, optimizer_state: Optional[Dict] = None) -> TrainingResult:
    """
    Minimize the free energy with Adam (betas 0.9/0.999, eps 1e-8).

    Epoch e shuffles windows with a generator seeded by (seed, e) and batch b
    draws its noise from (seed, e, b), so a run resumed at `start_epoch` with
    the stored optimizer state continues exactly like an uninterrupted one.

    Returns:
        TrainingResult with one history row per epoch run in this call
    """
    windows = make_windows(sequences, config.sequence_length)
    if not windows:
        raise ValidationError("training needs at least one non-empty sequence")
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    log_every = max(1, config.epochs // 10)
    rows = []
    model.train()
    try:
        for epoch in range(start_epoch, config.epochs):
            order = np.random.default_rng([config.seed, epoch]).permutation(len(windows))
            sums = np.zeros(3)
            for b, start in enumerate(range(0, len(order), config.batch_size)):
                batch = [windows[i] for i in order[start:start + config.batch_size]]
                optimizer.zero_grad()
                loss, kl, recon = model.free_energy_terms(batch, _batch_seed(config.seed, epoch, b), config.kl_weight)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(epoch + 1, f"free energy {float(loss)} in batch {b}")
                loss.backward()
                optimizer.step()
                sums += len(batch) * np.array([float(loss), float(kl), float(recon)])
            row = (epoch + 1, *(sums / len(windows)))
            rows.append(row)
            if (epoch + 1) % log_every == 0 or epoch + 1 == config.epochs:
                logger.info(f"Epoch {row[0]}/{config.epochs}: free energy {row[1]:.4f} "
                            f"(kl {row[2]:.4f}, recon {row[3]:.4f})")
    finally:
        model.eval()

    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS).astype({"epoch": int})
    return TrainingResult(history=history, epoch=max(start_epoch, config.epochs), optimizer=optimizer)


# ---------------------------
# Checkpoints
# ---------------------------

@dataclass
class Checkpoint:
    model: LatentModel
    train_config: Optional[TrainConfig]
    epoch: int
    final_loss: Optional[float]
    optimizer_state: Optional[Dict] = field(default=None, repr=False)


def save_checkpoint(path: str, model: LatentModel, train_config: Optional[TrainConfig] = None,
                    epoch: int = 0, final_loss: Optional[float] = None,
                    optimizer: Optional[torch.optim.Adam] = None) -> None:
    """
    Write an .npz with a JSON `__meta__` entry and one array per parameter.

    Adam moments are stored as `adam.<i>.exp_avg` / `adam.<i>.exp_avg_sq`
    (i indexes parameters in state_dict order) with step counts in the meta.
    """
    state = model.state_dict()
    arrays = {name: tensor.detach().cpu().numpy() for name, tensor in state.items()}
    steps = []
    if optimizer is not None:
        opt_state = optimizer.state_dict()["state"]
        for i in range(len(list(model.parameters()))):
            entry = opt_state.get(i)
            if entry is None:
                steps.append(None)
                continue
            arrays[f"adam.{i}.exp_avg"] = entry["exp_avg"].detach().cpu().numpy()
            arrays[f"adam.{i}.exp_avg_sq"] = entry["exp_avg_sq"].detach().cpu().numpy()
            steps.append(float(entry["step"]))
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": asdict(train_config) if train_config is not None else None,
        "epoch": int(epoch),
        "final_loss": final_loss,
        "param_order": list(state.keys()),
        "adam_steps": steps if optimizer is not None else None,
    }
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with atomic_write(path, "wb") as fh:
        np.savez(fh, **arrays)
    logger.debug(f"Checkpoint written to {path} (epoch {epoch})")


def load_checkpoint(path: str, expected: Optional[ModelConfig] = None) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as archive:
            contents = {key: archive[key] for key in archive.files}
    except FileNotFoundError as e:
        raise CheckpointError(f"{path}: checkpoint not found", missing=True) from e
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e

    try:
        meta = json.loads(contents.pop("__meta__").item())
    except KeyError as e:
        raise CheckpointError(f"{path}: missing __meta__ entry") from e
    except ValueError as e:
        raise CheckpointError(f"{path}: malformed __meta__ entry ({e})") from e
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")

    try:
        config = ModelConfig(**meta["model_config"])
        train_config = TrainConfig(**meta["train_config"]) if meta.get("train_config") else None
    except (TypeError, ValidationError) as e:
        raise CheckpointError(f"{path}: invalid configuration in checkpoint ({e})") from e
    if expected is not None and (config.obs_shape, config.action_dim) != (expected.obs_shape, expected.action_dim):
        raise CheckpointError(
            f"{path}: checkpoint expects observations {config.obs_shape} and {config.action_dim}-d actions, "
            f"data has {expected.obs_shape} and {expected.action_dim}-d actions"
        )

    model = LatentModel(config)
    state = model.state_dict()
    if meta.get("param_order") != list(state.keys()):
        raise CheckpointError(f"{path}: parameter layout does not match the configured architecture")
    loaded = {}
    for name, tensor in state.items():
        if name not in contents:
            raise CheckpointError(f"{path}: missing array {name}")
        if contents[name].shape != tuple(tensor.shape):
            raise CheckpointError(f"{path}: {name} has shape {contents[name].shape}, expected {tuple(tensor.shape)}")
        loaded[name] = torch.as_tensor(contents[name], dtype=tensor.dtype)
    model.load_state_dict(loaded)
    model.eval()

    optimizer_state = None
    steps = meta.get("adam_steps")
    if steps is not None:
        optimizer_state = {"state": {}, "param_groups": None}
        for i, step in enumerate(steps):
            if step is None:
                continue
            try:
                optimizer_state["state"][i] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": torch.as_tensor(contents[f"adam.{i}.exp_avg"]),
                    "exp_avg_sq": torch.as_tensor(contents[f"adam.{i}.exp_avg_sq"]),
                }
            except KeyError as e:
                raise CheckpointError(f"{path}: missing optimizer moment {e}") from e

    return Checkpoint(model, train_config, int(meta.get("epoch", 0)), meta.get("final_loss"), optimizer_state)


def resume_optimizer_state(checkpoint: Checkpoint, learning_rate: float) -> Optional[Dict]:
    """Complete a stored Adam state with param groups matching a fresh optimizer."""
    if checkpoint.optimizer_state is None:
        return None
    fresh = torch.optim.Adam(checkpoint.model.parameters(), lr=learning_rate, betas=(0.9, 0.999), eps=1e-8)
    groups = fresh.state_dict()["param_groups"]
    return {"state": checkpoint.optimizer_state["state"], "param_groups": groups}
