import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from domain import Action, FrameRecord, Observation, OdometryDelta, Pose2D  # noqa: E402
from latent_model import LatentSample  # noqa: E402


class StubEncoder:
    """Fixed random projection of the centred pixels; ignores history and action."""

    def __init__(self, obs_shape, latent_dim=16, seed=0):
        self.latent_dim = latent_dim
        size = int(np.prod(obs_shape))
        self.weights = np.random.default_rng(seed).standard_normal((latent_dim, size)) / np.sqrt(size)
        self.calls = 0

    def encode(self, prev, action, obs):
        self.calls += 1
        return LatentSample(self.weights @ (obs.pixels.ravel() - 0.5))


def make_frame(t, pixels, odometry=(0.0, 0.0, 0.0), action_dim=4, ground_truth=None):
    return FrameRecord(t, Observation(pixels), Action.zero(action_dim), OdometryDelta(*odometry), ground_truth)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def stub_encoder_factory():
    return StubEncoder


@pytest.fixture
def square_poses():
    return [Pose2D(0, 0, 0), Pose2D(1, 0, np.pi / 2), Pose2D(1, 1, np.pi), Pose2D(0, 1, -np.pi / 2)]
