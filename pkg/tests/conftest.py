import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from config import ResetMode  # noqa: E402
from models import SensorConfig, NoiseParams, LuminanceSequence  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end check")


@pytest.fixture
def small_cfg():
    return SensorConfig(height=8, width=8, shot_noise=False)


def silent_noise(cfg: SensorConfig, mu_alpha: float = None, **overrides) -> NoiseParams:
    """NoiseParams with every noise source off"""
    values = dict(sigma_C_S=0.0, sigma_V_S=0.0, mu_dark=0.0, sigma_dark_S=0.0,
                  mu_alpha=mu_alpha if mu_alpha is not None else cfg.phi, sigma_alpha_S=0.0, sigma_T0=0.0)
    values.update(overrides)
    return NoiseParams(**values)


def constant_sequence(cfg: SensorConfig, value: float, n_frames: int) -> LuminanceSequence:
    return LuminanceSequence(frames=np.full((n_frames,) + cfg.shape, float(value)), dt=cfg.dt)


@pytest.fixture
def zero_reset_cfg():
    return SensorConfig(height=4, width=4, shot_noise=False, reset_mode=ResetMode.ZERO)
