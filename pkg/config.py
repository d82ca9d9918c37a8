"""
Configuration for the spike camera simulator and calibration toolkit

Centralized defaults, enumerations and environment overrides. Values can be
overridden from a .env file or the process environment.
"""

import os
from enum import Enum, IntEnum

from dotenv import load_dotenv

load_dotenv()


class ResetMode(Enum):
    """How a pixel's accumulator is reset after firing"""
    SUBTRACT = "subtract"
    ZERO = "zero"


class StreamOrigin(Enum):
    """Where a spike stream came from"""
    SIMULATED_IDEAL = "simulated-ideal"
    SIMULATED_NOISY = "simulated-noisy"
    CAPTURED = "captured"

    @property
    def code(self) -> int:
        """u8 code used in the spike file header"""
        return _ORIGIN_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "StreamOrigin":
        for origin, value in _ORIGIN_CODES.items():
            if value == code:
                return origin
        raise ValueError(f"Unknown stream origin code: {code}")


_ORIGIN_CODES = {
    StreamOrigin.SIMULATED_IDEAL: 0,
    StreamOrigin.SIMULATED_NOISY: 1,
    StreamOrigin.CAPTURED: 2,
}


class SimulationMode(Enum):
    IDEAL = "ideal"
    NOISY = "noisy"


class DecompositionSplit(Enum):
    """Which circuit quantity absorbs a pixel's threshold deviation"""
    CAPACITANCE = "capacitance"
    VOLTAGE = "voltage"


class ModelVariant(Enum):
    """Noise models compared against each other"""
    NOISE_FREE = "noise-free"
    DARK_SHOT = "dark-shot"  # dark current and shot noise only
    FULL = "full"


class NoisePreset(Enum):
    """Named noise parameter sets"""
    DEFAULT = "default"
    CONVERSION_MISMATCH = "conversion-mismatch"  # gain nonuniformity, no threshold mismatch


class NoiseChannel(IntEnum):
    """Counter word identifying an independent random substream"""
    THERMAL = 1
    SHOT = 2
    CAPACITANCE = 10
    VOLTAGE = 11
    ALPHA = 12
    DARK = 13
    TEXTURE = 20
    BOOTSTRAP = 30


class SpikeCamConfig:
    """Central configuration for the toolkit"""

    # Sensor geometry and timing
    HEIGHT = 250
    WIDTH = 400
    DT_US = 25.0

    # Pixel circuit
    CAPACITANCE = 1e-14      # farads
    V_RESET = 3.0            # V_D, volts
    V_REF = 2.0              # volts
    PHOTONS_PER_UNIT = 100.0  # mu_ph
    TEMPERATURE_K = 300.0

    # Threshold handling
    THRESHOLD_FLOOR = 1e-3   # fraction of nominal C and V_d
    FIRE_RTOL = 1e-9
    RNG_BLOCK_FRAMES = 32    # fixed; changing it changes every noisy stream

    # Default noise statistics, relative to the nominal circuit
    ALPHA_PER_THRESHOLD = 0.25   # mu_alpha as a fraction of phi
    DARK_PER_THRESHOLD = 0.002   # mu_dark as a fraction of phi
    SIGMA_DARK_RELATIVE = 0.1
    SIGMA_C_RELATIVE = 0.02
    SIGMA_V_RELATIVE = 0.02
    SIGMA_ALPHA_RELATIVE = 0.02

    # Photon-starved sensor whose only fixed pattern beyond dark current is the
    # conversion rate; relative to phi and the nominal circuit like the defaults
    CONVERSION_MISMATCH_PRESET = {
        "alpha_per_threshold": 0.002,
        "dark_per_threshold": 0.005,
        "sigma_alpha_relative": 0.3,
        "photons_per_unit": 1.0,
    }

    # Calibration solver
    CALIBRATION_CONFIG = {
        "irls_epsilon": 1e-9,
        "objective_rtol": 1e-8,
        "max_iterations": 500,
        "min_count": 200,
        "min_weight": 0.05,
        "chunk_pixels": 4096,
    }
    L_MONITOR = 1.0
    CALIBRATION_LEVELS = 25
    CALIBRATION_GRAY_STEP = 0.1

    # Analysis
    TFP_WINDOW = 32
    BOOTSTRAP_SAMPLES = 200

    # Runtime
    WORKERS = int(os.getenv("SPIKECAM_WORKERS", "1"))
    LOG_FILE = os.getenv("SPIKECAM_LOG_FILE", "spikecam.log")
    LOG_LEVEL = os.getenv("SPIKECAM_LOG_LEVEL", "INFO")
    CACHE_DB = os.getenv("SPIKECAM_CACHE_DB", "spikecam_cache.db")
