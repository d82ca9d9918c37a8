"""
Data models for the spike camera simulator and calibration toolkit

Arrays are stored frames-first: luminance (T, H, W), spikes (N, H, W),
optical flow (T, H, W, 2) with channel 0 = vx and channel 1 = vy.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Any, Tuple

import numpy as np

from config import SpikeCamConfig, ResetMode, StreamOrigin


def _require(condition: bool, invariant: str, value: Any = None):
    if not condition:
        detail = f" (got {value})" if value is not None else ""
        raise ValueError(f"invariant violated: {invariant}{detail}")


@dataclass
class SensorConfig:
    """Geometry, timing and circuit constants of a spike camera

    Args:
        height: Pixel rows H
        width: Pixel columns W
        dt: Readout interval in microseconds
        C: Pixel capacitance in farads
        V_D: Reset voltage in volts
        V_ref: Reference voltage in volts
        mu_ph: Expected photons per pixel per readout at unit luminance
        reset_mode: Subtract the threshold after a spike, or reset to zero
        shot_noise: Whether photon shot noise is sampled during simulation
    """
    height: int = SpikeCamConfig.HEIGHT
    width: int = SpikeCamConfig.WIDTH
    dt: float = SpikeCamConfig.DT_US
    C: float = SpikeCamConfig.CAPACITANCE
    V_D: float = SpikeCamConfig.V_RESET
    V_ref: float = SpikeCamConfig.V_REF
    mu_ph: float = SpikeCamConfig.PHOTONS_PER_UNIT
    reset_mode: ResetMode = ResetMode.SUBTRACT
    shot_noise: bool = True

    def __post_init__(self):
        _require(self.height >= 1, "height >= 1", self.height)
        _require(self.width >= 1, "width >= 1", self.width)
        _require(self.dt > 0, "dt > 0", self.dt)
        _require(self.C > 0, "C > 0", self.C)
        _require(self.V_D > self.V_ref, "V_D > V_ref", f"V_D={self.V_D}, V_ref={self.V_ref}")
        _require(self.mu_ph > 0, "mu_ph > 0", self.mu_ph)

    @property
    def V_d(self) -> float:
        return self.V_D - self.V_ref

    @property
    def phi(self) -> float:
        """Ideal threshold C * (V_D - V_ref)"""
        return self.C * self.V_d

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


@dataclass
class NoiseParams:
    """Aggregate noise statistics driving the noisy simulator

    Args:
        sigma_C_S: Std of capacitance mismatch (farads)
        sigma_V_S: Std of bias voltage (volts)
        mu_dark: Mean dark current (accumulation units per readout)
        sigma_dark_S: Std of dark current
        mu_alpha: Mean photoelectric conversion rate (accumulation per luminance per readout)
        sigma_alpha_S: Std of conversion rate
        sigma_T0: Std of thermal voltage fluctuation (volts)
    """
    sigma_C_S: float
    sigma_V_S: float
    mu_dark: float
    sigma_dark_S: float
    mu_alpha: float
    sigma_alpha_S: float
    sigma_T0: float

    def __post_init__(self):
        for name in ("sigma_C_S", "sigma_V_S", "sigma_dark_S", "sigma_alpha_S", "sigma_T0"):
            value = getattr(self, name)
            _require(value >= 0, f"{name} >= 0", value)
        _require(self.mu_alpha > 0, "mu_alpha > 0", self.mu_alpha)
        _require(self.mu_dark >= 0, "mu_dark >= 0", self.mu_dark)


@dataclass
class SpatialNoiseMaps:
    """Frozen per-pixel fixed-pattern state

    Args:
        c_s: Capacitance deviation per pixel (farads)
        v_s: Bias voltage per pixel (volts)
        alpha: Conversion rate per pixel
        i_dark: Dark current per pixel (accumulation units per readout)
        seed: Seed the maps were drawn from (None for estimated maps)
    """
    c_s: np.ndarray
    v_s: np.ndarray
    alpha: np.ndarray
    i_dark: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        shapes = {m.shape for m in (self.c_s, self.v_s, self.alpha, self.i_dark)}
        _require(len(shapes) == 1, "all four maps share one shape", shapes)
        _require(self.c_s.ndim == 2, "maps are 2-D", self.c_s.ndim)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.c_s.shape

    def check_against(self, cfg: SensorConfig):
        """Validate the maps for use with a sensor configuration"""
        _require(self.shape == cfg.shape, "maps shape matches sensor", f"{self.shape} vs {cfg.shape}")
        _require(bool(np.all(cfg.C + self.c_s > 0)), "C + c_s > 0 everywhere")
        _require(bool(np.all(cfg.V_d + self.v_s > 0)), "V_d + v_s > 0 everywhere")
        _require(bool(np.all(self.alpha > 0)), "alpha > 0 everywhere")
        _require(bool(np.all(self.i_dark >= 0)), "i_dark >= 0 everywhere")


@dataclass
class LuminanceSequence:
    """Ideal luminance frames, optionally with optical-flow labels

    Args:
        frames: (T, H, W) nonnegative luminance
        dt: Microseconds per frame
        flow: Optional (T, H, W, 2) flow label in pixels per frame
    """
    frames: np.ndarray
    dt: float
    flow: Optional[np.ndarray] = None

    def __post_init__(self):
        _require(self.frames.ndim == 3, "frames are (T, H, W)", self.frames.shape)
        _require(self.dt > 0, "dt > 0", self.dt)
        _require(not bool(np.isnan(self.frames).any()), "luminance is not NaN")
        _require(bool(np.all(self.frames >= 0)), "luminance >= 0")
        if self.flow is not None:
            _require(self.flow.shape == self.frames.shape + (2,), "flow is (T, H, W, 2)", self.flow.shape)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames.shape[1:]


@dataclass
class SpikeStream:
    """Binary readout frames

    Args:
        frames: (N, H, W) boolean spike frames
        dt: Microseconds per frame
        origin: Where the stream came from
        metadata: Additional run information (seed, floor hits, ...)
    """
    frames: np.ndarray
    dt: float
    origin: StreamOrigin = StreamOrigin.CAPTURED
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _require(self.frames.ndim == 3, "frames are (N, H, W)", self.frames.shape)
        if self.frames.dtype != np.bool_:
            _require(bool(np.isin(self.frames, (0, 1)).all()), "spike values in {0, 1}")
            self.frames = self.frames.astype(bool)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames.shape[1:]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpikeStream):
            return NotImplemented
        return (self.frames.shape == other.frames.shape
                and bool(np.array_equal(self.frames, other.frames))
                and self.dt == other.dt
                and self.origin == other.origin)


@dataclass
class CalibrationScene:
    """A static grayscale scene and the stream recorded over it

    Args:
        gray: Monitor grayscale level
        L_monitor: Monitor luminance at gray = 1
        stream: Spike stream captured or simulated over the scene
        level: Raw protocol index k, when the scene belongs to a ladder
    """
    gray: float
    L_monitor: float
    stream: SpikeStream
    level: Optional[int] = None

    @property
    def mu_k(self) -> float:
        return self.gray * self.L_monitor

    @property
    def n_frames(self) -> int:
        return self.stream.n_frames


@dataclass
class PixelCalibration:
    """Per-pixel calibration result

    slope_a and intercept_b are in spikes per scene duration:
    a = alpha * n / phi_eff, b = I_dark * n / phi_eff.
    """
    slope_a: Optional[float]
    intercept_b: Optional[float]
    alpha_hat: Optional[float] = None
    i_dark_hat: Optional[float] = None
    c_s_hat: Optional[float] = None
    v_s_hat: Optional[float] = None
    residual: float = 0.0
    dead: bool = False
    iterations: int = 0
    objective_history: List[float] = field(default_factory=list)


@dataclass
class ISIHistogram:
    """Pooled inter-spike-interval histogram

    Args:
        bins: ISI in frames -> count
        n_intervals: Total pooled intervals
        pixels_contributing: Pixels with at least two spikes
    """
    bins: Dict[int, int]
    n_intervals: int
    pixels_contributing: int

    @property
    def is_empty(self) -> bool:
        return self.n_intervals == 0

    def probabilities(self) -> Dict[int, float]:
        if self.is_empty:
            return {}
        return {isi: count / self.n_intervals for isi, count in self.bins.items()}


@dataclass
class CalibrationReport:
    """Outcome of a sensor calibration

    Args:
        estimates: Aggregated NoiseParams, None when no pixel was usable
        n_pixels: Pixels calibrated
        dead_pixels: (row, col) of pixels without any spike
        alpha_global: Conversion rate fixed by the decomposition convention
        slope_median: Median per-pixel slope
        intercept_median: Median per-pixel intercept
        residual_quantiles: Quantiles of the per-pixel objective
        noise_floors: Quantization floor of each sigma estimate
        below_noise_floor: Whether each sigma estimate sits under its floor
        dark_quantization_step: One spike count expressed as dark current
        scene_levels: (level, gray, mu_k, weight_mean) per scene
        warnings: Human readable warnings
    """
    estimates: Optional[NoiseParams]
    n_pixels: int
    dead_pixels: List[Tuple[int, int]]
    alpha_global: Optional[float]
    slope_median: Optional[float]
    intercept_median: Optional[float]
    residual_quantiles: Dict[str, float]
    noise_floors: Dict[str, float]
    below_noise_floor: Dict[str, bool]
    dark_quantization_step: float
    scene_levels: List[Tuple[Optional[int], float, float, float]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def to_text(self) -> str:
        """Render the report as structured plain text"""
        text = "# spike camera calibration report\n\n"
        text += "[estimates]\n"
        if self.estimates is None:
            text += "status = null\n"
        else:
            for name, value in vars(self.estimates).items():
                text += f"{name} = {value:.6e}\n"
            text += "# sigma_T0 is not estimated by this protocol\n"
        text += f"alpha_global = {_fmt(self.alpha_global)}\n"
        text += f"slope_median = {_fmt(self.slope_median)}\n"
        text += f"intercept_median = {_fmt(self.intercept_median)}\n"
        text += f"dark_quantization_step = {self.dark_quantization_step:.6e}\n\n"

        text += "[noise_floor]\n"
        for name, floor in self.noise_floors.items():
            flag = "below" if self.below_noise_floor.get(name) else "above"
            text += f"{name} = {floor:.6e} # estimate {flag} floor\n"
        text += "\n[residuals]\n"
        for name, value in self.residual_quantiles.items():
            text += f"{name} = {value:.6e}\n"

        text += "\n[scenes]\n"
        for level, gray, mu_k, weight in self.scene_levels:
            level_text = "-" if level is None else str(level)
            text += f"{level_text},{gray:.6g},{mu_k:.6g},{weight:.4f}\n"

        text += f"\n[dead_pixels]\ncount = {len(self.dead_pixels)}\n"
        for row, col in self.dead_pixels:
            text += f"{row},{col}\n"

        if self.warnings:
            text += "\n[warnings]\n"
            for warning in self.warnings:
                text += f"{warning}\n"
        return text


def _fmt(value: Optional[float]) -> str:
    return "null" if value is None else f"{value:.6e}"


@dataclass
class ProtocolResult:
    """Ground truth and estimates of a simulated calibration protocol

    Args:
        noise_true: Statistics the maps were drawn from
        maps_true: Fixed-pattern state used for every scene
        slope_true: (H, W) expected count slope alpha * n / phi_eff
        intercept_true: (H, W) expected count intercept I_dark * n / phi_eff
        slope_hat: (H, W) fitted slope
        intercept_hat: (H, W) fitted intercept
        estimates: Aggregated estimate, None when calibration had no usable pixel
        maps_hat: Estimated maps
        report: Calibration report
    """
    noise_true: NoiseParams
    maps_true: SpatialNoiseMaps
    slope_true: np.ndarray
    intercept_true: np.ndarray
    slope_hat: np.ndarray
    intercept_hat: np.ndarray
    estimates: Optional[NoiseParams]
    maps_hat: Optional[SpatialNoiseMaps]
    report: CalibrationReport

    def slope_error(self) -> float:
        """Median relative slope error over pixels"""
        return float(np.nanmedian(np.abs(self.slope_hat - self.slope_true) / self.slope_true))

    def intercept_error(self) -> float:
        """Median relative intercept error over pixels with a nonzero true intercept"""
        mask = self.intercept_true > 0
        return float(np.nanmedian(np.abs(self.intercept_hat[mask] - self.intercept_true[mask])
                                  / self.intercept_true[mask]))


@dataclass
class ModelComparison:
    """Spike statistics of several noise models over a grayscale sweep

    Args:
        grays: Grayscale levels simulated
        spikes_per_sampling: Variant name -> mean spikes per readout per gray
        histograms: Variant name -> pooled ISI histogram per gray
        tv_distance: "a|b" variant pair -> TV distance per gray (None when a histogram is empty)
        iqr: Variant name -> ISI interquartile range per gray
    """
    grays: List[float]
    spikes_per_sampling: Dict[str, List[float]]
    histograms: Dict[str, List[ISIHistogram]]
    tv_distance: Dict[str, List[Optional[float]]]
    iqr: Dict[str, List[float]]

    def to_text(self) -> str:
        """Render the comparison as key = value sections"""
        text = "[spikes_per_sampling]\n"
        for name, values in self.spikes_per_sampling.items():
            text += f"{name} = {', '.join(f'{v:.6f}' for v in values)}\n"
        text += "\n[isi_iqr]\n"
        for name, values in self.iqr.items():
            text += f"{name} = {', '.join(f'{v:g}' for v in values)}\n"
        text += "\n[tv_distance]\n"
        for pair, values in self.tv_distance.items():
            text += f"{pair} = {', '.join(_fmt(v) for v in values)}\n"
        text += f"\n# grays = {', '.join(f'{g:.6g}' for g in self.grays)}\n"
        return text
