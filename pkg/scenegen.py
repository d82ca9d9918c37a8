"""
Procedural scene generation

Uniform grayscale scenes for the calibration protocol and translating textures
with exact optical-flow labels.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from config import SpikeCamConfig, NoiseChannel
from models import SensorConfig, LuminanceSequence
from rng import substream


def calibration_gray_levels(n_levels: int = SpikeCamConfig.CALIBRATION_LEVELS,
                            step: float = SpikeCamConfig.CALIBRATION_GRAY_STEP) -> List[Tuple[int, float]]:
    """Protocol ladder of (k, gray) pairs with gray = step * k"""
    return [(k, round(step * k, 12)) for k in range(n_levels)]


def uniform_scene(gray: float, L_monitor: float, n_frames: int, cfg: SensorConfig) -> LuminanceSequence:
    """Static scene of constant luminance gray * L_monitor

    The frames are a read-only broadcast of a single value, so long static
    recordings cost no memory.
    """
    if gray < 0:
        raise ValueError(f"gray must be nonnegative, got {gray}")
    if L_monitor <= 0:
        raise ValueError(f"L_monitor must be positive, got {L_monitor}")
    if n_frames < 1:
        raise ValueError(f"n_frames must be at least 1, got {n_frames}")

    shape = (n_frames,) + cfg.shape
    frames = np.broadcast_to(np.float64(gray * L_monitor), shape)
    flow = np.broadcast_to(np.float64(0.0), shape + (2,))
    return LuminanceSequence(frames=frames, dt=cfg.dt, flow=flow)


def two_region_scene(low: float, high: float, n_frames: int, cfg: SensorConfig) -> LuminanceSequence:
    """Static scene with luminance `low` on the left half and `high` on the right"""
    image = np.full(cfg.shape, float(low))
    image[:, cfg.width // 2:] = high
    frames = np.broadcast_to(image, (n_frames,) + cfg.shape)
    return LuminanceSequence(frames=frames, dt=cfg.dt,
                             flow=np.broadcast_to(np.float64(0.0), (n_frames,) + cfg.shape + (2,)))


def random_texture(seed: int, cfg: SensorConfig, contrast: Tuple[float, float] = (0.2, 1.0),
                   smoothness: float = 4.0) -> np.ndarray:
    """Band-limited random luminance field

    White noise is low-pass filtered with a periodic Gaussian kernel (so the
    texture tiles seamlessly under wrap translation) and rescaled to span the
    contrast range.

    Args:
        seed: Texture seed
        cfg: Sensor configuration providing H and W
        contrast: (low, high) luminance range
        smoothness: Gaussian filter sigma in pixels

    Returns:
        (H, W) luminance image
    """
    low, high = contrast
    if low < 0 or high < low:
        raise ValueError(f"contrast must satisfy 0 <= low <= high, got {contrast}")
    if high == low:
        return np.full(cfg.shape, float(low))

    noise = substream(seed, NoiseChannel.TEXTURE).standard_normal(cfg.shape)
    field = ndimage.gaussian_filter(noise, sigma=smoothness, mode="wrap")
    span = field.max() - field.min()
    if span == 0:
        return np.full(cfg.shape, float(low))
    unit = (field - field.min()) / span
    return np.clip(low + unit * (high - low), low, high)


def _shift_image(image: np.ndarray, dy: float, dx: float, wrap: bool) -> np.ndarray:
    """Bilinear translation; whole-pixel shifts with wrap are exact rolls"""
    if dx == 0 and dy == 0:
        return image.copy()
    if wrap and float(dx).is_integer() and float(dy).is_integer():
        return np.roll(image, (int(dy), int(dx)), axis=(0, 1))
    mode = "grid-wrap" if wrap else "nearest"
    return ndimage.shift(image, (dy, dx), order=1, mode=mode, prefilter=False)


def translating_scene(texture: np.ndarray, velocity: Tuple[float, float], n_frames: int,
                      wrap: bool = True, dt: float = SpikeCamConfig.DT_US) -> LuminanceSequence:
    """Texture translated by a constant velocity, with its flow label

    Frame t is the texture shifted by (t*vx, t*vy) with bilinear sampling.
    With wrap the label is exact everywhere; with clamp the pixels whose next
    frame samples outside the texture are marked NaN in the label.

    Args:
        texture: (H, W) nonnegative image
        velocity: (vx, vy) in pixels per frame
        n_frames: Number of frames
        wrap: Periodic borders (True) or clamped borders (False)
        dt: Microseconds per frame

    Returns:
        LuminanceSequence with a (T, H, W, 2) flow label
    """
    vx, vy = velocity
    if not (math.isfinite(vx) and math.isfinite(vy)):
        raise ValueError(f"velocity must be finite, got {velocity}")
    if np.any(texture < 0):
        raise ValueError("texture must be nonnegative")

    texture = np.asarray(texture, dtype=np.float64)
    height, width = texture.shape

    frames = np.empty((n_frames, height, width))
    for t in range(n_frames):
        frames[t] = _shift_image(texture, t * vy, t * vx, wrap)
    np.maximum(frames, 0.0, out=frames)

    flow = np.empty((n_frames, height, width, 2))
    flow[..., 0] = vx
    flow[..., 1] = vy
    if not wrap:
        rows = np.arange(height)[:, None]
        cols = np.arange(width)[None, :]
        for t in range(n_frames):
            src_x = cols - (t + 1) * vx
            src_y = rows - (t + 1) * vy
            invalid = (src_x < 0) | (src_x > width - 1) | (src_y < 0) | (src_y > height - 1)
            flow[t][invalid] = np.nan

    logging.info(f"Translating scene: {n_frames} frames at ({vx}, {vy}) px/frame, wrap={wrap}")
    return LuminanceSequence(frames=frames, dt=dt, flow=flow)


def warp_by_flow(frame: np.ndarray, flow: np.ndarray, wrap: bool = True) -> np.ndarray:
    """Advance a frame by a constant flow label (used to check label exactness)"""
    vx = float(np.nanmean(flow[..., 0])) if np.isfinite(flow[..., 0]).any() else 0.0
    vy = float(np.nanmean(flow[..., 1])) if np.isfinite(flow[..., 1]).any() else 0.0
    return _shift_image(frame, vy, vx, wrap)


def scene_for_sensor(seed: int, cfg: SensorConfig, velocity: Tuple[float, float], n_frames: int,
                     contrast: Optional[Tuple[float, float]] = None, wrap: bool = True) -> LuminanceSequence:
    """Random texture translated across the sensor"""
    texture = random_texture(seed, cfg, contrast or (0.2, 1.0))
    return translating_scene(texture, velocity, n_frames, wrap=wrap, dt=cfg.dt)
