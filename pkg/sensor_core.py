"""
Spike camera forward model

This module samples the fixed-pattern and temporal noise of a spike camera
pixel array and integrates luminance sequences into binary spike streams.
Both the ideal and the noisy simulator run the same row-tile kernel; the ideal
path simply feeds it noise-free state.
"""

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Tuple, Union

import numpy as np
from scipy.constants import k as BOLTZMANN

from config import (SpikeCamConfig, ResetMode, StreamOrigin, SimulationMode, ModelVariant, NoiseChannel,
                    NoisePreset)
from models import SensorConfig, NoiseParams, SpatialNoiseMaps, LuminanceSequence, SpikeStream
from rng import substream


class ShapeError(ValueError):
    """Inputs with inconsistent dimensions"""


def thermal_sigma(T0: float, C: float) -> float:
    """Std of the reset-transistor thermal voltage, sqrt(k*T0/C)

    Args:
        T0: Absolute temperature in kelvin
        C: Capacitance in farads

    Returns:
        Standard deviation in volts
    """
    if C <= 0:
        raise ValueError(f"capacitance must be positive, got {C}")
    if T0 < 0:
        raise ValueError(f"temperature must be nonnegative, got {T0}")
    return math.sqrt(BOLTZMANN * T0 / C)


def default_noise_params(cfg: SensorConfig) -> NoiseParams:
    """Default noise statistics for a sensor configuration"""
    mu_dark = SpikeCamConfig.DARK_PER_THRESHOLD * cfg.phi
    mu_alpha = SpikeCamConfig.ALPHA_PER_THRESHOLD * cfg.phi
    return NoiseParams(
        sigma_C_S=SpikeCamConfig.SIGMA_C_RELATIVE * cfg.C,
        sigma_V_S=SpikeCamConfig.SIGMA_V_RELATIVE * cfg.V_d,
        mu_dark=mu_dark,
        sigma_dark_S=SpikeCamConfig.SIGMA_DARK_RELATIVE * mu_dark,
        mu_alpha=mu_alpha,
        sigma_alpha_S=SpikeCamConfig.SIGMA_ALPHA_RELATIVE * mu_alpha,
        sigma_T0=thermal_sigma(SpikeCamConfig.TEMPERATURE_K, cfg.C),
    )


def preset_params(cfg: SensorConfig, preset: NoisePreset) -> Tuple[SensorConfig, NoiseParams]:
    """Sensor and noise settings of a named preset, keeping cfg's geometry and circuit

    CONVERSION_MISMATCH keeps dark current and shot noise and adds only
    conversion-rate nonuniformity, which is invisible at zero luminance and
    grows with it. Threshold mismatch and thermal noise are off.
    """
    if preset == NoisePreset.DEFAULT:
        return cfg, default_noise_params(cfg)
    values = SpikeCamConfig.CONVERSION_MISMATCH_PRESET
    mu_alpha = values["alpha_per_threshold"] * cfg.phi
    noise = NoiseParams(sigma_C_S=0.0, sigma_V_S=0.0,
                        mu_dark=values["dark_per_threshold"] * cfg.phi, sigma_dark_S=0.0,
                        mu_alpha=mu_alpha, sigma_alpha_S=values["sigma_alpha_relative"] * mu_alpha,
                        sigma_T0=0.0)
    return dataclasses.replace(cfg, mu_ph=values["photons_per_unit"]), noise


def variant_params(noise: NoiseParams, variant: ModelVariant) -> NoiseParams:
    """Noise statistics kept by a model variant

    NOISE_FREE drops every noise source, DARK_SHOT keeps dark current only
    (shot noise is a sensor switch), FULL keeps everything.
    """
    if variant == ModelVariant.FULL:
        return noise
    if variant == ModelVariant.DARK_SHOT:
        return dataclasses.replace(noise, sigma_C_S=0.0, sigma_V_S=0.0,
                                   sigma_alpha_S=0.0, sigma_T0=0.0)
    return NoiseParams(sigma_C_S=0.0, sigma_V_S=0.0, mu_dark=0.0, sigma_dark_S=0.0,
                       mu_alpha=noise.mu_alpha, sigma_alpha_S=0.0, sigma_T0=0.0)


def configure_variant(cfg: SensorConfig, noise: NoiseParams,
                      variant: ModelVariant) -> Tuple[SensorConfig, NoiseParams]:
    """Derive the sensor and noise settings of a model variant"""
    shot = variant != ModelVariant.NOISE_FREE
    return dataclasses.replace(cfg, shot_noise=shot), variant_params(noise, variant)


def sample_spatial_maps(cfg: SensorConfig, noise: NoiseParams, seed: int) -> SpatialNoiseMaps:
    """Draw the fixed-pattern state of every pixel

    Each map is drawn i.i.d. from its own substream and clamped so that
    thresholds and conversion rates stay positive and dark current nonnegative.
    """
    shape = cfg.shape
    floor = SpikeCamConfig.THRESHOLD_FLOOR

    c_s = substream(seed, NoiseChannel.CAPACITANCE).normal(0.0, noise.sigma_C_S, shape)
    v_s = substream(seed, NoiseChannel.VOLTAGE).normal(0.0, noise.sigma_V_S, shape)
    alpha = substream(seed, NoiseChannel.ALPHA).normal(noise.mu_alpha, noise.sigma_alpha_S, shape)
    i_dark = substream(seed, NoiseChannel.DARK).normal(noise.mu_dark, noise.sigma_dark_S, shape)

    clamped = {
        "c_s": int(np.count_nonzero(c_s < -(1 - floor) * cfg.C)),
        "v_s": int(np.count_nonzero(v_s < -(1 - floor) * cfg.V_d)),
        "alpha": int(np.count_nonzero(alpha < floor * noise.mu_alpha)),
        "i_dark": int(np.count_nonzero(i_dark < 0)),
    }
    c_s = np.maximum(c_s, -(1 - floor) * cfg.C)
    v_s = np.maximum(v_s, -(1 - floor) * cfg.V_d)
    alpha = np.maximum(alpha, floor * noise.mu_alpha)
    i_dark = np.maximum(i_dark, 0.0)

    for name, count in clamped.items():
        if count:
            logging.warning(f"Clamped {count} draws of {name} to keep the circuit physical")

    return SpatialNoiseMaps(c_s=c_s, v_s=v_s, alpha=alpha, i_dark=i_dark, seed=seed)


def sample_luminance(mu_L: Union[float, np.ndarray], mu_ph: float,
                     rng: np.random.Generator) -> Union[float, np.ndarray]:
    """Sample shot-noisy luminance around its expectation

    The photon count is Poisson with mean mu_ph * mu_L, and L = ph / mu_ph,
    so E[L] = mu_L and Var[L] = mu_L / mu_ph.
    """
    if mu_ph <= 0:
        raise ValueError(f"mu_ph must be positive, got {mu_ph}")
    photons = rng.poisson(np.multiply(mu_ph, mu_L))
    return photons / mu_ph


def _row_tiles(height: int, workers: int):
    bounds = np.linspace(0, height, min(workers, height) + 1).astype(int)
    return [(int(r0), int(r1)) for r0, r1 in zip(bounds[:-1], bounds[1:]) if r1 > r0]


def _draw_rows(seed: int, channel: NoiseChannel, block: int, r0: int, r1: int, draw) -> np.ndarray:
    # one substream per row keeps draws independent of the tiling
    return np.stack([draw(substream(seed, channel, block, row), row - r0) for row in range(r0, r1)], axis=1)


def _integrate_tile(r0: int, r1: int, frames: np.ndarray, cfg: SensorConfig,
                    alpha, i_dark, c_eff, v_s, sigma_T0: float, shot: bool,
                    seed: int, out: np.ndarray) -> int:
    """Run the accumulate / check / fire / reset loop over rows r0:r1

    Returns:
        Number of threshold evaluations clamped at the voltage floor
    """
    n_frames = frames.shape[0]
    width = frames.shape[2]
    block_len = SpikeCamConfig.RNG_BLOCK_FRAMES
    v_floor = SpikeCamConfig.THRESHOLD_FLOOR * cfg.V_d
    fire_scale = 1.0 - SpikeCamConfig.FIRE_RTOL
    subtract = cfg.reset_mode == ResetMode.SUBTRACT

    alpha = _rows(alpha, r0, r1)
    i_dark = _rows(i_dark, r0, r1)
    c_eff = _rows(c_eff, r0, r1)
    v_s = _rows(v_s, r0, r1)
    v_static = cfg.V_d + v_s

    A = np.zeros((r1 - r0, width))
    floor_hits = 0

    for b0 in range(0, n_frames, block_len):
        block = b0 // block_len
        b1 = min(b0 + block_len, n_frames)
        mu_block = frames[b0:b1, r0:r1]

        if shot:
            lum_block = _draw_rows(seed, NoiseChannel.SHOT, block, r0, r1,
                                   lambda g, i: sample_luminance(mu_block[:, i], cfg.mu_ph, g))
        else:
            lum_block = mu_block
        if sigma_T0 > 0:
            thermal_block = _draw_rows(seed, NoiseChannel.THERMAL, block, r0, r1,
                                       lambda g, i: g.normal(0.0, sigma_T0, (b1 - b0, width)))

        for t in range(b1 - b0):
            A += alpha * lum_block[t] + i_dark
            if sigma_T0 > 0:
                v_eff = (cfg.V_d + thermal_block[t]) + v_s
            else:
                v_eff = v_static
            low = v_eff < v_floor
            if np.any(low):
                floor_hits += int(np.count_nonzero(low))
                v_eff = np.maximum(v_eff, v_floor)
            threshold = c_eff * v_eff
            fired = A >= threshold * fire_scale
            out[b0 + t, r0:r1] = fired
            if subtract:
                A -= np.where(fired, threshold, 0.0)
                np.maximum(A, 0.0, out=A)
            else:
                A[fired] = 0.0
    return floor_hits


def _rows(value, r0: int, r1: int):
    if isinstance(value, np.ndarray) and value.ndim == 2:
        return value[r0:r1]
    return value


def _run_kernel(lum: LuminanceSequence, cfg: SensorConfig, alpha, i_dark, c_eff, v_s,
                sigma_T0: float, shot: bool, seed: int, workers: Optional[int]) -> Tuple[np.ndarray, int]:
    workers = workers or SpikeCamConfig.WORKERS
    out = np.zeros(lum.frames.shape, dtype=bool)
    tiles = _row_tiles(cfg.height, workers)

    if len(tiles) == 1:
        hits = [_integrate_tile(0, cfg.height, lum.frames, cfg, alpha, i_dark, c_eff, v_s,
                                sigma_T0, shot, seed, out)]
    else:
        with ThreadPoolExecutor(max_workers=len(tiles)) as executor:
            futures = [executor.submit(_integrate_tile, r0, r1, lum.frames, cfg, alpha, i_dark,
                                       c_eff, v_s, sigma_T0, shot, seed, out)
                       for r0, r1 in tiles]
            hits = [future.result() for future in futures]
    return out, sum(hits)


def _check_sequence(lum: LuminanceSequence, cfg: SensorConfig):
    if lum.shape != cfg.shape:
        raise ShapeError(f"luminance frames are {lum.shape}, sensor is {cfg.shape}")
    if not math.isclose(lum.dt, cfg.dt, rel_tol=1e-6):
        raise ShapeError(f"luminance dt {lum.dt} us does not match sensor dt {cfg.dt} us")


def simulate_ideal(lum: LuminanceSequence, cfg: SensorConfig, alpha: float = 1.0,
                   workers: Optional[int] = None) -> SpikeStream:
    """Noise-free integrate-and-fire simulation

    Args:
        lum: Ideal luminance sequence
        cfg: Sensor configuration
        alpha: Nominal conversion rate (accumulation per luminance per readout)
        workers: Row tiles processed concurrently

    Returns:
        SpikeStream with origin SIMULATED_IDEAL
    """
    _check_sequence(lum, cfg)
    frames, _ = _run_kernel(lum, cfg, alpha, 0.0, cfg.C, 0.0, 0.0, False, 0, workers)
    logging.info(f"Ideal simulation: {lum.n_frames} frames, {int(frames.sum())} spikes")
    return SpikeStream(frames=frames, dt=cfg.dt, origin=StreamOrigin.SIMULATED_IDEAL,
                       metadata={"alpha": alpha, "reset_mode": cfg.reset_mode.value})


def simulate_noisy(lum: LuminanceSequence, cfg: SensorConfig, noise: NoiseParams,
                   maps: SpatialNoiseMaps, seed: int, workers: Optional[int] = None) -> SpikeStream:
    """Simulate the spike camera with temporal and fixed-pattern noise

    Per frame the kernel samples V^T0 and the shot-noisy luminance, adds
    alpha * L + I_dark to the accumulator and fires against
    (C + C^S)(V_d + V^T0 + V^S), subtracting the threshold that was crossed.
    The result is a pure function of the inputs and the seed.

    Args:
        lum: Ideal luminance sequence
        cfg: Sensor configuration (shot_noise switches photon noise)
        noise: Aggregate noise statistics (sigma_T0 is used here)
        maps: Fixed-pattern state, as drawn by sample_spatial_maps
        seed: Seed of the temporal substreams
        workers: Row tiles processed concurrently

    Returns:
        SpikeStream with origin SIMULATED_NOISY
    """
    _check_sequence(lum, cfg)
    if maps.shape != cfg.shape:
        raise ShapeError(f"noise maps are {maps.shape}, sensor is {cfg.shape}")
    maps.check_against(cfg)

    c_eff = np.maximum(cfg.C + maps.c_s, SpikeCamConfig.THRESHOLD_FLOOR * cfg.C)
    frames, floor_hits = _run_kernel(lum, cfg, maps.alpha, maps.i_dark, c_eff, maps.v_s,
                                     noise.sigma_T0, cfg.shot_noise, seed, workers)
    if floor_hits:
        logging.warning(f"Threshold voltage clamped at the floor {floor_hits} times")
    logging.info(f"Noisy simulation: {lum.n_frames} frames, {int(frames.sum())} spikes (seed {seed})")
    return SpikeStream(frames=frames, dt=cfg.dt, origin=StreamOrigin.SIMULATED_NOISY,
                       metadata={"seed": seed, "maps_seed": maps.seed,
                                 "threshold_floor_hits": floor_hits,
                                 "shot_noise": cfg.shot_noise,
                                 "reset_mode": cfg.reset_mode.value})


def simulate(lum: LuminanceSequence, cfg: SensorConfig, noise: NoiseParams,
             maps: Optional[SpatialNoiseMaps], seed: int, mode: SimulationMode,
             workers: Optional[int] = None) -> SpikeStream:
    """Dispatch to the ideal or noisy simulator"""
    if mode == SimulationMode.IDEAL:
        return simulate_ideal(lum, cfg, alpha=noise.mu_alpha, workers=workers)
    if maps is None:
        maps = sample_spatial_maps(cfg, noise, seed)
    return simulate_noisy(lum, cfg, noise, maps, seed, workers=workers)
