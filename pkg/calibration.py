"""
Noise calibration from static-scene spike streams

Over a static scene the thermal term averages out and every pixel satisfies

    count * (C + C^S)(V_d + V^S) = (alpha * mu_k + I_dark) * n

so the spike counts of one pixel across scenes lie on a line
count = a * mu_k + b with a = alpha * n / phi_eff and b = I_dark * n / phi_eff.
Stage 1 fits that line by least absolute deviations; stage 2 splits (a, b)
into circuit quantities under a documented convention, since only the pair is
identifiable.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from config import SpikeCamConfig, DecompositionSplit
from models import (SensorConfig, NoiseParams, SpatialNoiseMaps, CalibrationScene,
                    PixelCalibration, CalibrationReport)
from stream_io import read_spikes

SOLVER = SpikeCamConfig.CALIBRATION_CONFIG


class CalibrationError(RuntimeError):
    """Calibration could not produce an estimate"""


class UnderdeterminedError(CalibrationError):
    """Fewer than two distinct scene luminances"""


class GeometryMismatchError(CalibrationError):
    """Scenes recorded with different geometry or duration"""


@dataclass
class DecompositionPriors:
    """Convention used to split the identifiable (a, b) pair

    Args:
        alpha_global: Conversion rate shared by every pixel; estimated from the
            mean slope and the nominal threshold when None
        split: Circuit quantity that absorbs a pixel's threshold deviation
    """
    alpha_global: Optional[float] = None
    split: DecompositionSplit = DecompositionSplit.CAPACITANCE


@dataclass
class LineFit:
    """Per-pixel line fits count = a * mu + b"""
    a: np.ndarray
    b: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    history: Optional[List[List[float]]] = None


def snee_lhs(count: float, C: float, c_s: float, V_d: float, v_s: float) -> float:
    """Fired threshold mass count * (C + c_s)(V_d + v_s)"""
    if count < 0:
        raise ValueError(f"spike count must be nonnegative, got {count}")
    threshold = (C + c_s) * (V_d + v_s)
    if C + c_s <= 0 or V_d + v_s <= 0:
        raise ValueError(f"effective threshold factors must be positive: C+c_s={C + c_s}, V_d+v_s={V_d + v_s}")
    return count * threshold


def snee_rhs(mu_k: float, alpha: float, i_dark: float, n_frames: int, dt: Optional[float] = None) -> float:
    """Integrated input (alpha * mu_k + i_dark) * n_frames

    alpha and i_dark are per readout interval, so the integral over n frames is
    a product with n_frames. dt is accepted for callers that carry the readout
    interval and does not enter the result.
    """
    if dt is not None and not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return (alpha * mu_k + i_dark) * n_frames


def scene_weights(mu: np.ndarray, counts: np.ndarray,
                  min_count: float = SOLVER["min_count"],
                  min_weight: float = SOLVER["min_weight"]) -> np.ndarray:
    """Down-weight lit scenes whose counts are too small to average out thermal noise"""
    mu = np.asarray(mu, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    lit = np.broadcast_to(mu > 0, counts.shape)
    weights = np.clip(counts / min_count, min_weight, 1.0)
    return np.where(lit, weights, 1.0)


def _weighted_line(mu: np.ndarray, y: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    s_w = w.sum(axis=1)
    s_x = (w * mu).sum(axis=1)
    s_xx = (w * mu * mu).sum(axis=1)
    s_y = (w * y).sum(axis=1)
    s_xy = (w * mu * y).sum(axis=1)
    det = s_w * s_xx - s_x * s_x
    ok = det > 1e-12 * np.maximum(s_w * s_xx, 1e-300)
    safe = np.where(ok, det, 1.0)
    a = (s_w * s_xy - s_x * s_y) / safe
    b = (s_xx * s_y - s_x * s_xy) / safe
    return a, b, ok


def fit_l2_lines(mu: np.ndarray, counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ordinary least-squares lines, one per row of counts"""
    mu = np.asarray(mu, dtype=np.float64)
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    a, b, _ = _weighted_line(mu, counts, np.ones_like(counts))
    return a, b


def fit_l1_lines(mu: np.ndarray, counts: np.ndarray, weights: Optional[np.ndarray] = None,
                 epsilon: float = SOLVER["irls_epsilon"], rtol: float = SOLVER["objective_rtol"],
                 max_iterations: int = SOLVER["max_iterations"], track_history: bool = False) -> LineFit:
    """Least-absolute-deviation lines by iteratively reweighted least squares

    Minimizes sum_k w_k |count_k - (a * mu_k + b)| for every row of counts.
    Reweighting uses w_k / max(|r_k|, epsilon). A step that would increase a
    pixel's objective is rejected and the pixel stops, so each objective
    history is non-increasing. Pixels also stop when the relative decrease
    drops below rtol.

    Args:
        mu: (K,) scene luminances
        counts: (P, K) spike counts
        weights: (P, K) or (K,) scene weights, ones by default
        epsilon: Residual floor of the reweighting
        rtol: Relative objective decrease that ends iteration
        max_iterations: Iteration cap
        track_history: Keep every pixel's objective sequence

    Returns:
        LineFit
    """
    mu = np.asarray(mu, dtype=np.float64)
    y = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    n_pixels = y.shape[0]
    s = np.ones_like(y) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), y.shape)

    a, b, _ = _weighted_line(mu, y, s)
    objective = (s * np.abs(y - (a[:, None] * mu + b[:, None]))).sum(axis=1)
    iterations = np.zeros(n_pixels, dtype=np.int64)
    history = [[float(v)] for v in objective] if track_history else None
    active = objective > 0

    for _ in range(max_iterations):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        residual = np.abs(y[idx] - (a[idx, None] * mu + b[idx, None]))
        w = s[idx] / np.maximum(residual, epsilon)
        a_new, b_new, ok = _weighted_line(mu, y[idx], w)
        obj_new = (s[idx] * np.abs(y[idx] - (a_new[:, None] * mu + b_new[:, None]))).sum(axis=1)

        accept = ok & (obj_new <= objective[idx])
        decrease = objective[idx] - obj_new
        converged = ~accept | (decrease <= rtol * objective[idx]) | (obj_new == 0)

        take = idx[accept]
        a[take] = a_new[accept]
        b[take] = b_new[accept]
        iterations[idx] += 1
        if track_history:
            for i in take:
                history[i].append(float(obj_new[np.searchsorted(idx, i)]))
        objective[take] = obj_new[accept]
        active[idx[converged]] = False

    return LineFit(a=a, b=b, objective=objective, iterations=iterations, history=history)


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values)
    cumulative = np.cumsum(weights[order])
    return float(values[order][np.searchsorted(cumulative, 0.5 * cumulative[-1])])


def _project_nonnegative(mu: np.ndarray, y: np.ndarray, s: np.ndarray, fit: LineFit):
    """Refit pixels whose slope or intercept came out negative

    b < 0: L1 line through the origin (weighted median of count / mu).
    a < 0: flat line at the weighted median count.
    """
    lit = mu > 0
    for i in np.flatnonzero((fit.b < 0) | (fit.a < 0)):
        if fit.b[i] < 0:
            fit.b[i] = 0.0
            fit.a[i] = max(_weighted_median(y[i, lit] / mu[lit], s[i, lit] * mu[lit]), 0.0)
        if fit.a[i] < 0:
            fit.a[i] = 0.0
            fit.b[i] = max(_weighted_median(y[i], s[i]), 0.0)
        fit.objective[i] = float((s[i] * np.abs(y[i] - (fit.a[i] * mu + fit.b[i]))).sum())


def decompose(a: np.ndarray, b: np.ndarray, n_frames: int, cfg: SensorConfig,
              priors: Optional[DecompositionPriors] = None) -> Dict[str, np.ndarray]:
    """Split identifiable (a, b) into alpha, I_dark, C^S and V^S

    alpha is fixed to one global value, phi_eff = alpha * n / a, the dark
    current follows as b * phi_eff / n, and the deviation of phi_eff from the
    nominal threshold goes entirely to the circuit quantity named by the split.

    Returns:
        Dict with alpha, i_dark, c_s, v_s, phi_eff arrays and alpha_global
    """
    priors = priors or DecompositionPriors()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    responsive = a > 0

    alpha_global = priors.alpha_global
    if alpha_global is None:
        alpha_global = float(a[responsive].mean()) * cfg.phi / n_frames if responsive.any() else 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        phi_eff = np.where(responsive, alpha_global * n_frames / a, np.nan)
    i_dark = b * phi_eff / n_frames
    if priors.split == DecompositionSplit.CAPACITANCE:
        c_s = phi_eff / cfg.V_d - cfg.C
        v_s = np.where(responsive, 0.0, np.nan)
    else:
        v_s = phi_eff / cfg.C - cfg.V_d
        c_s = np.where(responsive, 0.0, np.nan)
    alpha = np.where(responsive, alpha_global, np.nan)
    return {"alpha": alpha, "i_dark": i_dark, "c_s": c_s, "v_s": v_s,
            "phi_eff": phi_eff, "alpha_global": alpha_global}


def calibrate_pixel(counts, mu_levels, n_frames: int, cfg: SensorConfig,
                    priors: Optional[DecompositionPriors] = None) -> PixelCalibration:
    """Calibrate one pixel from its spike counts over static scenes

    Args:
        counts: Spike count per scene
        mu_levels: Ideal luminance mu_k per scene
        n_frames: Frames recorded per scene
        cfg: Sensor configuration (nominal circuit)
        priors: Decomposition convention; without alpha_global the pixel's own
            slope and the nominal threshold fix alpha

    Returns:
        PixelCalibration (dead=True with null estimates when the pixel never fired)
    """
    counts = np.asarray(counts, dtype=np.float64)
    mu = np.asarray(mu_levels, dtype=np.float64)
    if counts.shape != mu.shape:
        raise ValueError(f"{counts.size} counts for {mu.size} scenes")
    if np.unique(mu).size < 2:
        raise UnderdeterminedError(f"need at least 2 distinct scene luminances, got {np.unique(mu).size}")
    if not counts.any():
        logging.warning("Pixel never fired; flagged dead")
        return PixelCalibration(slope_a=None, intercept_b=None, dead=True)

    s = scene_weights(mu, counts)[None, :]
    fit = fit_l1_lines(mu, counts[None, :], s, track_history=True)
    _project_nonnegative(mu, counts[None, :], s, fit)
    parts = decompose(fit.a, fit.b, n_frames, cfg, priors)
    residual = float(np.abs(counts - (fit.a[0] * mu + fit.b[0])).sum())

    def scalar(name: str) -> Optional[float]:
        value = float(parts[name][0])
        return value if math.isfinite(value) else None

    return PixelCalibration(slope_a=float(fit.a[0]), intercept_b=float(fit.b[0]),
                            alpha_hat=scalar("alpha"), i_dark_hat=scalar("i_dark"),
                            c_s_hat=scalar("c_s"), v_s_hat=scalar("v_s"),
                            residual=residual, iterations=int(fit.iterations[0]),
                            objective_history=fit.history[0])


def _check_scenes(scenes: List[CalibrationScene], cfg: SensorConfig) -> SensorConfig:
    if len(scenes) < 2:
        raise UnderdeterminedError(f"need at least 2 scenes, got {len(scenes)}")
    shapes = {scene.stream.shape for scene in scenes}
    if len(shapes) != 1:
        raise GeometryMismatchError(f"scenes have different geometry: {sorted(shapes)}")
    durations = {scene.n_frames for scene in scenes}
    if len(durations) != 1:
        raise GeometryMismatchError(f"scenes have different durations: {sorted(durations)}")

    height, width = shapes.pop()
    if (height, width) != cfg.shape:
        logging.info(f"Calibrating {height}x{width} streams; sensor geometry taken from the streams")
        cfg = replace(cfg, height=height, width=width)
    return cfg


def _fit_chunked(mu: np.ndarray, y: np.ndarray, s: np.ndarray, workers: int) -> LineFit:
    chunk = SOLVER["chunk_pixels"]
    starts = list(range(0, y.shape[0], chunk))
    if len(starts) <= 1 or workers <= 1:
        return fit_l1_lines(mu, y, s)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        fits = list(executor.map(lambda i: fit_l1_lines(mu, y[i:i + chunk], s[i:i + chunk]), starts))
    return LineFit(a=np.concatenate([f.a for f in fits]), b=np.concatenate([f.b for f in fits]),
                   objective=np.concatenate([f.objective for f in fits]),
                   iterations=np.concatenate([f.iterations for f in fits]))


def fit_count_maps(count_maps: np.ndarray, mu_levels, workers: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel L1 slope and intercept maps (H, W), NaN for dead pixels

    Args:
        count_maps: (K, H, W) spike counts, one map per scene
        mu_levels: (K,) scene luminances
        workers: Threads used for the fits
    """
    mu = np.asarray(mu_levels, dtype=np.float64)
    n_scenes, height, width = count_maps.shape
    counts = count_maps.reshape(n_scenes, -1).T.astype(np.float64)
    alive = counts.any(axis=1)
    a = np.full(height * width, np.nan)
    b = np.full(height * width, np.nan)
    if alive.any():
        s = scene_weights(mu, counts[alive])
        fit = _fit_chunked(mu, counts[alive], s, workers or SpikeCamConfig.WORKERS)
        _project_nonnegative(mu, counts[alive], s, fit)
        a[alive], b[alive] = fit.a, fit.b
    return a.reshape(height, width), b.reshape(height, width)


def calibrate_counts(count_maps: np.ndarray, mu_levels, n_frames: int, cfg: SensorConfig,
                     priors: Optional[DecompositionPriors] = None, workers: Optional[int] = None,
                     scene_info: Optional[List[Tuple[Optional[int], float]]] = None
                     ) -> Tuple[Optional[NoiseParams], Optional[SpatialNoiseMaps], CalibrationReport]:
    """Calibrate every pixel from per-scene spike count maps

    Args:
        count_maps: (K, H, W) spike counts, one map per scene
        mu_levels: (K,) ideal scene luminances
        n_frames: Frames recorded per scene
        cfg: Nominal sensor configuration (geometry must match the maps)
        priors: Decomposition convention
        workers: Threads used for the per-pixel fits
        scene_info: (level, gray) per scene for the report

    Returns:
        (NoiseParams estimate, estimated SpatialNoiseMaps, CalibrationReport);
        the first two are None when no pixel is usable
    """
    mu = np.asarray(mu_levels, dtype=np.float64)
    count_maps = np.asarray(count_maps)
    n_scenes, height, width = count_maps.shape
    if n_scenes != mu.size:
        raise ValueError(f"{n_scenes} count maps for {mu.size} scene luminances")
    if np.unique(mu).size < 2:
        raise UnderdeterminedError(f"need at least 2 distinct scene luminances, got {np.unique(mu).size}")
    if n_frames < 1:
        raise CalibrationError("scenes hold no frames")
    if (height, width) != cfg.shape:
        raise GeometryMismatchError(f"count maps are {height}x{width}, sensor is {cfg.height}x{cfg.width}")

    priors = priors or DecompositionPriors()
    workers = workers or SpikeCamConfig.WORKERS
    scene_info = scene_info or [(None, float(m)) for m in mu]

    counts = count_maps.reshape(n_scenes, -1).T.astype(np.float64)
    weights = scene_weights(mu, counts)
    alive = counts.any(axis=1)
    dead_pixels = [(int(i) // width, int(i) % width) for i in np.flatnonzero(~alive)]
    warnings = []

    low_scenes = [k for k in range(n_scenes) if mu[k] > 0 and np.median(weights[:, k]) < 1.0]
    if low_scenes:
        message = f"{len(low_scenes)} lit scenes have counts below {SOLVER['min_count']} and were down-weighted"
        logging.warning(message)
        warnings.append(message)

    step = cfg.phi / n_frames
    scene_levels = [(level, gray, float(mu[k]), float(weights[:, k].mean()))
                    for k, (level, gray) in enumerate(scene_info)]

    if not alive.any():
        message = "every pixel is dead; aggregate estimates are null"
        logging.warning(message)
        warnings.append(message)
        report = CalibrationReport(estimates=None, n_pixels=height * width, dead_pixels=dead_pixels,
                                   alpha_global=None, slope_median=None, intercept_median=None,
                                   residual_quantiles={}, noise_floors={}, below_noise_floor={},
                                   dark_quantization_step=step, scene_levels=scene_levels,
                                   warnings=warnings)
        return None, None, report
    if dead_pixels:
        message = f"{len(dead_pixels)} dead pixels excluded"
        logging.warning(message)
        warnings.append(message)

    y, s = counts[alive], weights[alive]
    fit = _fit_chunked(mu, y, s, workers)
    _project_nonnegative(mu, y, s, fit)
    parts = decompose(fit.a, fit.b, n_frames, cfg, priors)
    residuals = np.abs(y - (fit.a[:, None] * mu + fit.b[:, None])).sum(axis=1)

    def full_map(values: np.ndarray) -> np.ndarray:
        out = np.full(height * width, np.nan)
        out[alive] = values
        return out.reshape(height, width)

    maps = SpatialNoiseMaps(c_s=full_map(parts["c_s"]), v_s=full_map(parts["v_s"]),
                            alpha=full_map(parts["alpha"]), i_dark=full_map(parts["i_dark"]))

    usable = np.isfinite(parts["phi_eff"])
    alpha_global = parts["alpha_global"]
    estimates = None
    if usable.any() and alpha_global > 0:
        estimates = NoiseParams(
            sigma_C_S=float(np.std(parts["c_s"][usable])),
            sigma_V_S=float(np.std(parts["v_s"][usable])),
            mu_dark=float(np.mean(parts["i_dark"][usable])),
            sigma_dark_S=float(np.std(parts["i_dark"][usable])),
            mu_alpha=float(np.mean(parts["alpha"][usable])),
            sigma_alpha_S=float(np.std(parts["alpha"][usable])),
            sigma_T0=0.0,
        )
    else:
        message = "no pixel responds to luminance; aggregate estimates are null"
        logging.warning(message)
        warnings.append(message)

    bright_count = float(np.median(y[:, int(np.argmax(mu))]))
    relative = 1.0 / (math.sqrt(12.0) * bright_count) if bright_count > 0 else float("inf")
    noise_floors = {
        "sigma_dark_S": step / math.sqrt(12.0),
        "sigma_C_S": cfg.C * relative,
        "sigma_V_S": cfg.V_d * relative,
    }
    below = {}
    if estimates is not None:
        below = {name: getattr(estimates, name) <= floor for name, floor in noise_floors.items()}

    report = CalibrationReport(
        estimates=estimates,
        n_pixels=height * width,
        dead_pixels=dead_pixels,
        alpha_global=alpha_global if alpha_global > 0 else None,
        slope_median=float(np.median(fit.a)),
        intercept_median=float(np.median(fit.b)),
        residual_quantiles={
            "q50": float(np.quantile(residuals, 0.5)),
            "q90": float(np.quantile(residuals, 0.9)),
            "q99": float(np.quantile(residuals, 0.99)),
            "max": float(residuals.max()),
        },
        noise_floors=noise_floors,
        below_noise_floor=below,
        dark_quantization_step=step,
        scene_levels=scene_levels,
        warnings=warnings,
    )
    if estimates is not None:
        logging.info(f"Calibrated {int(alive.sum())} pixels: mu_dark={estimates.mu_dark:.3e}, "
                     f"sigma_dark_S={estimates.sigma_dark_S:.3e}, sigma_C_S={estimates.sigma_C_S:.3e}")
    return estimates, maps, report


def calibrate_sensor(scenes: List[CalibrationScene], cfg: SensorConfig,
                     priors: Optional[DecompositionPriors] = None,
                     workers: Optional[int] = None) -> Tuple[Optional[NoiseParams], Optional[SpatialNoiseMaps], CalibrationReport]:
    """Calibrate every pixel of a sensor from static-scene recordings

    The scenes must share geometry and duration; the sensor geometry is taken
    from the streams.

    Returns:
        (NoiseParams estimate, estimated SpatialNoiseMaps, CalibrationReport)
    """
    cfg = _check_scenes(scenes, cfg)
    count_maps = np.stack([scene.stream.frames.sum(axis=0, dtype=np.int64) for scene in scenes])
    return calibrate_counts(count_maps, [scene.mu_k for scene in scenes], scenes[0].n_frames, cfg,
                            priors=priors, workers=workers,
                            scene_info=[(scene.level, scene.gray) for scene in scenes])


def load_manifest(path: Union[str, Path]) -> List[Tuple[float, float, Path, Optional[int]]]:
    """Read a scene manifest

    One scene per line: `gray L_monitor stream_path [level]`, whitespace or
    comma separated; '#' starts a comment. Relative stream paths resolve
    against the working directory.
    """
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.replace(",", " ").split()
            if len(fields) not in (3, 4):
                raise ValueError(f"{path} line {line_no}: expected 'gray L_monitor path [level]'")
            try:
                gray, l_monitor = float(fields[0]), float(fields[1])
                level = int(fields[3]) if len(fields) == 4 else None
            except ValueError:
                raise ValueError(f"{path} line {line_no}: gray and L_monitor must be numbers")
            entries.append((gray, l_monitor, Path(fields[2]), level))
    return entries


def load_scenes(manifest: Union[str, Path]) -> List[CalibrationScene]:
    """Read every stream listed in a manifest"""
    scenes = []
    for gray, l_monitor, stream_path, level in load_manifest(manifest):
        scenes.append(CalibrationScene(gray=gray, L_monitor=l_monitor,
                                       stream=read_spikes(stream_path), level=level))
    logging.info(f"Loaded {len(scenes)} calibration scenes from {manifest}")
    return scenes
