"""
Orchestrator for the spike camera toolkit

Coordinates scene generation, simulation, calibration and analysis into the
end-to-end runs used by the command line: file-to-file simulation through the
run cache, the 25-scene calibration protocol and the noise-model comparison.
"""

import dataclasses
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import SpikeCamConfig, SimulationMode, ModelVariant
from models import (SensorConfig, NoiseParams, SpatialNoiseMaps, CalibrationReport,
                    ProtocolResult, ModelComparison)
from cache import RunCache, file_digest
from sensor_core import ShapeError, default_noise_params, configure_variant, sample_spatial_maps, simulate
from scenegen import calibration_gray_levels, uniform_scene
from calibration import (DecompositionPriors, calibrate_counts, calibrate_sensor, fit_count_maps,
                         load_scenes)
from analysis import spikes_per_sampling, isi_histogram, histogram_distance, isi_statistics, spike_counts
from stream_io import (read_luminance, write_spikes, read_spikes, read_maps, write_maps,
                       parse_params, serialize_params)

PathLike = Union[str, Path]

COMPARISON_GRAYS = (0.0, 120 / 255, 180 / 255, 240 / 255)
COMPARISON_PAIRS = ((ModelVariant.FULL, ModelVariant.DARK_SHOT),
                    (ModelVariant.FULL, ModelVariant.NOISE_FREE),
                    (ModelVariant.DARK_SHOT, ModelVariant.NOISE_FREE))


class SpikeCamOrchestrator:
    """Coordinates the toolkit's end-to-end runs

    Attributes:
        cfg: Sensor configuration
        noise: Noise statistics
        workers: Threads used by simulation and calibration
        cache: RunCache, or None to always recompute
        infer_geometry: Take sensor geometry and dt from each luminance file
    """

    def __init__(self, cfg: Optional[SensorConfig] = None, noise: Optional[NoiseParams] = None,
                 workers: Optional[int] = None, cache: Optional[RunCache] = None,
                 infer_geometry: Optional[bool] = None):
        """Initialize the orchestrator

        Args:
            cfg: Sensor configuration (defaults to SensorConfig())
            noise: Noise statistics (defaults to default_noise_params(cfg))
            workers: Threads for simulation and calibration
            cache: Run cache; None disables caching
            infer_geometry: Follow the geometry of luminance files instead of
                rejecting a mismatch; defaults to True only when cfg is None
        """
        self.infer_geometry = cfg is None if infer_geometry is None else infer_geometry
        self.cfg = cfg or SensorConfig()
        self.noise = noise or default_noise_params(self.cfg)
        self.workers = workers or SpikeCamConfig.WORKERS
        self.cache = cache

    @classmethod
    def from_params_file(cls, params_path: Optional[PathLike], workers: Optional[int] = None,
                         cache: Optional[RunCache] = None) -> "SpikeCamOrchestrator":
        """Build an orchestrator from a parameter file (defaults when None)"""
        if params_path is None:
            return cls(workers=workers, cache=cache)
        cfg, noise = parse_params(params_path)
        return cls(cfg, noise, workers=workers, cache=cache)

    def simulate_file(self, lum_path: PathLike, out_path: PathLike, seed: int, mode: SimulationMode,
                      maps_path: Optional[PathLike] = None) -> Tuple[int, int, bool]:
        """Simulate a luminance file into a spike file

        Without an explicit sensor configuration the geometry and dt follow the
        luminance file; with one, a mismatch raises ShapeError. A cached run is
        reused when its output file is still intact.

        Returns:
            (spike total, frame count, whether the result came from the cache)
        """
        run_key = None
        if self.cache is not None:
            run_key = RunCache.simulation_key(file_digest(lum_path), serialize_params(self.cfg, self.noise),
                                              seed, mode.value, file_digest(maps_path))
            hit = self.cache.get_simulation(run_key)
            if hit is not None and Path(hit["output_path"]).resolve() == Path(out_path).resolve():
                stream = read_spikes(out_path)
                return hit["spike_total"], stream.n_frames, True

        lum = read_luminance(lum_path)
        cfg = self.cfg
        if lum.shape != cfg.shape or not math.isclose(lum.dt, cfg.dt, rel_tol=1e-6):
            if not self.infer_geometry:
                raise ShapeError(f"{lum_path} is {lum.shape[0]}x{lum.shape[1]} at dt {lum.dt} us, "
                                 f"sensor parameters say {cfg.height}x{cfg.width} at dt {cfg.dt} us")
            logging.info(f"Sensor geometry {lum.shape[0]}x{lum.shape[1]} and dt {lum.dt} us taken from {lum_path}")
            cfg = dataclasses.replace(cfg, height=lum.shape[0], width=lum.shape[1], dt=lum.dt)
        maps = read_maps(maps_path) if maps_path is not None else None

        stream = simulate(lum, cfg, self.noise, maps, seed, mode, workers=self.workers)
        write_spikes(stream, out_path)
        total = int(np.count_nonzero(stream.frames))
        if self.cache is not None:
            self.cache.record_simulation(run_key, str(out_path), mode.value, seed, total)
        return total, stream.n_frames, False

    def calibrate_manifest(self, manifest: PathLike, report_path: PathLike,
                           maps_path: Optional[PathLike] = None,
                           priors: Optional[DecompositionPriors] = None) -> CalibrationReport:
        """Calibrate from a scene manifest and write the report (and maps)"""
        scenes = load_scenes(manifest)
        estimates, maps, report = calibrate_sensor(scenes, self.cfg, priors=priors, workers=self.workers)
        with open(report_path, "w", encoding="utf-8") as f:
            f.write(report.to_text())
        if maps_path is not None and maps is not None:
            write_maps(maps, maps_path)
        if self.cache is not None:
            self.cache.record_calibration(str(manifest), str(report_path), len(scenes),
                                          vars(estimates) if estimates is not None else None)
        logging.info(f"Calibration report written to {report_path}")
        return report

    def run_calibration_protocol(self, seed: int, n_frames: int,
                                 n_levels: int = SpikeCamConfig.CALIBRATION_LEVELS,
                                 L_monitor: float = SpikeCamConfig.L_MONITOR,
                                 maps: Optional[SpatialNoiseMaps] = None,
                                 priors: Optional[DecompositionPriors] = None) -> ProtocolResult:
        """Simulate the grayscale calibration protocol and calibrate from it

        One fixed-pattern draw is shared by every scene; each scene gets its
        own temporal seed. Only the per-scene count maps are kept.

        Args:
            seed: Seed of the fixed-pattern draw; scene k uses seed + 1 + k
            n_frames: Frames recorded per scene
            n_levels: Grayscale levels k = 0..n_levels-1 at gray 0.1k
            L_monitor: Monitor luminance at gray 1
            maps: Fixed-pattern state to use instead of a fresh draw
            priors: Decomposition convention

        Returns:
            ProtocolResult
        """
        cfg = self.cfg
        if maps is None:
            maps = sample_spatial_maps(cfg, self.noise, seed)
        levels = calibration_gray_levels(n_levels)
        logging.info(f"Calibration protocol: {len(levels)} scenes of {n_frames} frames on "
                     f"{cfg.height}x{cfg.width} pixels")

        count_maps = []
        for k, gray in levels:
            lum = uniform_scene(gray, L_monitor, n_frames, cfg)
            stream = simulate(lum, cfg, self.noise, maps, seed + 1 + k, SimulationMode.NOISY,
                              workers=self.workers)
            count_maps.append(spike_counts(stream))
        count_maps = np.stack(count_maps)
        mu = [gray * L_monitor for _, gray in levels]

        estimates, maps_hat, report = calibrate_counts(count_maps, mu, n_frames, cfg, priors=priors,
                                                       workers=self.workers,
                                                       scene_info=[(k, gray) for k, gray in levels])
        slope_hat, intercept_hat = fit_count_maps(count_maps, mu, workers=self.workers)

        c_eff = np.maximum(cfg.C + maps.c_s, SpikeCamConfig.THRESHOLD_FLOOR * cfg.C)
        phi_eff = c_eff * (cfg.V_d + maps.v_s)
        return ProtocolResult(noise_true=self.noise, maps_true=maps,
                              slope_true=maps.alpha * n_frames / phi_eff,
                              intercept_true=maps.i_dark * n_frames / phi_eff,
                              slope_hat=slope_hat, intercept_hat=intercept_hat,
                              estimates=estimates, maps_hat=maps_hat, report=report)

    def compare_models(self, seed: int, n_frames: int, grays: Sequence[float] = COMPARISON_GRAYS,
                       L_monitor: float = SpikeCamConfig.L_MONITOR,
                       variants: Sequence[ModelVariant] = tuple(ModelVariant)) -> ModelComparison:
        """Compare spike statistics of the noise models across grayscales

        Every variant sees the same uniform scenes and seed; the noise-free
        variant runs the ideal simulator at the mean conversion rate.
        """
        rates: Dict[str, List[float]] = {v.value: [] for v in variants}
        histograms: Dict[str, List] = {v.value: [] for v in variants}
        iqr: Dict[str, List[float]] = {v.value: [] for v in variants}

        for variant in variants:
            cfg, noise = configure_variant(self.cfg, self.noise, variant)
            mode = SimulationMode.IDEAL if variant == ModelVariant.NOISE_FREE else SimulationMode.NOISY
            maps = sample_spatial_maps(cfg, noise, seed) if mode == SimulationMode.NOISY else None
            for gray in grays:
                stream = simulate(uniform_scene(gray, L_monitor, n_frames, cfg), cfg, noise, maps,
                                  seed, mode, workers=self.workers)
                hist = isi_histogram(stream)
                rates[variant.value].append(spikes_per_sampling(stream))
                histograms[variant.value].append(hist)
                iqr[variant.value].append(isi_statistics(hist)["iqr"])
            logging.info(f"Model {variant.value}: spikes per sampling "
                         f"{', '.join(f'{r:.2f}' for r in rates[variant.value])}")

        tv_distance: Dict[str, List[Optional[float]]] = {}
        for first, second in COMPARISON_PAIRS:
            if first not in variants or second not in variants:
                continue
            distances = []
            for h1, h2 in zip(histograms[first.value], histograms[second.value]):
                distances.append(None if h1.is_empty or h2.is_empty else histogram_distance(h1, h2))
            tv_distance[f"{first.value}|{second.value}"] = distances

        return ModelComparison(grays=list(grays), spikes_per_sampling=rates, histograms=histograms,
                               tv_distance=tv_distance, iqr=iqr)
