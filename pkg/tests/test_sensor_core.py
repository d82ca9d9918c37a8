import dataclasses
import math

import numpy as np
import pytest
from scipy.constants import k as BOLTZMANN

from config import ResetMode, StreamOrigin, SimulationMode, ModelVariant, NoiseChannel, NoisePreset
from models import SensorConfig, NoiseParams, SpatialNoiseMaps, LuminanceSequence
from rng import substream
from sensor_core import (ShapeError, thermal_sigma, default_noise_params, preset_params, configure_variant,
                         variant_params, sample_spatial_maps, sample_luminance, simulate_ideal, simulate_noisy,
                         simulate)
from scenegen import scene_for_sensor
from analysis import isi_histogram

from conftest import silent_noise, constant_sequence


def test_quarter_threshold_fires_every_fourth_frame():
    cfg = SensorConfig(height=64, width=64)
    stream = simulate_ideal(constant_sequence(cfg, 0.25, 1000), cfg, alpha=cfg.phi)

    counts = stream.frames.sum(axis=0)
    assert np.all(counts == 250)
    assert np.flatnonzero(stream.frames[:, 0, 0])[:3].tolist() == [3, 7, 11]
    assert stream.origin == StreamOrigin.SIMULATED_IDEAL


def test_irrational_increment_repeats_three_three_four():
    cfg = SensorConfig(height=4, width=4)
    stream = simulate_ideal(constant_sequence(cfg, 0.3, 1000), cfg, alpha=cfg.phi)

    assert np.flatnonzero(stream.frames[:, 1, 2])[:4].tolist() == [3, 6, 9, 13]
    assert np.all(stream.frames.sum(axis=0) == 300)
    hist = isi_histogram(stream)
    assert hist.bins == {3: 200 * 16, 4: 99 * 16}


def test_zero_luminance_never_fires_ideal(small_cfg):
    stream = simulate_ideal(constant_sequence(small_cfg, 0.0, 200), small_cfg, alpha=small_cfg.phi)
    assert not stream.frames.any()


def test_zero_reset_discards_residual(zero_reset_cfg):
    cfg = zero_reset_cfg
    stream = simulate_ideal(constant_sequence(cfg, 0.3, 1000), cfg, alpha=cfg.phi)

    assert np.all(stream.frames.sum(axis=0) == 250)
    assert isi_histogram(stream).bins == {4: 249 * 16}


def test_subtract_reset_never_carries_a_negative_residual():
    cfg = SensorConfig(height=1, width=1)
    # the first frame fires inside the comparison tolerance and overshoots below zero
    lum = LuminanceSequence(frames=np.array([1.0 - 5e-10, 1.0 - 8e-10]).reshape(2, 1, 1), dt=cfg.dt)
    stream = simulate_ideal(lum, cfg, alpha=cfg.phi)
    assert stream.frames[:, 0, 0].tolist() == [True, True]


def test_noise_free_noisy_path_matches_ideal_bit_for_bit():
    cfg = SensorConfig(height=8, width=8, shot_noise=False)
    noise = silent_noise(cfg, mu_alpha=0.37 * cfg.phi)
    maps = sample_spatial_maps(cfg, noise, seed=5)
    rng = np.random.default_rng(11)

    for scene in range(10):
        lum = LuminanceSequence(frames=rng.uniform(0.0, 2.0, (70,) + cfg.shape), dt=cfg.dt)
        ideal = simulate_ideal(lum, cfg, alpha=noise.mu_alpha)
        noisy = simulate_noisy(lum, cfg, noise, maps, seed=scene)
        assert np.array_equal(ideal.frames, noisy.frames)


def test_noisy_simulation_is_reproducible_and_seed_dependent():
    cfg = SensorConfig(height=6, width=5)
    noise = default_noise_params(cfg)
    maps = sample_spatial_maps(cfg, noise, seed=1)
    lum = constant_sequence(cfg, 0.6, 300)

    first = simulate_noisy(lum, cfg, noise, maps, seed=42)
    second = simulate_noisy(lum, cfg, noise, maps, seed=42)
    other = simulate_noisy(lum, cfg, noise, maps, seed=43)

    assert first == second
    assert not np.array_equal(first.frames, other.frames)
    assert first.metadata["seed"] == 42
    assert first.origin == StreamOrigin.SIMULATED_NOISY


@pytest.mark.parametrize("workers", [2, 4, 16])
def test_worker_count_does_not_change_output(workers):
    cfg = SensorConfig(height=20, width=10)
    noise = default_noise_params(cfg)
    maps = sample_spatial_maps(cfg, noise, seed=3)
    lum = scene_for_sensor(9, cfg, (0.5, 0.25), 70)

    single = simulate_noisy(lum, cfg, noise, maps, seed=8, workers=1)
    parallel = simulate_noisy(lum, cfg, noise, maps, seed=8, workers=workers)
    assert np.array_equal(single.frames, parallel.frames)


def test_dark_current_fires_at_zero_luminance(small_cfg):
    noise = silent_noise(small_cfg, mu_dark=0.01 * small_cfg.phi)
    maps = sample_spatial_maps(small_cfg, noise, seed=0)
    stream = simulate_noisy(constant_sequence(small_cfg, 0.0, 1000), small_cfg, noise, maps, seed=0)

    assert np.all(stream.frames.sum(axis=0) == 10)


def test_threshold_floor_hits_are_counted():
    cfg = SensorConfig(height=3, width=4, shot_noise=False)
    noise = silent_noise(cfg)
    shape = cfg.shape
    maps = SpatialNoiseMaps(c_s=np.zeros(shape), v_s=np.full(shape, -0.9999),
                            alpha=np.full(shape, 0.25 * cfg.phi), i_dark=np.zeros(shape))
    stream = simulate_noisy(constant_sequence(cfg, 0.1, 20), cfg, noise, maps, seed=0)

    assert stream.metadata["threshold_floor_hits"] == 20 * 12


def test_shape_and_dt_mismatch_raise(small_cfg):
    wrong_shape = LuminanceSequence(frames=np.zeros((5, 4, 4)), dt=small_cfg.dt)
    with pytest.raises(ShapeError):
        simulate_ideal(wrong_shape, small_cfg)

    wrong_dt = LuminanceSequence(frames=np.zeros((5,) + small_cfg.shape), dt=small_cfg.dt * 2)
    with pytest.raises(ShapeError):
        simulate_ideal(wrong_dt, small_cfg)


def test_maps_with_wrong_shape_raise(small_cfg):
    noise = silent_noise(small_cfg)
    other = SensorConfig(height=4, width=4)
    maps = sample_spatial_maps(other, noise, seed=0)
    with pytest.raises(ShapeError):
        simulate_noisy(constant_sequence(small_cfg, 0.1, 5), small_cfg, noise, maps, seed=0)


def test_thermal_sigma_matches_kt_over_c():
    assert thermal_sigma(300.0, 1e-14) == pytest.approx(math.sqrt(BOLTZMANN * 300.0 / 1e-14))
    assert thermal_sigma(300.0, 1e-14) == pytest.approx(6.4358e-4, rel=1e-3)
    assert thermal_sigma(0.0, 1e-14) == 0.0
    with pytest.raises(ValueError):
        thermal_sigma(300.0, 0.0)
    with pytest.raises(ValueError):
        thermal_sigma(-1.0, 1e-14)


def test_shot_noise_moments():
    rng = substream(0, NoiseChannel.SHOT)
    samples = sample_luminance(np.full(100_000, 1.0), 50.0, rng)

    assert samples.mean() == pytest.approx(1.0, rel=0.01)
    assert samples.var() == pytest.approx(1.0 / 50.0, rel=0.05)


def test_sample_luminance_rejects_nonpositive_photon_rate():
    with pytest.raises(ValueError):
        sample_luminance(1.0, 0.0, substream(0, NoiseChannel.SHOT))


def test_spatial_maps_are_seeded_and_physical():
    cfg = SensorConfig(height=16, width=16)
    noise = default_noise_params(cfg)
    first = sample_spatial_maps(cfg, noise, seed=4)
    again = sample_spatial_maps(cfg, noise, seed=4)
    other = sample_spatial_maps(cfg, noise, seed=5)

    assert first.shape == cfg.shape
    assert np.array_equal(first.c_s, again.c_s) and np.array_equal(first.i_dark, again.i_dark)
    assert not np.array_equal(first.c_s, other.c_s)
    assert np.all(first.i_dark >= 0)
    assert np.all(first.alpha > 0)
    assert first.seed == 4


def test_large_spatial_maps_match_their_moments():
    cfg = SensorConfig(height=256, width=256)
    noise = default_noise_params(cfg)
    maps = sample_spatial_maps(cfg, noise, seed=21)

    for values, mean, spread, sigma in ((cfg.C + maps.c_s, cfg.C, maps.c_s, noise.sigma_C_S),
                                        (cfg.V_d + maps.v_s, cfg.V_d, maps.v_s, noise.sigma_V_S),
                                        (maps.alpha, noise.mu_alpha, maps.alpha, noise.sigma_alpha_S),
                                        (maps.i_dark, noise.mu_dark, maps.i_dark, noise.sigma_dark_S)):
        assert values.mean() == pytest.approx(mean, rel=0.01)
        assert spread.std() == pytest.approx(sigma, rel=0.05)
    assert abs(maps.c_s.mean()) < 0.02 * noise.sigma_C_S
    assert abs(maps.v_s.mean()) < 0.02 * noise.sigma_V_S


def test_spatial_maps_clamp_extreme_draws():
    cfg = SensorConfig(height=10, width=10)
    noise = NoiseParams(sigma_C_S=5 * cfg.C, sigma_V_S=0.0, mu_dark=0.0, sigma_dark_S=cfg.phi,
                        mu_alpha=cfg.phi, sigma_alpha_S=0.0, sigma_T0=0.0)
    maps = sample_spatial_maps(cfg, noise, seed=2)
    maps.check_against(cfg)


def test_default_noise_params_follow_the_circuit():
    cfg = SensorConfig()
    noise = default_noise_params(cfg)

    assert cfg.phi == pytest.approx(1e-14)
    assert noise.mu_alpha == pytest.approx(0.25 * cfg.phi)
    assert noise.mu_dark == pytest.approx(0.002 * cfg.phi)
    assert noise.sigma_dark_S == pytest.approx(0.1 * noise.mu_dark)
    assert noise.sigma_C_S == pytest.approx(0.02 * cfg.C)
    assert noise.sigma_V_S == pytest.approx(0.02 * cfg.V_d)
    assert noise.sigma_T0 == pytest.approx(thermal_sigma(300.0, cfg.C))


def test_model_variants():
    cfg = SensorConfig(height=4, width=4)
    noise = default_noise_params(cfg)

    free_cfg, free = configure_variant(cfg, noise, ModelVariant.NOISE_FREE)
    assert not free_cfg.shot_noise
    assert free.mu_dark == 0 and free.sigma_T0 == 0 and free.mu_alpha == noise.mu_alpha

    dark_cfg, dark = configure_variant(cfg, noise, ModelVariant.DARK_SHOT)
    assert dark_cfg.shot_noise
    assert dark.mu_dark == noise.mu_dark and dark.sigma_dark_S == noise.sigma_dark_S
    assert dark.sigma_C_S == 0 and dark.sigma_V_S == 0 and dark.sigma_T0 == 0

    assert variant_params(noise, ModelVariant.FULL) == noise


def test_conversion_mismatch_preset():
    cfg = SensorConfig(height=6, width=6)
    assert preset_params(cfg, NoisePreset.DEFAULT) == (cfg, default_noise_params(cfg))

    preset_cfg, noise = preset_params(cfg, NoisePreset.CONVERSION_MISMATCH)
    assert preset_cfg.shape == cfg.shape and preset_cfg.mu_ph == 1.0
    assert noise.sigma_C_S == 0 and noise.sigma_V_S == 0 and noise.sigma_T0 == 0
    assert noise.sigma_alpha_S == pytest.approx(0.3 * noise.mu_alpha)

    # with threshold terms off the full and dark-shot models see the same dark frames
    streams = []
    for variant in (ModelVariant.FULL, ModelVariant.DARK_SHOT):
        variant_cfg, variant_noise = configure_variant(preset_cfg, noise, variant)
        maps = sample_spatial_maps(variant_cfg, variant_noise, seed=3)
        streams.append(simulate_noisy(constant_sequence(variant_cfg, 0.0, 600), variant_cfg,
                                      variant_noise, maps, seed=3))
    assert np.array_equal(streams[0].frames, streams[1].frames)
    assert np.all(streams[0].frames.sum(axis=0) == 3)


def test_simulate_dispatches_on_mode():
    cfg = SensorConfig(height=4, width=4, shot_noise=False)
    noise = silent_noise(cfg, mu_alpha=0.25 * cfg.phi)
    lum = constant_sequence(cfg, 1.0, 40)

    ideal = simulate(lum, cfg, noise, None, seed=0, mode=SimulationMode.IDEAL)
    noisy = simulate(lum, cfg, noise, None, seed=0, mode=SimulationMode.NOISY)

    assert ideal.origin == StreamOrigin.SIMULATED_IDEAL
    assert noisy.origin == StreamOrigin.SIMULATED_NOISY
    assert np.array_equal(ideal.frames, noisy.frames)


def test_shot_noise_switch_changes_output():
    cfg = SensorConfig(height=6, width=6)
    noise = silent_noise(cfg, mu_alpha=0.25 * cfg.phi)
    maps = sample_spatial_maps(cfg, noise, seed=0)
    lum = constant_sequence(cfg, 1.0, 400)

    with_shot = simulate_noisy(lum, cfg, noise, maps, seed=1)
    without = simulate_noisy(lum, dataclasses.replace(cfg, shot_noise=False), noise, maps, seed=1)

    assert np.all(without.frames.sum(axis=0) == 100)
    assert not np.array_equal(with_shot.frames, without.frames)
    assert abs(with_shot.frames.sum(axis=0).mean() - 100) < 5
