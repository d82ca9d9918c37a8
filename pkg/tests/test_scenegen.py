import numpy as np
import pytest

from models import SensorConfig
from scenegen import (calibration_gray_levels, uniform_scene, two_region_scene, random_texture,
                      translating_scene, warp_by_flow, scene_for_sensor)


@pytest.fixture
def cfg():
    return SensorConfig(height=12, width=16)


def test_calibration_ladder():
    levels = calibration_gray_levels()
    assert len(levels) == 25
    assert levels[0] == (0, 0.0)
    assert levels[3] == (3, 0.3)
    assert levels[-1] == (24, 2.4)


def test_uniform_scene(cfg):
    seq = uniform_scene(0.5, 2.0, 10, cfg)
    assert seq.frames.shape == (10, 12, 16)
    assert np.all(seq.frames == 1.0)
    assert np.all(seq.flow == 0.0)
    assert np.all(uniform_scene(0.0, 1.0, 3, cfg).frames == 0.0)


@pytest.mark.parametrize("gray, L_monitor, n_frames", [(-0.1, 1.0, 5), (0.5, 0.0, 5), (0.5, 1.0, 0)])
def test_uniform_scene_rejects_invalid_input(cfg, gray, L_monitor, n_frames):
    with pytest.raises(ValueError):
        uniform_scene(gray, L_monitor, n_frames, cfg)


def test_two_region_scene(cfg):
    seq = two_region_scene(0.25, 1.0, 4, cfg)
    assert np.all(seq.frames[:, :, :8] == 0.25)
    assert np.all(seq.frames[:, :, 8:] == 1.0)


def test_random_texture_is_seeded_and_in_range(cfg):
    first = random_texture(7, cfg, contrast=(0.2, 0.9))
    again = random_texture(7, cfg, contrast=(0.2, 0.9))
    other = random_texture(8, cfg, contrast=(0.2, 0.9))

    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)
    assert first.min() >= 0.2 and first.max() <= 0.9
    assert first.min() == pytest.approx(0.2) and first.max() == pytest.approx(0.9)


def test_flat_contrast_gives_uniform_texture(cfg):
    assert np.all(random_texture(1, cfg, contrast=(0.5, 0.5)) == 0.5)
    with pytest.raises(ValueError):
        random_texture(1, cfg, contrast=(0.6, 0.5))


def test_integer_translation_wraps_exactly(cfg):
    texture = random_texture(3, cfg)
    seq = translating_scene(texture, (1.0, 0.0), 6)

    assert np.array_equal(seq.frames[0], texture)
    for t in range(5):
        assert np.array_equal(seq.frames[t], np.roll(texture, t, axis=1))
        assert np.array_equal(seq.frames[t + 1], warp_by_flow(seq.frames[t], seq.flow[t]))
    assert np.all(seq.flow[..., 0] == 1.0) and np.all(seq.flow[..., 1] == 0.0)


def test_diagonal_integer_translation_is_exact(cfg):
    texture = random_texture(4, cfg)
    seq = translating_scene(texture, (-2.0, 1.0), 4)
    for t in range(4):
        assert np.array_equal(seq.frames[t], np.roll(texture, (t, -2 * t), axis=(0, 1)))


def test_subpixel_wrap_translation_conserves_brightness(cfg):
    texture = random_texture(6, cfg)
    seq = translating_scene(texture, (0.5, 0.25), 12)

    totals = seq.frames.sum(axis=(1, 2))
    np.testing.assert_allclose(totals, texture.sum(), rtol=1e-12)
    assert not np.array_equal(seq.frames[1], texture)


def test_clamped_translation_marks_invalid_flow(cfg):
    texture = random_texture(3, cfg)
    seq = translating_scene(texture, (1.0, 0.0), 3, wrap=False)

    assert np.all(np.isnan(seq.flow[0][:, 0]))
    assert np.all(np.isfinite(seq.flow[0][:, 1:]))
    assert np.all(np.isnan(seq.flow[2][:, :3]))
    assert np.all(np.isfinite(seq.frames))


def test_translation_rejects_bad_velocity(cfg):
    texture = random_texture(3, cfg)
    with pytest.raises(ValueError):
        translating_scene(texture, (float("nan"), 0.0), 3)


def test_scene_for_sensor_is_reproducible(cfg):
    first = scene_for_sensor(5, cfg, (0.3, -0.2), 4)
    second = scene_for_sensor(5, cfg, (0.3, -0.2), 4)
    assert np.array_equal(first.frames, second.frames)
    assert first.dt == cfg.dt
    assert first.flow.shape == (4, 12, 16, 2)
