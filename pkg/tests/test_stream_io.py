import struct

import numpy as np
import pytest

from config import ResetMode, StreamOrigin
from models import SensorConfig, SpikeStream, LuminanceSequence
from sensor_core import default_noise_params, sample_spatial_maps
from stream_io import (StreamFormatError, BadMagicError, UnsupportedVersionError, TruncatedFileError,
                       LuminanceValidationError, ParamsError, write_spikes, read_spikes, read_raw_dump,
                       write_luminance, read_luminance, write_maps, read_maps, parse_params, serialize_params)

HEADER_SIZE = 19


def test_lsb_first_bit_order(tmp_path):
    frames = np.array([1, 0, 1, 0, 0, 0, 0, 1], dtype=bool).reshape(1, 1, 8)
    path = tmp_path / "one.scsm"
    write_spikes(SpikeStream(frames=frames, dt=25.0), path)

    data = path.read_bytes()
    assert data[:4] == b"SCSM"
    assert data[HEADER_SIZE:] == b"\x85"


def test_partial_byte_is_zero_padded(tmp_path):
    frames = np.ones((2, 1, 3), dtype=bool)
    path = tmp_path / "pad.scsm"
    write_spikes(SpikeStream(frames=frames, dt=25.0), path)
    assert path.read_bytes()[HEADER_SIZE:] == b"\x07\x07"
    assert read_spikes(path) == SpikeStream(frames=frames, dt=25.0)


def test_empty_stream_is_header_only(tmp_path):
    stream = SpikeStream(frames=np.zeros((0, 4, 5), dtype=bool), dt=25.0, origin=StreamOrigin.SIMULATED_IDEAL)
    path = tmp_path / "empty.scsm"
    write_spikes(stream, path)

    assert path.stat().st_size == HEADER_SIZE
    back = read_spikes(path)
    assert back == stream
    assert back.shape == (4, 5)


def test_random_spike_streams_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    origins = list(StreamOrigin)
    path = tmp_path / "s.scsm"
    for case in range(200):
        height, width, n_frames = rng.integers(1, 20), rng.integers(1, 20), rng.integers(0, 30)
        frames = rng.random((n_frames, height, width)) < rng.random()
        stream = SpikeStream(frames=frames, dt=float(rng.choice([25.0, 12.5, 0.5])),
                             origin=origins[case % len(origins)])
        write_spikes(stream, path)
        assert read_spikes(path) == stream


def test_random_luminance_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "l.sclm"
    for case in range(200):
        shape = (int(rng.integers(0, 6)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        frames = rng.uniform(0.0, 4.0, shape).astype(np.float32).astype(np.float64)
        flow = None
        if case % 2:
            flow = rng.normal(0.0, 1.0, shape + (2,)).astype(np.float32).astype(np.float64)
            if case % 3 == 0 and flow.size:
                flow.reshape(-1)[0] = np.nan
        seq = LuminanceSequence(frames=frames, dt=25.0, flow=flow)
        write_luminance(seq, path)
        back = read_luminance(path)

        assert np.array_equal(back.frames, frames)
        assert back.dt == 25.0
        if flow is None:
            assert back.flow is None
        else:
            assert np.array_equal(back.flow, flow, equal_nan=True)


def test_random_maps_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "m.scnm"
    for case in range(200):
        cfg = SensorConfig(height=int(rng.integers(1, 10)), width=int(rng.integers(1, 10)))
        seed = int(rng.integers(0, 2 ** 63))
        maps = sample_spatial_maps(cfg, default_noise_params(cfg), seed)
        if case % 4 == 0:
            maps.seed = None
        write_maps(maps, path)
        back = read_maps(path)

        for name in ("c_s", "v_s", "alpha", "i_dark"):
            assert np.array_equal(getattr(back, name), getattr(maps, name))
        assert back.seed == maps.seed


def test_single_luminance_value_encoding(tmp_path):
    path = tmp_path / "one.sclm"
    write_luminance(LuminanceSequence(frames=np.ones((1, 1, 1)), dt=25.0), path)
    assert path.read_bytes()[HEADER_SIZE:] == b"\x00\x00\x80\x3f"


def test_negative_luminance_names_frame_and_pixel(tmp_path):
    path = tmp_path / "neg.sclm"
    write_luminance(LuminanceSequence(frames=np.ones((2, 3, 4)), dt=25.0), path)
    data = bytearray(path.read_bytes())
    offset = HEADER_SIZE + 4 * (1 * 12 + 2 * 4 + 1)
    data[offset:offset + 4] = struct.pack("<f", -0.5)
    path.write_bytes(bytes(data))

    with pytest.raises(LuminanceValidationError, match=r"frame 1, pixel \(2, 1\)"):
        read_luminance(path)


def test_nan_luminance_rejected(tmp_path):
    path = tmp_path / "nan.sclm"
    write_luminance(LuminanceSequence(frames=np.ones((1, 2, 2)), dt=25.0), path)
    data = bytearray(path.read_bytes())
    data[HEADER_SIZE:HEADER_SIZE + 4] = struct.pack("<f", float("nan"))
    path.write_bytes(bytes(data))

    with pytest.raises(LuminanceValidationError):
        read_luminance(path)


def test_distinct_errors(tmp_path):
    path = tmp_path / "s.scsm"
    write_spikes(SpikeStream(frames=np.ones((4, 3, 3), dtype=bool), dt=25.0), path)
    good = path.read_bytes()

    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(BadMagicError):
        read_spikes(path)

    path.write_bytes(good[:4] + struct.pack("<H", 9) + good[6:])
    with pytest.raises(UnsupportedVersionError):
        read_spikes(path)

    path.write_bytes(good[:-1])
    with pytest.raises(TruncatedFileError):
        read_spikes(path)


def _corruptions(good: bytes, rng):
    """Yield corrupted variants of a valid spike file"""
    modes = ["truncate", "magic", "version", "trailing", "origin", "dt", "geometry", "empty"]
    for case in range(50):
        mode = modes[case % len(modes)]
        data = bytearray(good)
        if mode == "truncate":
            data = data[:int(rng.integers(0, len(good)))]
        elif mode == "magic":
            data[int(rng.integers(0, 4))] ^= 0xFF
        elif mode == "version":
            data[4:6] = struct.pack("<H", int(rng.integers(2, 0xFFFF)))
        elif mode == "trailing":
            data += bytes(rng.integers(0, 256, int(rng.integers(1, 9)), dtype=np.uint8))
        elif mode == "origin":
            data[18] = int(rng.integers(3, 256))
        elif mode == "dt":
            data[14:18] = struct.pack("<f", float(rng.choice([0.0, -1.0, np.nan, np.inf])))
        elif mode == "geometry":
            data[6:8] = struct.pack("<H", 0)
        else:
            data = bytearray()
        yield mode, bytes(data)


def test_corrupted_spike_files_raise_typed_errors(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "good.scsm"
    write_spikes(SpikeStream(frames=rng.random((6, 5, 7)) < 0.5, dt=25.0), path)
    good = path.read_bytes()

    for mode, data in _corruptions(good, rng):
        bad = tmp_path / "bad.scsm"
        bad.write_bytes(data)
        with pytest.raises(StreamFormatError):
            read_spikes(bad)


def test_corrupted_luminance_files_raise_typed_errors(tmp_path):
    rng = np.random.default_rng(4)
    path = tmp_path / "good.sclm"
    seq = LuminanceSequence(frames=rng.uniform(0, 1, (3, 4, 5)), dt=25.0, flow=np.zeros((3, 4, 5, 2)))
    write_luminance(seq, path)
    good = path.read_bytes()
    flow_magic_at = HEADER_SIZE + 4 * 60

    cases = [good[:n] for n in rng.integers(0, len(good), 30)]
    cases += [good + b"\x00", good[:18] + b"\x02" + good[19:], b"SCSM" + good[4:],
              good[:flow_magic_at] + b"XXXX" + good[flow_magic_at + 4:]]
    for case in cases:
        bad = tmp_path / "bad.sclm"
        bad.write_bytes(case)
        with pytest.raises(StreamFormatError):
            read_luminance(bad)


def test_reading_the_wrong_container_is_bad_magic(tmp_path):
    path = tmp_path / "lum.sclm"
    write_luminance(LuminanceSequence(frames=np.ones((1, 2, 2)), dt=25.0), path)
    with pytest.raises(BadMagicError):
        read_spikes(path)
    with pytest.raises(BadMagicError):
        read_maps(path)


def test_raw_dump_msb_first(tmp_path):
    path = tmp_path / "dump.bin"
    path.write_bytes(b"\xa1\x85")

    msb = read_raw_dump(path, 1, 8, 25.0)
    assert msb.frames[0, 0].tolist() == [True, False, True, False, False, False, False, True]
    lsb = read_raw_dump(path, 1, 8, 25.0, msb_first=False)
    assert lsb.frames[1, 0].tolist() == [True, False, True, False, False, False, False, True]
    assert msb.origin == StreamOrigin.CAPTURED

    path.write_bytes(b"\x00\x00\x00")
    with pytest.raises(TruncatedFileError):
        read_raw_dump(path, 3, 4, 25.0)


def test_empty_params_file_gives_defaults(tmp_path):
    path = tmp_path / "p.cfg"
    path.write_text("")
    cfg, noise = parse_params(path)
    assert cfg == SensorConfig()
    assert noise == default_noise_params(cfg)


def test_params_parse_values(tmp_path):
    path = tmp_path / "p.cfg"
    path.write_text("# small sensor\nheight = 16\nwidth = 8  # trailing comment\n"
                    "reset_mode = zero\nshot_noise = off\nmu_dark = 0\n")
    cfg, noise = parse_params(path)
    assert (cfg.height, cfg.width) == (16, 8)
    assert cfg.reset_mode == ResetMode.ZERO
    assert cfg.shot_noise is False
    assert noise.mu_dark == 0.0


@pytest.mark.parametrize("text, message", [
    ("sigma_dark_S = -1\n", "sigma_dark_S >= 0"),
    ("height = 4\nnonsense\n", "line 2"),
    ("colour = red\n", "unknown key"),
    ("C = abc\n", "line 1"),
    ("reset_mode = sideways\n", "reset_mode"),
    ("V_D = 1.0\n", "V_D > V_ref"),
])
def test_params_errors(tmp_path, text, message):
    path = tmp_path / "p.cfg"
    path.write_text(text)
    with pytest.raises(ParamsError, match=message):
        parse_params(path)


def test_params_round_trip(tmp_path):
    cfg = SensorConfig(height=32, width=48, dt=12.5, C=2e-14, reset_mode=ResetMode.ZERO, shot_noise=False)
    noise = default_noise_params(cfg)
    path = tmp_path / "p.cfg"
    serialize_params(cfg, noise, path)

    cfg_back, noise_back = parse_params(path)
    assert cfg_back == cfg
    assert noise_back == noise
    assert serialize_params(cfg_back, noise_back) == path.read_text()
