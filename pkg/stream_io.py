"""
On-disk formats for spike streams, luminance sequences, noise maps and
parameter files

All multi-byte integers and floats are little-endian.

Spike stream (.scsm):   "SCSM" | version u16 | H u16 | W u16 | N u32 | dt f32 | origin u8
                        then N frames of ceil(H*W/8) bytes, row-major, LSB-first
Luminance (.sclm):      "SCLM" | version u16 | H u16 | W u16 | T u32 | dt f32 | flags u8
                        then T*H*W float32; if flags bit 0: "SCFL" then T*H*W*2 float32
Noise maps (.scnm):     "SCNM" | version u16 | H u16 | W u16 | seed u64 | has_seed u8
                        then c_s, v_s, alpha, i_dark as H*W float64 each
Parameters:             key = value lines, '#' comments
"""

import dataclasses
import logging
import math
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from config import ResetMode, StreamOrigin
from models import SensorConfig, NoiseParams, SpatialNoiseMaps, LuminanceSequence, SpikeStream
from sensor_core import default_noise_params

PathLike = Union[str, Path]

FORMAT_VERSION = 1
SPIKE_MAGIC = b"SCSM"
LUMINANCE_MAGIC = b"SCLM"
FLOW_MAGIC = b"SCFL"
MAPS_MAGIC = b"SCNM"

_SPIKE_HEADER = struct.Struct("<4sHHHIfB")
_LUMINANCE_HEADER = struct.Struct("<4sHHHIfB")
_MAPS_HEADER = struct.Struct("<4sHHHQB")
_FLAG_FLOW = 0x01


class StreamFormatError(ValueError):
    """Base class of every file-format error"""


class BadMagicError(StreamFormatError):
    pass


class UnsupportedVersionError(StreamFormatError):
    pass


class TruncatedFileError(StreamFormatError):
    pass


class LuminanceValidationError(StreamFormatError):
    """Luminance file holding a NaN or negative value"""


class ParamsError(StreamFormatError):
    """Malformed or out-of-range parameter file"""


def _check_header(data: bytes, header: struct.Struct, magic: bytes, path: PathLike) -> tuple:
    if len(data) < len(magic) or data[:len(magic)] != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {data[:len(magic)]!r}")
    if len(data) < header.size:
        raise TruncatedFileError(f"{path}: header needs {header.size} bytes, file has {len(data)}")
    fields = header.unpack_from(data)
    if fields[1] != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {fields[1]}, expected {FORMAT_VERSION}")
    return fields


def _check_geometry(height: int, width: int):
    if not (1 <= height <= 0xFFFF and 1 <= width <= 0xFFFF):
        raise ValueError(f"geometry {height}x{width} does not fit the u16 header fields")


def _frame_bytes(height: int, width: int) -> int:
    return (height * width + 7) // 8


def write_spikes(stream: SpikeStream, path: PathLike):
    """Write a spike stream as a bit-packed .scsm file"""
    n_frames, height, width = stream.frames.shape
    _check_geometry(height, width)
    header = _SPIKE_HEADER.pack(SPIKE_MAGIC, FORMAT_VERSION, height, width, n_frames,
                                stream.dt, stream.origin.code)
    body = np.packbits(stream.frames.reshape(n_frames, height * width), axis=1, bitorder="little")
    with open(path, "wb") as f:
        f.write(header)
        f.write(body.tobytes())


def read_spikes(path: PathLike) -> SpikeStream:
    """Read a .scsm spike stream"""
    data = Path(path).read_bytes()
    _, _, height, width, n_frames, dt, origin_code = _check_header(data, _SPIKE_HEADER, SPIKE_MAGIC, path)
    try:
        origin = StreamOrigin.from_code(origin_code)
    except ValueError as e:
        raise StreamFormatError(f"{path}: {e}") from e
    if height == 0 or width == 0:
        raise StreamFormatError(f"{path}: empty geometry {height}x{width}")
    if not math.isfinite(dt) or dt <= 0:
        raise StreamFormatError(f"{path}: invalid dt {dt}")

    per_frame = _frame_bytes(height, width)
    expected = _SPIKE_HEADER.size + n_frames * per_frame
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: body needs {expected} bytes, file has {len(data)}")
    if len(data) > expected:
        raise StreamFormatError(f"{path}: {len(data) - expected} trailing bytes after the last frame")

    if n_frames == 0:
        frames = np.zeros((0, height, width), dtype=bool)
    else:
        packed = np.frombuffer(data, dtype=np.uint8, offset=_SPIKE_HEADER.size).reshape(n_frames, per_frame)
        frames = _unpack(packed, height, width, "little")
    return SpikeStream(frames=frames, dt=float(dt), origin=origin)


def _unpack(packed: np.ndarray, height: int, width: int, bitorder: str) -> np.ndarray:
    n_frames = packed.shape[0]
    bits = np.unpackbits(packed, axis=1, count=height * width, bitorder=bitorder)
    return bits.reshape(n_frames, height, width).astype(bool)


def read_raw_dump(path: PathLike, height: int, width: int, dt: float, msb_first: bool = True) -> SpikeStream:
    """Import a headerless external dump of bit-packed frames

    Args:
        path: Dump file
        height: Sensor rows
        width: Sensor columns
        dt: Microseconds per frame
        msb_first: Bit order of the dump (pixel 0 in bit 7 when True)

    Returns:
        SpikeStream with origin CAPTURED
    """
    data = Path(path).read_bytes()
    per_frame = _frame_bytes(height, width)
    if len(data) % per_frame:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is not a whole number of {per_frame}-byte frames")
    packed = np.frombuffer(data, dtype=np.uint8).reshape(-1, per_frame) if data else np.zeros((0, per_frame), np.uint8)
    frames = _unpack(packed, height, width, "big" if msb_first else "little")
    logging.info(f"Imported {frames.shape[0]} frames from raw dump {path}")
    return SpikeStream(frames=frames, dt=dt, origin=StreamOrigin.CAPTURED)


def write_luminance(seq: LuminanceSequence, path: PathLike):
    """Write a luminance sequence (and its flow label, if any) as .sclm"""
    n_frames, height, width = seq.frames.shape
    _check_geometry(height, width)
    flags = _FLAG_FLOW if seq.flow is not None else 0
    header = _LUMINANCE_HEADER.pack(LUMINANCE_MAGIC, FORMAT_VERSION, height, width, n_frames, seq.dt, flags)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
        if seq.flow is not None:
            f.write(FLOW_MAGIC)
            f.write(np.ascontiguousarray(seq.flow, dtype="<f4").tobytes())


def read_luminance(path: PathLike) -> LuminanceSequence:
    """Read a .sclm luminance sequence, rejecting NaN and negative values"""
    data = Path(path).read_bytes()
    _, _, height, width, n_frames, dt, flags = _check_header(data, _LUMINANCE_HEADER, LUMINANCE_MAGIC, path)
    if height == 0 or width == 0:
        raise StreamFormatError(f"{path}: empty geometry {height}x{width}")
    if not math.isfinite(dt) or dt <= 0:
        raise StreamFormatError(f"{path}: invalid dt {dt}")
    if flags & ~_FLAG_FLOW:
        raise StreamFormatError(f"{path}: unknown flags 0x{flags:02x}")

    offset = _LUMINANCE_HEADER.size
    n_values = n_frames * height * width
    body_end = offset + 4 * n_values
    if len(data) < body_end:
        raise TruncatedFileError(f"{path}: luminance body needs {body_end} bytes, file has {len(data)}")
    frames = np.frombuffer(data, dtype="<f4", count=n_values, offset=offset) if n_values else np.zeros(0)
    frames = frames.reshape(n_frames, height, width).astype(np.float64)

    bad = ~(frames >= 0)  # catches NaN as well as negatives
    if bad.any():
        t, y, x = (int(i) for i in np.argwhere(bad)[0])
        raise LuminanceValidationError(
            f"{path}: invalid luminance {frames[t, y, x]} at frame {t}, pixel ({y}, {x})")

    flow = None
    end = body_end
    if flags & _FLAG_FLOW:
        if data[body_end:body_end + 4] != FLOW_MAGIC:
            if len(data) < body_end + 4:
                raise TruncatedFileError(f"{path}: flow section missing")
            raise BadMagicError(f"{path}: expected flow magic {FLOW_MAGIC!r}")
        flow_start = body_end + 4
        end = flow_start + 8 * n_values
        if len(data) < end:
            raise TruncatedFileError(f"{path}: flow body needs {end} bytes, file has {len(data)}")
        flow = np.frombuffer(data, dtype="<f4", count=2 * n_values, offset=flow_start) if n_values else np.zeros(0)
        flow = flow.reshape(n_frames, height, width, 2).astype(np.float64)
    if len(data) > end:
        raise StreamFormatError(f"{path}: {len(data) - end} trailing bytes")

    return LuminanceSequence(frames=frames, dt=float(dt), flow=flow)


def write_maps(maps: SpatialNoiseMaps, path: PathLike):
    """Write fixed-pattern noise maps as .scnm"""
    height, width = maps.shape
    _check_geometry(height, width)
    has_seed = maps.seed is not None
    header = _MAPS_HEADER.pack(MAPS_MAGIC, FORMAT_VERSION, height, width,
                               int(maps.seed) if has_seed else 0, int(has_seed))
    with open(path, "wb") as f:
        f.write(header)
        for array in (maps.c_s, maps.v_s, maps.alpha, maps.i_dark):
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_maps(path: PathLike) -> SpatialNoiseMaps:
    """Read .scnm noise maps"""
    data = Path(path).read_bytes()
    _, _, height, width, seed, has_seed = _check_header(data, _MAPS_HEADER, MAPS_MAGIC, path)
    if height == 0 or width == 0:
        raise StreamFormatError(f"{path}: empty geometry {height}x{width}")
    if has_seed > 1:
        raise StreamFormatError(f"{path}: invalid seed flag {has_seed}")
    n_values = height * width
    expected = _MAPS_HEADER.size + 4 * 8 * n_values
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: maps need {expected} bytes, file has {len(data)}")
    if len(data) > expected:
        raise StreamFormatError(f"{path}: {len(data) - expected} trailing bytes")
    arrays = np.frombuffer(data, dtype="<f8", offset=_MAPS_HEADER.size).reshape(4, height, width)
    c_s, v_s, alpha, i_dark = (a.astype(np.float64) for a in arrays)
    return SpatialNoiseMaps(c_s=c_s, v_s=v_s, alpha=alpha, i_dark=i_dark,
                            seed=int(seed) if has_seed else None)


_SENSOR_KEYS = {f.name: f for f in dataclasses.fields(SensorConfig)}
_NOISE_KEYS = {f.name: f for f in dataclasses.fields(NoiseParams)}


def _parse_value(key: str, text: str, line_no: int):
    if key == "reset_mode":
        try:
            return ResetMode(text.lower())
        except ValueError:
            raise ParamsError(f"line {line_no}: reset_mode must be subtract or zero, got {text!r}")
    if key == "shot_noise":
        lowered = text.lower()
        if lowered in ("on", "true", "1", "yes"):
            return True
        if lowered in ("off", "false", "0", "no"):
            return False
        raise ParamsError(f"line {line_no}: shot_noise must be on or off, got {text!r}")
    try:
        if key in ("height", "width"):
            return int(text)
        value = float(text)
    except ValueError:
        raise ParamsError(f"line {line_no}: {key} expects a number, got {text!r}")
    if not math.isfinite(value):
        raise ParamsError(f"line {line_no}: {key} must be finite, got {text!r}")
    return value


def parse_params(path: PathLike) -> Tuple[SensorConfig, NoiseParams]:
    """Parse a key = value parameter file

    Missing sensor keys take the SensorConfig defaults; missing noise keys take
    the defaults derived from the parsed sensor configuration.

    Returns:
        (SensorConfig, NoiseParams)
    """
    sensor_values: Dict[str, object] = {}
    noise_values: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParamsError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise ParamsError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            if key in _SENSOR_KEYS:
                sensor_values[key] = _parse_value(key, value, line_no)
            elif key in _NOISE_KEYS:
                noise_values[key] = _parse_value(key, value, line_no)
            else:
                raise ParamsError(f"line {line_no}: unknown key {key!r}")

    try:
        cfg = SensorConfig(**sensor_values)
        noise = dataclasses.replace(default_noise_params(cfg), **noise_values)
    except ValueError as e:
        raise ParamsError(f"{path}: {e}") from e
    return cfg, noise


def serialize_params(cfg: SensorConfig, noise: NoiseParams, path: Optional[PathLike] = None) -> str:
    """Write sensor and noise parameters as key = value text

    Returns:
        The serialized text (also written to path when given)
    """
    lines = ["# sensor"]
    for name in _SENSOR_KEYS:
        value = getattr(cfg, name)
        if isinstance(value, ResetMode):
            text = value.value
        elif isinstance(value, bool):
            text = "on" if value else "off"
        else:
            text = repr(value)
        lines.append(f"{name} = {text}")
    lines.append("# noise")
    for name in _NOISE_KEYS:
        lines.append(f"{name} = {getattr(noise, name)!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    return text
