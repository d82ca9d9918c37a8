"""
Spike stream statistics and reconstructions

Spikes per sampling, pooled inter-spike-interval histograms and their
distances, and the windowed-rate (TFP) and reciprocal-interval (TFI) images.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from config import SpikeCamConfig, NoiseChannel
from models import SpikeStream, ISIHistogram
from rng import substream


def spikes_per_sampling(stream: SpikeStream) -> float:
    """Mean number of spikes per readout over the whole sensor"""
    if stream.n_frames == 0:
        raise ValueError("spikes_per_sampling needs at least one frame")
    return float(np.count_nonzero(stream.frames)) / stream.n_frames


def spike_counts(stream: SpikeStream) -> np.ndarray:
    """Per-pixel spike count map"""
    return stream.frames.sum(axis=0, dtype=np.int64)


def _pixel_intervals(stream: SpikeStream) -> Tuple[np.ndarray, np.ndarray]:
    """Return (pixel index, ISI) for every interval between consecutive spikes"""
    n_frames = stream.n_frames
    per_pixel = stream.frames.reshape(n_frames, -1).T
    pixel, frame = np.nonzero(per_pixel)  # ordered by pixel, then frame
    if pixel.size < 2:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    same_pixel = pixel[1:] == pixel[:-1]
    return pixel[1:][same_pixel], np.diff(frame)[same_pixel]


def isi_histogram(stream: SpikeStream) -> ISIHistogram:
    """Pool the inter-spike intervals of every pixel

    Intervals before the first and after the last spike of a pixel are censored
    and left out; pixels with fewer than two spikes contribute nothing.
    """
    pixels, isis = _pixel_intervals(stream)
    values, counts = np.unique(isis, return_counts=True)
    return ISIHistogram(bins={int(v): int(c) for v, c in zip(values, counts)},
                        n_intervals=int(isis.size),
                        pixels_contributing=int(np.unique(pixels).size))


def histogram_distance(h1: ISIHistogram, h2: ISIHistogram) -> float:
    """Total-variation distance between two normalized histograms"""
    if h1.is_empty or h2.is_empty:
        raise ValueError("histogram_distance needs two non-empty histograms")
    p, q = h1.probabilities(), h2.probabilities()
    return 0.5 * sum(abs(p.get(isi, 0.0) - q.get(isi, 0.0)) for isi in set(p) | set(q))


def isi_statistics(hist: ISIHistogram) -> Dict[str, float]:
    """Mean, variance and quartiles of a pooled ISI histogram"""
    if hist.is_empty:
        return {"mean": 0.0, "variance": 0.0, "q1": 0.0, "median": 0.0, "q3": 0.0, "iqr": 0.0}
    values = np.array(sorted(hist.bins), dtype=np.float64)
    counts = np.array([hist.bins[int(v)] for v in values], dtype=np.float64)
    total = counts.sum()
    mean = float((values * counts).sum() / total)
    variance = float((counts * (values - mean) ** 2).sum() / total)
    cdf = np.cumsum(counts) / total

    def quantile(q: float) -> float:
        return float(values[np.searchsorted(cdf, q - 1e-12)])

    q1, median, q3 = quantile(0.25), quantile(0.5), quantile(0.75)
    return {"mean": mean, "variance": variance, "q1": q1, "median": median, "q3": q3, "iqr": q3 - q1}


def bootstrap_isi_variance(stream: SpikeStream, n_boot: int = SpikeCamConfig.BOOTSTRAP_SAMPLES,
                           seed: int = 0, level: float = 0.95) -> Tuple[float, float, float]:
    """Pooled ISI variance with a pixel-resampling bootstrap interval

    Returns:
        (variance, lower bound, upper bound)
    """
    pixels, isis = _pixel_intervals(stream)
    if isis.size == 0:
        return 0.0, 0.0, 0.0
    _, pixel_ids = np.unique(pixels, return_inverse=True)
    n_pixels = int(pixel_ids.max()) + 1
    isis = isis.astype(np.float64)
    n = np.bincount(pixel_ids, minlength=n_pixels).astype(np.float64)
    s1 = np.bincount(pixel_ids, weights=isis, minlength=n_pixels)
    s2 = np.bincount(pixel_ids, weights=isis * isis, minlength=n_pixels)

    def pooled(weights: np.ndarray) -> float:
        total = weights @ n
        mean = (weights @ s1) / total
        return float((weights @ s2) / total - mean * mean)

    rng = substream(seed, NoiseChannel.BOOTSTRAP)
    draws = rng.multinomial(n_pixels, np.full(n_pixels, 1.0 / n_pixels), size=n_boot).astype(np.float64)
    samples = np.array([pooled(w) for w in draws])
    tail = (1.0 - level) / 2
    low, high = np.quantile(samples, [tail, 1.0 - tail])
    return pooled(np.ones(n_pixels)), float(low), float(high)


def _rescale(image: np.ndarray) -> np.ndarray:
    peak = image.max() if image.size else 0.0
    return image / peak if peak > 0 else image


def tfp_reconstruct(stream: SpikeStream, window: int = SpikeCamConfig.TFP_WINDOW,
                    center: Optional[int] = None, rescale: bool = True) -> np.ndarray:
    """Windowed firing-rate image

    Args:
        stream: Spike stream
        window: Number of frames averaged
        center: Frame the window is centred on (defaults to the middle)
        rescale: Divide by the image maximum so values lie in [0, 1]

    Returns:
        (H, W) image; without rescaling, spikes per frame in the window
    """
    if center is None:
        center = stream.n_frames // 2
    start = center - window // 2
    end = start + window
    if window < 1 or start < 0 or end > stream.n_frames:
        raise ValueError(f"window of {window} frames around frame {center} "
                         f"does not fit a {stream.n_frames}-frame stream")
    image = stream.frames[start:end].sum(axis=0, dtype=np.float64) / window
    return _rescale(image) if rescale else image


def tfi_reconstruct(stream: SpikeStream, at: int, rescale: bool = True) -> np.ndarray:
    """Reciprocal inter-spike-interval image

    The interval of a pixel is bounded by its last spike at or before `at` and
    its first spike after `at`; pixels without such a pair are 0.
    """
    image = np.zeros(stream.shape)
    if at < 0 or at >= stream.n_frames - 1:
        return image

    past = stream.frames[at::-1]
    future = stream.frames[at + 1:]
    enclosed = past.any(axis=0) & future.any(axis=0)
    previous = at - past.argmax(axis=0)
    following = at + 1 + future.argmax(axis=0)
    image[enclosed] = 1.0 / (following - previous)[enclosed]
    return _rescale(image) if rescale else image


def write_histogram(hist: ISIHistogram, path: Union[str, Path]):
    """Write `bin,count` lines"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# n_intervals={hist.n_intervals} pixels_contributing={hist.pixels_contributing}\n")
        f.write("# censored first/last intervals excluded\n")
        for isi in sorted(hist.bins):
            f.write(f"{isi},{hist.bins[isi]}\n")


def write_statistics(stats: Dict[str, float], path: Union[str, Path]):
    """Write `key = value` lines"""
    with open(path, "w", encoding="utf-8") as f:
        for key, value in stats.items():
            f.write(f"{key} = {value}\n")


def write_image(image: np.ndarray, path: Union[str, Path]):
    """Write an image as CSV text"""
    np.savetxt(path, image, delimiter=",", fmt="%.6f")
    logging.info(f"Image {image.shape[0]}x{image.shape[1]} written to {path}")
