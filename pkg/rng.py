"""
Counter-based random substreams

Every random draw in the toolkit comes from a Philox generator whose key is the
run seed and whose 256-bit counter starts at (0, block, row, channel). Two
substreams with different (block, row, channel) never overlap, so the values a
pixel sees depend only on the seed and its coordinates, never on how the work
was split between threads.
"""

import numpy as np

from config import NoiseChannel


def substream(seed: int, channel: NoiseChannel, block: int = 0, row: int = 0) -> np.random.Generator:
    """Return the generator for one (channel, block, row) substream

    Args:
        seed: Run seed, a nonnegative integer below 2**128
        channel: Noise channel
        block: Index of the block of frames
        row: Pixel row

    Returns:
        A numpy Generator positioned at the start of the substream
    """
    if seed < 0 or seed >= 2 ** 128:
        raise ValueError(f"seed must be in [0, 2**128), got {seed}")
    counter = np.array([0, block, row, int(channel)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed), counter=counter))
