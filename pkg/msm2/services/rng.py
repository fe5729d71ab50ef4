"""
Counter-based random streams.

Every stream is identified by (seed, stream) and nothing else, so a
subject's trajectory or a bootstrap resample never depends on which
worker produced it or in what order.
"""

from typing import Dict

import numpy as np

from ..constants import RNG_NAME, RNG_SCHEME


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent Philox generator for stream `index` under `seed`."""
    if seed < 0 or index < 0:
        raise ValueError("seed and stream index must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def generator_identity() -> Dict[str, str]:
    return {
        "generator": RNG_NAME,
        "scheme": RNG_SCHEME,
        "numpy_version": np.__version__,
    }
