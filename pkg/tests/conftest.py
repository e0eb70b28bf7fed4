import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes oracles importable


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_noise_refs(n: int, size: int, master_seed: int, mean: float = 0.47, amp: float = 0.10):
    """Tight texture family: per-image iid uniform noise around a fixed mean.

    The family's between-image spread is pure sampling variation, which is
    what makes desk-scale degradation shifts visible after standardization.
    """
    root = np.random.default_rng(master_seed)
    seeds = root.integers(0, 2**32, size=n)
    return [
        np.clip(mean + amp * np.random.default_rng(s).uniform(-1.0, 1.0, (size, size, 3)), 0.0, 1.0)
        for s in seeds
    ]
