import sys
from pathlib import Path

import numpy as np
import pytest

# Make the sibling oracles module importable regardless of invocation dir.
sys.path.insert(0, str(Path(__file__).parent))

from catalyst_ood import ActivationMap


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_map(rng, n_channels=None, k=None) -> ActivationMap:
    n = n_channels or int(rng.integers(1, 17))
    kk = k or int(rng.integers(1, 8))
    values = rng.gamma(shape=1.5, scale=1.0, size=(n, kk, kk)).astype(np.float32)
    return ActivationMap(values)
