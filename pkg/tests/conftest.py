import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracle modules importable

from dtest.matrix import FeatureMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def random_matrix(rng, n, m, normalized=False):
    values = rng.random((n, m))
    return FeatureMatrix(tuple(f"x{i}" for i in range(n)), values, normalized)
