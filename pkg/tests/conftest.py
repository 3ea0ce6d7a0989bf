import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", max_examples=30, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel_err(a, b):
    """max |a - b| / max(|a|, |b|, 1e-8) over all entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / scale))
