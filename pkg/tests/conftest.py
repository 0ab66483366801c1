import sys
from pathlib import Path

import numpy as np
import pytest

import srr

sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture(autouse=True)
def _fresh_probe_cache():
    # Profiles of the selection probe are cached process-wide; start each
    # test clean so cache hits never hide order dependence.
    srr.clear_probe_cache()
    yield
    srr.clear_probe_cache()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
