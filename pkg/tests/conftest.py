import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dpqhd import kernels
from dpqhd.datasets import make_blobs
from dpqhd.hdc_core import Normalizer

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    monkeypatch.setattr(kernels, "_impl", kernels.backends()[request.param])
    return request.param


@pytest.fixture(scope="session")
def blobs():
    """Normalized 3-class blobs, separation 5, 16 features: (train, test)."""
    tr = make_blobs(3, 16, 5.0, 100, seed=1, split="train")
    te = make_blobs(3, 16, 5.0, 100, seed=1, split="test")
    norm = Normalizer.fit(tr.features)
    return tr.normalized(norm), te.normalized(norm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = mod.summary_lines() if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
