import os
from pathlib import Path

import numpy as np
import pytest

from imb_lab.network import NetworkParams

MNIST_DIR = Path(os.environ.get("IMB_LAB_MNIST_DIR", "/root/data/mnist"))


def random_params(rng, n_inputs, hidden, n_classes, scale=1.0):
    """Initialized parameters with extra Gaussian jitter so biases and marginals are not trivial."""
    params = NetworkParams.initialize(n_inputs, hidden, n_classes, rng)
    for a in params.arrays():
        a += rng.normal(0.0, scale, a.shape)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_dir():
    from imb_lab.data import find_mnist_files

    try:
        find_mnist_files(MNIST_DIR, "train")
        find_mnist_files(MNIST_DIR, "test")
    except FileNotFoundError:
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set IMB_LAB_MNIST_DIR)")
    return MNIST_DIR


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record a criterion outcome, print it, and fail the test when it did not pass."""

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
