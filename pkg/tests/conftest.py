import sys

import numpy as np
import pytest

from scanadapt.cloud import LabelSet, PointCloud


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines after capture has ended."""
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cloud(rng):
    """200 points spread over ranges 1..60 m with intensity."""
    n = 200
    azimuth = rng.uniform(0.0, 2 * np.pi, n)
    r = rng.uniform(1.0, 60.0, n)
    z = rng.uniform(-2.0, 4.0, n)
    positions = np.column_stack((r * np.cos(azimuth), r * np.sin(azimuth), z))
    return PointCloud(positions, rng.uniform(0.0, 1.0, n))


@pytest.fixture
def small_labels(rng, small_cloud):
    labels = rng.integers(0, 6, len(small_cloud))
    labels[rng.uniform(size=len(small_cloud)) < 0.1] = -1
    return LabelSet(labels, 6)


def random_cloud(rng, n, with_intensity=True, max_r=60.0):
    azimuth = rng.uniform(0.0, 2 * np.pi, n)
    r = rng.uniform(0.5, max_r, n)
    z = rng.uniform(-3.0, 5.0, n)
    positions = np.column_stack((r * np.cos(azimuth), r * np.sin(azimuth), z))
    inten = rng.uniform(0.0, 1.0, n) if with_intensity else None
    return PointCloud(positions, inten)
