import numpy as np
import pytest

from fpliveness.image import GrayImage
from fpliveness.patches import PatchParams

# Reduced geometry used wherever the default 168px slots would be slow:
# padded 24px, crop 6px per side, final 12px patches.
SMALL = PatchParams(sigma=4, patch_multiplier=4, padding_multiplier=1, noise_factor=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    return SMALL


def gray(arr) -> GrayImage:
    return GrayImage(np.asarray(arr, dtype=np.uint8))


_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "acceptance" in report.keywords:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
