from __future__ import annotations

import numpy as np
import pytest

from betamix.simulate import GenConfig, generate_dataset


@pytest.fixture(scope="session")
def small_sim():
    """A 20-group simulated dataset and its generating state."""
    return generate_dataset(GenConfig(m=20, n_per_group=5, seed=123))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
