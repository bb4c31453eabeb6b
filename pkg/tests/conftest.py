import numpy as np
import pytest

from dualris.config import SystemConfig
from dualris.scenario import make_scenario, synth_channels

# Acceptance verdict lines, echoed in the terminal summary so they survive output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def config():
    return SystemConfig()


@pytest.fixture(scope="session")
def scenario(config):
    return make_scenario(config, 3)


@pytest.fixture(scope="session")
def channels(scenario, config):
    return synth_channels(scenario, config)


def random_rows(rng, k, n, scale=1e-3):
    return (rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))) * scale
