from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter):
    lines = terminalreporter.config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for idx in sorted(lines):
            terminalreporter.write_line(lines[idx])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
