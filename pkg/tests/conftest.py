import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("qflow", deadline=None, max_examples=50)
settings.load_profile("qflow")

ORACLE_PATH = Path(__file__).with_name("oracle_values.json")


@pytest.fixture(scope="session")
def oracle():
    """Values computed independently by scripts/oracles.py (sympy, no qflow import)."""
    return json.loads(ORACLE_PATH.read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_qflow_acceptance")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
