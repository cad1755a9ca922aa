import sys
from pathlib import Path

import numpy as np
import pytest

from pathwise.models import linear_softmax

FIXTURES = Path(__file__).parent / "fixtures"


def fake_model_cmd(mode):
    return (sys.executable, str(FIXTURES / "fake_model.py"), mode)


@pytest.fixture
def two_feature_model():
    # class 0 needs only feature 0; class 1 wins at the origin through its bias
    return linear_softmax([[4.0, 0.0], [0.0, 0.0]], [0.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
