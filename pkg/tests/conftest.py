import numpy as np
import pytest
from hypothesis import settings

from codedserve.model import MlpModel, init_model

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def linear_model(dims, seed=0):
    """Identity activations and zero biases: a linear map."""
    return init_model(dims, seed=seed, activation="identity")


def scaled_identity(n, c=2.0):
    """Single layer computing ``c * x``."""
    w = (np.eye(n) * c).astype(np.float32)
    return MlpModel([n, n], [w], [np.zeros(n, np.float32)], activation="identity")


class SumOracle:
    """Parity model that returns the exact sum of the deployed model's outputs on the group.

    Remembers deployed outputs keyed by payload bytes; feeding it the encoded sum of
    a known group returns the matching sum of predictions.
    """

    def __init__(self, deployed, groups):
        self.deployed = deployed
        self._table = {}
        for group in groups:
            parity = np.sum(np.stack(group), axis=0, dtype=np.float32)
            self._table[parity.tobytes()] = np.sum(deployed.forward(np.stack(group)), axis=0)

    def forward(self, x):
        return self._table[np.asarray(x, np.float32).tobytes()]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines recorded by test_acceptance.py, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
