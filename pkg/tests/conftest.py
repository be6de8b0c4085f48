import numpy as np
import pytest
from hypothesis import settings

from ppikit.datasets import SynthParams, gen_synthetic

settings.register_profile("ppikit", max_examples=40, deadline=None)
settings.load_profile("ppikit")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def synth_small():
    """Mean-estimation data: n=60 labeled, N=400 unlabeled, R^2=0.5."""
    return gen_synthetic(SynthParams(d=2, mu=4.0, sigma=2.0, R=np.sqrt(0.5), seed=7), 60, 400)


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


# criterion lines recorded by test_acceptance.py, repeated in the summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
