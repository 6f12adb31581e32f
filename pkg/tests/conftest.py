import numpy as np
import pytest


def sheet_point(rng, n, scale=1.0):
    """Point on the k=-1 hyperboloid built directly from its space coordinates."""
    xs = rng.normal(scale=scale, size=n)
    return np.concatenate([[np.sqrt(1.0 + xs @ xs)], xs])


def tangent_at(rng, x, max_norm=5.0):
    """Random tangent vector at ``x`` with Lorentzian norm at most ``max_norm``."""
    w = rng.normal(size=x.shape)
    inner = -x[0] * w[0] + x[1:] @ w[1:]
    v = w + inner * x  # k = -1: <x, x> = -1
    norm = np.sqrt(-v[0] ** 2 + v[1:] @ v[1:])
    return v * (rng.uniform(0, max_norm) / norm)


def inner(x, y):
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
