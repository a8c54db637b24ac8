import numpy as np
import pytest

from otfseq.channel import DelayProfile, build_time_domain, draw_realization
from otfseq.transforms import DdGrid


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_channel(M, N, positions=(0, 1), f_max=2000.0, seed=0, cp_len=None):
    grid = DdGrid(M, N)
    profile = DelayProfile(positions, tuple(-3.0 * k for k in range(len(positions))), cp_len)
    return build_time_domain(draw_realization(profile, f_max, seed), profile, grid)


def unitary_dft(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for the acceptance summary, then assert."""

    def record(number, title, passed, detail):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
