import numpy as np
import pytest

from collmon.scattering import ChannelSet, SWaveKMatrixModel, random_k_model
from collmon.thermal import GasParameters


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gas():
    return GasParameters(n_gas=1.0, mass=1.0, beta=1.0)


@pytest.fixture
def model2():
    """Two channels, inelastic coupling."""
    ch = ChannelSet.from_energies([0.0, 0.4], labels=["g", "e"])
    return SWaveKMatrixModel(ch, np.array([[0.3, 0.15], [0.15, -0.2]]), 1.0)


@pytest.fixture
def model3():
    return random_k_model(np.random.default_rng(7), 3, scale=0.5, energies=[0.0, 0.35, 0.9])


@pytest.fixture
def elastic2():
    ch = ChannelSet.from_energies([0.0, 1.0], labels=["a", "b"])
    return SWaveKMatrixModel(ch, np.diag([0.3, -0.2]), 1.0)


def random_hermitian(rng, n):
    x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return x + x.conj().T


def random_psd(rng, n):
    x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return x @ x.conj().T


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for the acceptance summary, then assert it."""

    def record(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
