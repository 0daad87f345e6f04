import numpy as np
import pytest

from relaysense import SystemConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def crandn(rng, *shape):
    """Standard complex normal entries, CN(0, 1)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def cfg22():
    """N = M = 2, L = 1 at 0 dB with the default noise split."""
    return SystemConfig(n_antennas=2, n_relays=2, frame_len=1).with_snr_db(0.0)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number, title, passed, detail):
        line = f"criterion {number:>2}  {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
