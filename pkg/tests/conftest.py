import numpy as np
import pytest

from progseg.events import EventPacket


def random_packet(n, width=32, height=24, seed=0, span=0.5):
    rng = np.random.default_rng(seed)
    return EventPacket.from_arrays(
        rng.integers(0, width, n),
        rng.integers(0, height, n),
        rng.uniform(0.0, span, n),
        rng.choice((-1, 1), n),
        width,
        height,
        t0=0.0,
        t1=span,
    )


@pytest.fixture
def small_packet():
    return random_packet(200)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []  # (criterion, passed, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
