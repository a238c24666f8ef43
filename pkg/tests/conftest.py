import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SR = 22050


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pulse_signal(f0, n, sample_rate=SR, amplitude=0.5):
    """Unit pulses every ``sample_rate / f0`` samples, nearest-sample placement."""
    x = np.zeros(n)
    t = 0.0
    while t < n:
        x[min(int(round(t)), n - 1)] += amplitude
        t += sample_rate / f0
    return x


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
