import numpy as np
import pytest

from isadre.mlp import SecantNet


def random_net(rng, dim=3, widths=(8, 8), n_freq=2, n_times=2, scale=1.0):
    """Net with every layer (including the output) randomly initialised."""
    net = SecantNet.init(dim, list(widths), n_freq, n_times, rng=rng)
    net.params.values[:] = scale * rng.normal(size=net.params.values.size) / np.sqrt(max(widths))
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
