import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crowdbudget import build_configuration_graph, sample_responses, sample_truth, sample_workers

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def simulate(m, l, r, model, seed):
    """Graph, truth, workers and responses from one seed."""
    rng = np.random.default_rng(seed)
    g = build_configuration_graph(m, l, r, rng=rng)
    t = sample_truth(m, rng)
    w = sample_workers(model, g.n, rng)
    return g, t, w, sample_responses(g, t, w, rng)


@pytest.fixture
def sim():
    return simulate
