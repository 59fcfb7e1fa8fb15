import numpy as np
import pytest

from anosovlab import adapted_metric as am
from anosovlab import flow_core as fc


@pytest.fixture(scope="session")
def canonical():
    m = fc.make_model("canonical")
    lam, cs = am.hyperbolicity_constants(m)
    return m, am.choose_averaging_params(m, lam, cs)


@pytest.fixture(scope="session")
def canonical_metric2(canonical):
    m, p = canonical
    es, eu = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    return am.MetricTwo(m, p, lambda P: np.tile(es, (len(P), 1)),
                        lambda P: np.tile(eu, (len(P), 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
