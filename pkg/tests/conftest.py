import numpy as np
import pytest

from ddbranch import BranchRate, OffspringLaw, SimConfig


@pytest.fixture
def binary_config():
    return SimConfig(K=20, Z0=20, law=OffspringLaw.binary_logistic(), q=BranchRate.constant(1.0), seed=7)


@pytest.fixture
def poisson_config():
    return SimConfig(K=20, Z0=20, law=OffspringLaw.poisson_exp(1.0), q=BranchRate.constant(1.0), seed=7)


def build_random_forest(rng, n_roots=3, n_events=30, max_children=3):
    """Unpruned forest grown by killing random alive individuals with random offspring counts."""
    from ddbranch import Forest

    f = Forest(n_roots)
    t = 0.0
    for _ in range(n_events):
        if f.n_alive == 0:
            break
        t += float(rng.exponential(1.0))
        u = int(rng.choice(f.alive_ids()))
        f.record_death(u, t, int(rng.integers(0, max_children + 1)))
    f.advance(t + 0.5)
    return f


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
