import numpy as np
import pytest

from spinelab import (build_grid, build_operators, load_scenario,
                      phi_transform, principal_eigenpair)


class Lab:
    """One scenario, discretized once, shared across a test session."""

    def __init__(self, name, m_nodes=200):
        self.spec, self.doc, self.fingerprint = load_scenario(name)
        self.grid = build_grid(self.spec.domain, m_nodes, self.spec.K)
        self.ops = build_operators(self.spec, self.grid)
        self.sd = principal_eigenpair(self.spec, self.ops)
        self.pt = phi_transform(self.spec, self.ops, self.sd)


@pytest.fixture(scope="session")
def canon2():
    return Lab("canon2")


@pytest.fixture(scope="session")
def canona():
    return Lab("canona")


@pytest.fixture(scope="session")
def canonh():
    return Lab("canonh")


@pytest.fixture(scope="session")
def canonv():
    return Lab("canonv")


_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rng(seed=0):
    return np.random.default_rng(seed)
