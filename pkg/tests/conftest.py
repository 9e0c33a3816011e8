"""Shared fixtures and the acceptance-summary reporter."""

from __future__ import annotations

import pytest

from steplab.activation import builtin

# One line per acceptance criterion, printed after the run so the pass/fail
# verdicts are visible in one block regardless of pytest's capture settings.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tanh_act():
    return builtin("tanh", centered=True)


@pytest.fixture(scope="session")
def erf_act():
    return builtin("erf", centered=True)


@pytest.fixture(scope="session")
def softplus_act():
    return builtin("softplus", centered=True)


@pytest.fixture(scope="session")
def relu_act():
    return builtin("relu", centered=True)
