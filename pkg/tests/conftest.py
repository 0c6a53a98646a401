import sys

import pytest

from nullrefill.engine import run
from nullrefill.scenario import load_scenario


@pytest.fixture(scope="session")
def paper_nullrefill():
    return run(load_scenario("paper_sim_nullrefill"))


@pytest.fixture(scope="session")
def paper_damping():
    return run(load_scenario("paper_sim_dampinginjection"))


@pytest.fixture(scope="session")
def experiment_analogue():
    return run(load_scenario("paper_experiment_analogue"))


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
