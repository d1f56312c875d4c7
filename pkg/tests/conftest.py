import numpy as np
import pytest

from lpvdelay.iqc import realize_filter, select_multipliers
from lpvdelay.model import example_plant
from lpvdelay.synthesis import SynthesisConfig, synthesize


@pytest.fixture(scope="session")
def sched_plant():
    """Example plant with tau_bar = 2, r = 1.2 and |rho_dot| <= 0.5."""
    return example_plant(tau_bar=2.0, r=1.2, rate=0.5)


@pytest.fixture(scope="session")
def sched_realization(sched_plant):
    return realize_filter(select_multipliers(sched_plant.delay), sched_plant.n_x)


@pytest.fixture(scope="session")
def sched_config():
    return SynthesisConfig.parameter_dependent()


@pytest.fixture(scope="session")
def sched_result(sched_plant, sched_realization, sched_config):
    return synthesize(sched_plant, sched_realization, sched_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sched_trace(sched_plant, sched_realization, sched_result):
    from lpvdelay.ddesim import pulse_scenario, simulate

    return simulate(sched_plant, sched_realization, sched_result.gains, pulse_scenario())


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def report(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
