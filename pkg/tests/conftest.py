import pytest

from elapsed_stability.firing import ConstantRate, RefractoryModel, SatQuad, Sigmoid9
from elapsed_stability.steady import find_steady_states

SATQUAD_B = 0.43


@pytest.fixture(scope="session")
def satquad():
    return RefractoryModel(1.0, SatQuad(SATQUAD_B ** 2))


@pytest.fixture(scope="session")
def satquad_state(satquad):
    (state,) = find_steady_states(satquad)
    return state


@pytest.fixture(scope="session")
def constant():
    return RefractoryModel(0.5, ConstantRate(1.0))


@pytest.fixture(scope="session")
def constant_state(constant):
    (state,) = find_steady_states(constant)
    return state


@pytest.fixture(scope="session")
def sigmoid12():
    return RefractoryModel(0.5, Sigmoid9(1.2))


@pytest.fixture(scope="session")
def sigmoid12_states(sigmoid12):
    return find_steady_states(sigmoid12)


# One pass/fail line per acceptance criterion in the terminal summary.

_criteria: dict[str, list[tuple[str, str]]] = {}


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker:
        record_property("criterion", marker.args[0])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if marker:
        _criteria.setdefault(marker, []).append((report.nodeid, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split()[0])):
        outcomes = [o for _, o in _criteria[key]]
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {key} ({outcomes.count('passed')}/{len(outcomes)} checks)")
