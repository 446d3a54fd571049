import pytest

_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    if report.when == "call" or report.outcome != "passed":
        previous = _criteria.get(name)
        if previous != "FAIL":
            _criteria[name] = "PASS" if report.outcome == "passed" else "FAIL"


@pytest.fixture(autouse=True)
def _criterion_property(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", marker.args[0]))
    yield


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _criteria.items():
        terminalreporter.write_line(f"{status}  {name}")

