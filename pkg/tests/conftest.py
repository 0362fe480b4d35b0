import pytest

_outcomes: dict[int, list[str]] = {}
_titles: dict[int, str] = {}
_details: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    _titles[number] = title
    if rep.when == "call" or rep.failed or rep.skipped:
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _outcomes.setdefault(number, []).append(status)
    if rep.when == "call":
        _details.setdefault(number, []).extend(
            str(v) for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        states = _outcomes[number]
        status = "FAIL" if "FAIL" in states else ("SKIP" if "SKIP" in states else "PASS")
        terminalreporter.write_line(f"C{number:<2d} {status}  {_titles[number]}")
        for line in _details.get(number, []):
            terminalreporter.write_line(f"      {line}")
