"""Per-criterion pass/fail summary for the acceptance suite."""
import pytest

_outcomes: dict[int, list[str]] = {}
_titles: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    _titles.setdefault(n, mark.args[1] if len(mark.args) > 1 else "")
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _outcomes.setdefault(n, []).append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        res = _outcomes[n]
        status = "PASS" if all(r == "passed" for r in res) else ("SKIP" if all(r == "skipped" for r in res) else "FAIL")
        terminalreporter.write_line(f"criterion {n}: {status}  {_titles[n]}")
