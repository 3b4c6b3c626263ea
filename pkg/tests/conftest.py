"""Collects a PASS/FAIL line for every test marked ``criterion`` and prints them at the end."""

import pytest

_DETAIL = pytest.StashKey[dict]()
_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.fixture
def measured(request):
    """A dict a criterion test fills with the numbers it observed."""
    d = {}
    request.node.stash[_DETAIL] = d
    return d


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = item.stash.get(_DETAIL, {})
        info = " ".join(f"{k}={v}" for k, v in detail.items())
        _LINES.append(f"{'PASS' if rep.passed else 'FAIL'} {mark.args[0]}" + (f"  [{info}]" if info else ""))


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _LINES:
        terminalreporter.write_line(line)
