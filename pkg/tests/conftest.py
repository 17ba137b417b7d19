"""Shared fixtures and the acceptance summary printed at the end of a run."""

from collections import OrderedDict

import numpy as np
import pytest

_OUTCOMES: "OrderedDict[int, list[bool]]" = OrderedDict()
_TITLES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    _TITLES[num] = title
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _OUTCOMES.setdefault(num, []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        ok = all(_OUTCOMES[num])
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {_TITLES[num]}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
