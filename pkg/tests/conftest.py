import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


def pytest_addoption(parser):
    parser.addoption("--long", action="store_true", default=False,
                     help="run the full-scale criteria (hours)")


def pytest_configure(config):
    config.addinivalue_line("markers", "long: full-scale run, enabled with --long")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--long"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --long to enable")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import REPORT

    if not REPORT.parts:
        return
    terminalreporter.section("acceptance criteria")
    for line in REPORT.lines():
        terminalreporter.write_line(line)
