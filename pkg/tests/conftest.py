import csv

import numpy as np
import pytest

from evspace.fixture import write_fixture

ACCEPTANCE_LINES = []


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, header, rows):
        return write_rows(tmp_path / name, header, rows)
    return _write


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture")
    write_fixture(d)
    return d


@pytest.fixture
def three_by_three():
    """c1={p1,p2}, c2={p2,p3}, c3={p1,p2,p3}."""
    return np.array([[1, 1, 0], [0, 1, 1], [1, 1, 1]])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
