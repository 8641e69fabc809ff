"""Shared fixtures: the small hospital datasets used throughout the tests."""

from __future__ import annotations

import pytest

from seqsynth.core import Dataset, Record, SchemaConfig, parse_timestamp

HOSP = SchemaConfig("object", "time", "state", (("gender", "nominal"), ("age", "numeric")))
ER = "Hospitalization in ER"
REL = "Release from ER"


def ts(text: str) -> int:
    return parse_timestamp(text)


EXAMPLE1 = [
    Record("1", ts("2017-02-01 05:45:00"), ER, ("M", 45.0)),
    Record("1", ts("2017-02-02 15:00:00"), REL, ("M", 45.0)),
    Record("2", ts("2017-02-01 06:40:00"), ER, ("F", 45.0)),
]

EXAMPLE2 = [
    Record("1", ts("2017-02-01 05:45:00"), ER, ("M", 45.0)),
    Record("2", ts("2017-02-02 15:03:00"), ER, ("M", 45.0)),
    Record("3", ts("2017-02-03 12:23:00"), ER, ("M", 45.0)),
]

EXAMPLE3 = [
    Record("1", ts("2017-02-01 05:45:00"), ER, ("M", 45.0)),
    Record("1", ts("2017-02-02 15:03:00"), ER, ("M", 45.0)),
    Record("2", ts("2017-02-02 15:03:00"), ER, ("M", 45.0)),
    Record("2", ts("2017-02-03 12:23:00"), REL, ("M", 45.0)),
    Record("3", ts("2017-02-02 17:03:00"), ER, ("F", 16.0)),
    Record("3", ts("2017-02-03 12:56:00"), REL, ("F", 16.0)),
]

CSV_HEADER = "object,gender,age,time,state\n"


def to_csv(records) -> str:
    from seqsynth.core import format_timestamp

    rows = [f"{r.object_id},{r.attributes[0]},{int(r.attributes[1])},{format_timestamp(r.timestamp)},{r.state}" for r in records]
    return CSV_HEADER + "\n".join(rows) + "\n"


@pytest.fixture
def ex1() -> Dataset:
    return Dataset.from_records(EXAMPLE1, HOSP)


@pytest.fixture
def ex2() -> Dataset:
    return Dataset.from_records(EXAMPLE2, HOSP)


@pytest.fixture
def ex3() -> Dataset:
    return Dataset.from_records(EXAMPLE3, HOSP)


# one line per acceptance criterion, echoed after the test run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
