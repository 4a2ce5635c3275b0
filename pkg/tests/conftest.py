import json
from pathlib import Path

import pytest

from distcap.dataset import read_captions
from distcap.metrics import idf_build

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dataset():
    return read_captions(FIXTURES / "captions10.json")


@pytest.fixture(scope="session")
def fixture_candidates():
    return read_captions(FIXTURES / "candidates10.json")


@pytest.fixture(scope="session")
def fixture_idf(fixture_dataset):
    return idf_build(fixture_dataset)


@pytest.fixture(scope="session")
def oracle():
    return json.loads((FIXTURES / "oracle_values.json").read_text())


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
