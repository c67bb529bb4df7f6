from importlib.resources import files
from pathlib import Path

import pytest

from loadreconf.netmodel import load_network

DATA = Path(str(files("loadreconf") / "data"))


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def desk16():
    return load_network(DATA / "desk16.json")


@pytest.fixture(scope="session")
def desk8():
    return load_network(DATA / "desk8.json")


@pytest.fixture(scope="session")
def ring4():
    return load_network(DATA / "ring4.json")


@pytest.fixture(scope="session")
def single_line():
    return load_network(DATA / "single_line.json")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
