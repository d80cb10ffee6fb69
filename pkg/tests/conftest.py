from __future__ import annotations

from pathlib import Path

import pytest

from bpnet import textio

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load_model(name: str):
    path = FIXTURES / name
    return textio.parse_model(path.read_text(encoding="utf-8"), filename=str(path))


def load_script(name: str):
    path = FIXTURES / name
    return textio.parse_script(path.read_text(encoding="utf-8"), filename=str(path))


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def library_model():
    return load_model("library.bpn")


@pytest.fixture(scope="session")
def library_refined():
    return load_model("library_refined.bpn")


@pytest.fixture(scope="session")
def library_script():
    return load_script("library_decompose.bps")


@pytest.fixture(scope="session")
def bp_model():
    return load_model("bp.bpn")


@pytest.fixture(scope="session")
def bp_refined():
    return load_model("bp_refined.bpn")


@pytest.fixture(scope="session")
def bp_script():
    return load_script("bp_refine.bps")


@pytest.fixture(scope="session")
def bp_fig6():
    return load_model("bp_fig6.bpn")
