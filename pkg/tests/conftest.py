from pathlib import Path

import pytest

import dercoord as dc

REPO = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO


@pytest.fixture(scope="session")
def case39_undirected():
    return dc.load_case(REPO / "cases" / "case39_undirected.txt")


@pytest.fixture(scope="session")
def case39_directed():
    return dc.load_case(REPO / "cases" / "case39_directed.txt")


@pytest.fixture()
def small_instance():
    """3 agents, strictly interior optimum at total demand 3."""
    return dc.ProblemInstance(
        loads=[1.0, 1.0, 1.0],
        p_lo=[0.0, 0.0, 0.0],
        p_hi=[3.0, 3.0, 3.0],
        cost=dc.QuadraticCost([1.0, 2.0, 4.0]),
    )
