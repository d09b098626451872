import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from nsam.logic import CnfFormula

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# (p1 <-> p2) v p3 as CNF
FIG_CNF = [[-1, 2, 3], [1, -2, 3]]


@st.composite
def clause_lists(draw, num_props, max_clauses=12, max_width=3):
    clauses = []
    for _ in range(draw(st.integers(0, max_clauses))):
        width = draw(st.integers(1, min(max_width, num_props)))
        props = draw(st.lists(st.integers(0, num_props - 1), min_size=width, max_size=width, unique=True))
        clauses.append([(p + 1) * draw(st.sampled_from((1, -1))) for p in props])
    return clauses


@st.composite
def cnfs(draw, min_props=1, max_props=8, max_clauses=12):
    k = draw(st.integers(min_props, max_props))
    return CnfFormula.from_lists(draw(clause_lists(k, max_clauses)), k)


@pytest.fixture
def fig_cnf():
    return CnfFormula.from_lists(FIG_CNF, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_LINES: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        passed, detail = ACCEPTANCE_LINES[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
