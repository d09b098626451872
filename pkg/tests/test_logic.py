import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import cnfs
from nsam.logic import (Catalog, Clause, CnfFormula, ContractError, DimacsError, Literal,
                        OracleScaleError, emit_dimacs, enumerate_models, eval_cnf, parse_dimacs)


def test_eval_fig_constraint(fig_cnf):
    assert eval_cnf(fig_cnf, (1, 1, 0))
    assert not eval_cnf(fig_cnf, (1, 0, 0))


def test_empty_cnf_is_true():
    f = CnfFormula((), 2)
    assert all(eval_cnf(f, m) for m in itertools.product((0, 1), repeat=2))


def test_eval_length_mismatch(fig_cnf):
    with pytest.raises(ContractError):
        eval_cnf(fig_cnf, (1, 0))


def test_enumerate_fig_constraint(fig_cnf):
    models = enumerate_models(fig_cnf)
    all_models = list(itertools.product((0, 1), repeat=3))
    assert models == [m for m in all_models if m not in ((1, 0, 0), (0, 1, 0))]
    assert len(models) == 6


def test_enumerate_unit_and_unsat():
    assert enumerate_models(CnfFormula.from_lists([[1]], 1)) == [(1,)]
    assert enumerate_models(CnfFormula.from_lists([[1], [-1]], 1)) == []


def test_enumerate_guard():
    with pytest.raises(OracleScaleError):
        enumerate_models(CnfFormula((), 23))


def test_parse_dimacs_fig_constraint(fig_cnf):
    assert parse_dimacs("p cnf 3 2\n-1 2 3 0\n1 -2 3 0\n") == fig_cnf


def test_parse_dimacs_true():
    f = parse_dimacs("p cnf 1 0\n")
    assert f.clauses == () and f.num_props == 1


@pytest.mark.parametrize("text, fragment", [
    ("p cnf 2 1\n1 3 0\n", "exceeds declared count"),
    ("p cnf x 1\n", "malformed header"),
    ("p cnf 2 1\n1 2\n", "missing 0 terminator"),
    ("1 2 0\n", "before 'p cnf' header"),
    ("p cnf 2 2\n1 2 0\n", "declares 2 clauses"),
])
def test_parse_dimacs_errors(text, fragment):
    with pytest.raises(DimacsError, match=fragment):
        parse_dimacs(text)


def test_parse_error_reports_line():
    with pytest.raises(DimacsError) as info:
        parse_dimacs("c header\np cnf 2 1\n1 3 0\n")
    assert info.value.line == 3


def test_tautology_rejected():
    with pytest.raises(ContractError):
        Clause((Literal(0, True), Literal(0, False)))


def test_duplicate_clauses_kept():
    f = parse_dimacs("p cnf 2 2\n1 2 0\n1 2 0\n")
    assert len(f.clauses) == 2


def test_catalog_round_trip():
    cat = Catalog(["cell(1,1)=1", "cell(1,1)=2"])
    assert Catalog.loads(cat.dumps()).names == cat.names
    assert cat[1].display_name == "cell(1,1)=2"
    with pytest.raises(ContractError):
        Catalog(["a", "a"])


@given(cnfs(max_props=10))
def test_dimacs_round_trip(f):
    text = emit_dimacs(f)
    assert parse_dimacs(text) == f
    assert emit_dimacs(parse_dimacs(text)) == text


@given(cnfs(max_props=10))
def test_eval_matches_clause_text(f):
    # naive evaluation straight from the emitted DIMACS integers
    rows = [list(map(int, ln.split()))[:-1] for ln in emit_dimacs(f).splitlines()[1:]]
    g = parse_dimacs(emit_dimacs(f))
    for m in itertools.product((0, 1), repeat=f.num_props):
        naive = all(any((m[abs(v) - 1] == 1) == (v > 0) for v in row) for row in rows)
        assert eval_cnf(f, m) == naive == eval_cnf(g, m)


@given(cnfs(max_props=10))
def test_model_and_countermodel_counts_partition(f):
    models = set(enumerate_models(f))
    blocked = [m for m in itertools.product((0, 1), repeat=f.num_props) if not eval_cnf(f, m)]
    assert len(models) + len(blocked) == 2 ** f.num_props
    assert models.isdisjoint(blocked)


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=1, max_size=8))
def test_clause_constructor_never_tautological(pairs):
    lits = tuple(Literal(p, s) for p, s in pairs)
    polar = {}
    tautology = any(polar.setdefault(p, s) != s for p, s in pairs)
    if tautology:
        with pytest.raises(ContractError):
            Clause(lits)
    else:
        c = Clause(lits)
        assert len({l.prop for l in c}) == len({(l.prop, l.polarity) for l in c})
