import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import cnfs
from nsam.logic import CnfFormula, ContractError, enumerate_models, eval_cnf
from nsam.sdd import (AND, DECISION, FALSE, OR, TRUE, NodeBudgetExceeded, SddError, SddManager,
                      compile_cnf, emit_sdd, evaluate, iter_nodes, model_count, negate, parse_sdd)
from nsam.vtree import build_balanced, build_right_linear


def models_of(f, k):
    return {m for m in itertools.product((0, 1), repeat=k) if evaluate(f, m)}


def manager_for(k, kind="balanced", seed=None):
    order = list(range(k))
    if seed is not None:
        random.Random(seed).shuffle(order)
    return SddManager((build_balanced if kind == "balanced" else build_right_linear)(order))


def test_contradiction_and_excluded_middle():
    mgr = manager_for(3)
    f = compile_cnf(CnfFormula.from_lists([[1, 2], [-3]], 3), mgr)
    assert mgr.apply(f, negate(f), AND).kind == FALSE
    assert mgr.apply(mgr.literal(1), mgr.literal(-1), OR).kind == TRUE


def test_negate_terminals_and_literals():
    mgr = manager_for(3)
    assert negate(mgr.true) is mgr.false
    assert negate(mgr.literal(2)) is mgr.literal(-2)


def test_fig_constraint(fig_cnf):
    mgr = SddManager(build_balanced([0, 1, 2]))
    f = compile_cnf(fig_cnf, mgr)
    assert models_of(f, 3) == set(enumerate_models(fig_cnf))
    assert len(models_of(f, 3)) == 6
    assert not evaluate(f, (0, 1, 0))
    assert model_count(f, 3) == 6


def test_compile_trivial_formulas():
    mgr = manager_for(2)
    assert compile_cnf(CnfFormula((), 2), mgr).kind == TRUE
    assert compile_cnf(CnfFormula.from_lists([[1], [-1]], 2), mgr).kind == FALSE
    assert evaluate(mgr.true, (0, 1))
    assert model_count(mgr.true, 3) == 8


def test_compile_prop_outside_vtree():
    with pytest.raises(SddError):
        compile_cnf(CnfFormula.from_lists([[3]], 3), SddManager(build_balanced([0, 1])))


def test_manager_mismatch():
    a, b = manager_for(2), manager_for(2)
    with pytest.raises(ContractError):
        a.apply(a.literal(1), b.literal(2), AND)


def test_node_budget_guard():
    mgr = SddManager(build_balanced(list(range(8))), node_budget=3)
    f = CnfFormula.from_lists([[1, 2, 3], [-4, 5], [6, -7, 8], [-1, 8], [2, -6]], 8)
    with pytest.raises(NodeBudgetExceeded):
        compile_cnf(f, mgr)


def test_cache_hit_returns_identical_node():
    mgr = manager_for(6)
    f = compile_cnf(CnfFormula.from_lists([[1, -2], [3, 4, -5]], 6), mgr)
    g = compile_cnf(CnfFormula.from_lists([[-1, 6], [2, 5]], 6), mgr)
    assert mgr.apply(f, g, AND) is mgr.apply(f, g, AND)
    assert mgr.apply(f, g, OR) is mgr.apply(g, f, OR)


pairs = st.integers(1, 10).flatmap(lambda k: st.tuples(cnfs(k, k), cnfs(k, k)))


@given(pairs, st.sampled_from(["balanced", "right-linear"]), st.integers(0, 1000))
def test_apply_matches_set_operations(fg, kind, seed):
    f, g = fg
    k = f.num_props
    mgr = manager_for(k, kind, seed)
    sf, sg = compile_cnf(f, mgr), compile_cnf(g, mgr)
    mf, mg = set(enumerate_models(f)), set(enumerate_models(g))
    assert models_of(mgr.apply(sf, sg, AND), k) == mf & mg
    assert models_of(mgr.apply(sf, sg, OR), k) == mf | mg


@given(cnfs(8, 8), st.integers(0, 1000))
def test_negate_complements(f, seed):
    mgr = manager_for(8, seed=seed)
    s = compile_cnf(f, mgr)
    assert model_count(s, 8) + model_count(negate(s), 8) == 2 ** 8
    assert negate(negate(s)) is s


@given(cnfs(max_props=12, max_clauses=30), st.sampled_from(["balanced", "right-linear"]),
       st.integers(0, 1000))
def test_compile_evaluate_and_count(f, kind, seed):
    k = f.num_props
    s = compile_cnf(f, manager_for(k, kind, seed))
    rng = random.Random(seed)
    for _ in range(50):
        m = tuple(rng.randint(0, 1) for _ in range(k))
        assert evaluate(s, m, check=True) == eval_cnf(f, m)
    assert model_count(s, k) == len(enumerate_models(f))


@given(cnfs(max_props=10), st.integers(0, 1000))
def test_determinism_and_decomposability(f, seed):
    k = f.num_props
    mgr = manager_for(k, seed=seed)
    s = compile_cnf(f, mgr)
    vt = mgr.vtree
    decisions = [n for n in iter_nodes(s) if n.kind == DECISION]
    for n in decisions:
        node = vt[n.vtree]
        for p, sub in n.elements:
            assert all(vt.in_left(n.vtree, x.vtree) for x in iter_nodes(p) if x.vtree is not None)
            assert all(vt.in_right(n.vtree, x.vtree) for x in iter_nodes(sub) if x.vtree is not None)
        assert node.left is not None
    for m in itertools.product((0, 1), repeat=k):
        for n in decisions:
            assert sum(evaluate(p, m) for p, _ in n.elements) == 1


@given(cnfs(max_props=10), st.integers(0, 1000))
def test_unique_table_has_no_duplicates(f, seed):
    mgr = manager_for(f.num_props, seed=seed)
    compile_cnf(f, mgr)
    keys = [(n.vtree, frozenset((p.id, s.id) for p, s in n.elements)) for n in mgr.unique.values()]
    assert len(keys) == len(set(keys))


@given(cnfs(max_props=9), st.randoms(use_true_random=False))
def test_clause_order_insensitive(f, r):
    mgr = manager_for(f.num_props)
    clauses = list(f.clauses)
    r.shuffle(clauses)
    g = CnfFormula(tuple(clauses), f.num_props)
    # canonical within one manager: semantic equality is pointer equality
    assert compile_cnf(f, mgr) is compile_cnf(g, mgr)


@given(cnfs(max_props=10))
def test_sdd_text_round_trip(f):
    mgr = manager_for(f.num_props)
    s = compile_cnf(f, mgr)
    text = emit_sdd(s)
    again = parse_sdd(text, mgr)
    assert again is s
    assert emit_sdd(parse_sdd(text, manager_for(f.num_props))) == text
