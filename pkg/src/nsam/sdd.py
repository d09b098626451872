"""Sentential decision diagrams: bottom-up apply with compression and trimming.

Every node belongs to exactly one :class:`SddManager`, which owns the vtree,
the unique table and the apply cache.  Nodes are never freed, so cache entries
stay valid for the life of the manager.  Under a fixed vtree, compressed and
trimmed SDDs are canonical, which is what makes ``negate(negate(f)) is f``
and pointer equality of equivalent functions hold.
"""

from __future__ import annotations

import sys
from typing import Iterable, Sequence

from .logic import CnfFormula, ContractError
from .vtree import Vtree

FALSE, TRUE, LITERAL, DECISION = range(4)
AND, OR = 0, 1

DEFAULT_NODE_BUDGET = 5_000_000


class SddError(RuntimeError):
    pass


class NodeBudgetExceeded(SddError):
    pass


class SddNode:
    __slots__ = ("id", "kind", "vtree", "lit", "elements", "manager", "_neg", "__weakref__")

    def __init__(self, manager, id, kind, vtree=None, lit=0, elements=()):
        self.manager = manager
        self.id = id
        self.kind = kind
        self.vtree = vtree
        self.lit = lit
        self.elements = elements
        self._neg = None

    @property
    def is_false(self):
        return self.kind == FALSE

    @property
    def is_true(self):
        return self.kind == TRUE

    @property
    def is_literal(self):
        return self.kind == LITERAL

    @property
    def is_decision(self):
        return self.kind == DECISION

    @property
    def var(self) -> int:
        """0-indexed variable of a literal node."""
        return abs(self.lit) - 1

    def __repr__(self):
        if self.kind == FALSE:
            return "SddNode(False)"
        if self.kind == TRUE:
            return "SddNode(True)"
        if self.kind == LITERAL:
            return f"SddNode(lit={self.lit})"
        return f"SddNode(#{self.id}, vtree={self.vtree}, n={len(self.elements)})"


class SddManager:
    def __init__(self, vtree: Vtree, node_budget: int = DEFAULT_NODE_BUDGET):
        self.vtree = vtree
        self.node_budget = node_budget
        self._next_id = 0
        self.false = self._new(FALSE)
        self.true = self._new(TRUE)
        self.false._neg, self.true._neg = self.true, self.false
        self._literals: dict[int, SddNode] = {}
        self.unique: dict[tuple, SddNode] = {}
        self.apply_cache: dict[tuple[int, int, int], SddNode] = {}
        self.decision_count = 0

    def _new(self, kind, **kw) -> SddNode:
        node = SddNode(self, self._next_id, kind, **kw)
        self._next_id += 1
        return node

    def literal(self, lit: int) -> SddNode:
        """Literal node for a signed, 1-indexed DIMACS literal."""
        node = self._literals.get(lit)
        if node is None:
            var = abs(lit) - 1
            if var not in self.vtree.leaf_of:
                raise SddError(f"variable {var} is not a vtree leaf")
            node = self._new(LITERAL, vtree=self.vtree.leaf_of[var], lit=lit)
            self._literals[lit] = node
        return node

    def _own(self, *nodes: SddNode) -> None:
        for n in nodes:
            if n.manager is not self:
                raise ContractError("SDD nodes belong to different managers")

    # -- node construction ---------------------------------------------------

    def decision(self, v: int, elements: Iterable[tuple[SddNode, SddNode]]) -> SddNode:
        """Compress, trim and uniquify a decision over vtree node ``v``."""
        by_sub: dict[int, list] = {}
        for p, s in elements:
            if p.kind == FALSE:
                continue
            group = by_sub.get(s.id)
            if group is None:
                by_sub[s.id] = [s, p]
            else:
                group[1] = self.apply(group[1], p, OR)
        elems = [(p, s) for s, p in by_sub.values()]
        if len(elems) == 1:
            return elems[0][1]
        if len(elems) == 2:
            (p1, s1), (p2, s2) = elems
            if s1.kind == TRUE and s2.kind == FALSE:
                return p1
            if s1.kind == FALSE and s2.kind == TRUE:
                return p2
        elems.sort(key=lambda e: e[0].id)
        return self._unique(v, tuple(elems))

    def _unique(self, v: int, elems: tuple) -> SddNode:
        # keyed on the element set; stored order is whatever the first creator gave
        key = (v, tuple(sorted((p.id, s.id) for p, s in elems)))
        node = self.unique.get(key)
        if node is None:
            if self.decision_count >= self.node_budget:
                raise NodeBudgetExceeded(
                    f"SDD node budget of {self.node_budget} decision nodes exhausted")
            node = self._new(DECISION, vtree=v, elements=elems)
            self.unique[key] = node
            self.decision_count += 1
        return node

    # -- operations ----------------------------------------------------------

    def negate(self, f: SddNode) -> SddNode:
        self._own(f)
        if f._neg is not None:
            return f._neg
        if f.kind == LITERAL:
            g = self.literal(-f.lit)
        else:
            g = self._unique(f.vtree, tuple((p, self.negate(s)) for p, s in f.elements))
        f._neg, g._neg = g, f
        return g

    def apply(self, f: SddNode, g: SddNode, op: int) -> SddNode:
        if f.manager is not self or g.manager is not self:
            raise ContractError("SDD nodes belong to different managers")
        # terminal cases
        if op == AND:
            if f.kind == FALSE or g.kind == FALSE:
                return self.false
            if f.kind == TRUE:
                return g
            if g.kind == TRUE:
                return f
        else:
            if f.kind == TRUE or g.kind == TRUE:
                return self.true
            if f.kind == FALSE:
                return g
            if g.kind == FALSE:
                return f
        if f is g:
            return f
        if f._neg is g:
            return self.false if op == AND else self.true
        if f.id > g.id:
            f, g = g, f
        key = (f.id, g.id, op)
        hit = self.apply_cache.get(key)
        if hit is not None:
            return hit

        vt = self.vtree
        vf, vg = f.vtree, g.vtree
        if vf == vg:
            if f.kind == LITERAL:
                # same leaf, different literal: complementary
                result = self.false if op == AND else self.true
                self.apply_cache[key] = result
                return result
            v, ef, eg = vf, f.elements, g.elements
        elif vt.contains(vg, vf):
            v, eg = vg, g.elements
            ef = self._lift(f, vg)
        elif vt.contains(vf, vg):
            v, ef = vf, f.elements
            eg = self._lift(g, vf)
        else:
            v = vt.lca(vf, vg)
            ef, eg = self._lift(f, v), self._lift(g, v)

        elements = []
        for p1, s1 in ef:
            for p2, s2 in eg:
                p = self.apply(p1, p2, AND)
                if p.kind == FALSE:
                    continue
                elements.append((p, self.apply(s1, s2, op)))
        result = self.decision(v, elements)
        self.apply_cache[key] = result
        return result

    def _lift(self, f: SddNode, v: int):
        """Elements of ``f`` viewed as a decision over ancestor vtree node ``v``."""
        if self.vtree.in_left(v, f.vtree):
            return ((f, self.true), (self.negate(f), self.false))
        return ((self.true, f),)

    def conjoin(self, f, g):
        return self.apply(f, g, AND)

    def disjoin(self, f, g):
        return self.apply(f, g, OR)

    def clause(self, lits: Sequence[int]) -> SddNode:
        leaf_of = self.vtree.leaf_of
        node = self.false
        for lit in sorted(lits, key=lambda x: leaf_of.get(abs(x) - 1, -1)):
            node = self.apply(node, self.literal(lit), OR)
        return node

    def term(self, lits: Sequence[int]) -> SddNode:
        node = self.true
        for lit in lits:
            node = self.apply(node, self.literal(lit), AND)
        return node


def apply(f: SddNode, g: SddNode, op: int) -> SddNode:
    if f.manager is not g.manager:
        raise ContractError("SDD nodes belong to different managers")
    return f.manager.apply(f, g, op)


def negate(f: SddNode) -> SddNode:
    return f.manager.negate(f)


def _ensure_recursion(vt: Vtree) -> None:
    # apply recursion depth grows with vtree height; right-linear vtrees are tall
    need = 200 + 40 * len(vt)
    if sys.getrecursionlimit() < need:
        sys.setrecursionlimit(min(need, 100_000))


def compile_cnf(f: CnfFormula, target: SddManager | Vtree) -> SddNode:
    """Fold clauses by conjunction in ascending size, ties by first literal."""
    mgr = target if isinstance(target, SddManager) else SddManager(target)
    missing = f.props() - set(mgr.vtree.leaf_of)
    if missing:
        raise SddError(f"props {sorted(missing)} are not covered by the vtree")
    _ensure_recursion(mgr.vtree)
    order = sorted(
        range(len(f.clauses)),
        key=lambda i: (len(f.clauses[i]),
                       f.clauses[i].literals[0].prop if len(f.clauses[i]) else -1))
    node = mgr.true
    for i in order:
        c = mgr.clause([lit.to_dimacs() for lit in f.clauses[i]])
        node = mgr.apply(node, c, AND)
        if node.kind == FALSE:
            break
    return node


def evaluate(f: SddNode, m: Sequence, check: bool = False) -> bool:
    """Bottom-up truth value under a total model ``m``.

    With ``check=True`` every visited decision node is asserted to have
    exactly one true prime.
    """
    memo: dict[int, bool] = {}

    def rec(n: SddNode) -> bool:
        k = n.kind
        if k == TRUE:
            return True
        if k == FALSE:
            return False
        if k == LITERAL:
            return bool(m[abs(n.lit) - 1]) == (n.lit > 0)
        r = memo.get(n.id)
        if r is not None:
            return r
        r = None
        if check:
            hits = [s for p, s in n.elements if rec(p)]
            if len(hits) != 1:
                raise AssertionError(f"decision {n.id} has {len(hits)} true primes")
            r = rec(hits[0])
        else:
            for p, s in n.elements:
                if rec(p):
                    r = rec(s)
                    break
            else:
                raise AssertionError(f"decision {n.id} has no true prime")
        memo[n.id] = r
        return r

    return rec(f)


def model_count(f: SddNode, num_vars: int | None = None) -> int:
    """Exact model count over the manager's catalog (all vtree variables)."""
    vt = f.manager.vtree
    if num_vars is None:
        num_vars = vt.num_vars
    memo: dict[int, int] = {}

    def var_count(n: SddNode) -> int:
        return 0 if n.kind in (TRUE, FALSE) else vt.var_count[n.vtree]

    def rec(n: SddNode) -> int:
        k = n.kind
        if k == FALSE:
            return 0
        if k == TRUE or k == LITERAL:
            return 1
        r = memo.get(n.id)
        if r is None:
            node = vt[n.vtree]
            nl, nr = vt.var_count[node.left], vt.var_count[node.right]
            r = 0
            for p, s in n.elements:
                if s.kind == FALSE:
                    continue
                r += (rec(p) << (nl - var_count(p))) * (rec(s) << (nr - var_count(s)))
            memo[n.id] = r
        return r

    return rec(f) << (num_vars - var_count(f))


def iter_nodes(f: SddNode) -> list[SddNode]:
    """All nodes reachable from ``f``, children before parents."""
    seen: set[int] = set()
    out: list[SddNode] = []
    stack = [(f, False)]
    while stack:
        n, expanded = stack.pop()
        if n.id in seen:
            continue
        if n.kind != DECISION or expanded:
            seen.add(n.id)
            out.append(n)
            continue
        stack.append((n, True))
        for p, s in reversed(n.elements):
            stack.append((s, False))
            stack.append((p, False))
    return out


def sdd_size(f: SddNode) -> int:
    """Total number of elements over decision nodes (the usual SDD size)."""
    return sum(len(n.elements) for n in iter_nodes(f) if n.kind == DECISION)


def sdd_node_count(f: SddNode) -> int:
    return sum(1 for n in iter_nodes(f) if n.kind == DECISION)


def emit_sdd(f: SddNode) -> str:
    nodes = iter_nodes(f)
    ids = {n.id: i for i, n in enumerate(nodes)}
    lines = [f"sdd {len(nodes)}"]
    for n in nodes:
        i = ids[n.id]
        if n.kind == FALSE:
            lines.append(f"F {i}")
        elif n.kind == TRUE:
            lines.append(f"T {i}")
        elif n.kind == LITERAL:
            lines.append(f"L {i} {n.vtree} {n.lit}")
        else:
            body = " ".join(f"{ids[p.id]} {ids[s.id]}" for p, s in n.elements)
            lines.append(f"D {i} {n.vtree} {len(n.elements)} {body}")
    return "\n".join(lines) + "\n"


def parse_sdd(text: str, manager: SddManager) -> SddNode:
    """Rebuild an emitted SDD inside ``manager`` (whose vtree must match the file)."""
    vt = manager.vtree
    table: dict[int, SddNode] = {}
    count = None
    last = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0] == "c":
            continue
        try:
            tag, rest = parts[0], [int(x) for x in parts[1:]]
        except ValueError:
            raise SddError(f"line {lineno}: non-integer field") from None
        if tag == "sdd":
            count = rest[0]
            continue
        i = rest[0]
        if i in table:
            raise SddError(f"line {lineno}: duplicate id {i}")
        if tag == "F":
            node = manager.false
        elif tag == "T":
            node = manager.true
        elif tag == "L":
            v, lit = rest[1], rest[2]
            node = manager.literal(lit)
            if node.vtree != v:
                raise SddError(f"line {lineno}: literal {lit} is not at vtree node {v}")
        elif tag == "D":
            v, n = rest[1], rest[2]
            pairs = rest[3:]
            if len(pairs) != 2 * n or n < 1:
                raise SddError(f"line {lineno}: expected {n} prime/sub pairs")
            if vt[v].is_leaf:
                raise SddError(f"line {lineno}: decision at leaf vtree node {v}")
            elems = []
            for k in range(n):
                try:
                    p, s = table[pairs[2 * k]], table[pairs[2 * k + 1]]
                except KeyError as e:
                    raise SddError(f"line {lineno}: child {e.args[0]} not defined before use") from None
                for child, side in ((p, vt.in_left), (s, vt.in_right)):
                    if child.kind in (LITERAL, DECISION) and not side(v, child.vtree):
                        raise SddError(f"line {lineno}: child not normalized for vtree {v}")
                elems.append((p, s))
            node = manager._unique(v, tuple(elems))
        else:
            raise SddError(f"line {lineno}: unknown record {tag!r}")
        table[i] = node
        last = node
    if count is None or last is None:
        raise SddError("empty or headerless SDD file")
    if len(table) != count:
        raise SddError(f"header declares {count} nodes, found {len(table)}")
    return last
