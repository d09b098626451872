"""Probabilistic SDDs: parameters on OR gates, model probabilities, marginals, MAP.

``attach_params`` turns a compiled SDD into a PSDD normalized for every vtree
node it passes through.  Skipped vtree levels and ``True`` nodes are filled in
with single-element decisions and leaf gates over ``{x, not x}``, so every
variable is distributed by some gate.  With ``smooth=True`` (the default) the
filler leaf gates carry their own parameters; with ``smooth=False`` they are
fixed at 1/2, i.e. variables skipped by the SDD are uniform.

Parameters enter as unconstrained logits, one contiguous block per gate with
at least two live elements.  Elements whose sub is ``False`` carry no mass and
get no slot.  A leaf gate's block is ordered ``[not x, x]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .logic import ContractError
from .sdd import DECISION, FALSE, LITERAL, TRUE, SddNode

LIT, LEAF, DEC = "lit", "leaf", "dec"
LOG_FLOOR = math.log(1e-300)


class PsddError(ValueError):
    pass


class PsddNode:
    __slots__ = ("id", "kind", "vtree", "var", "sign", "elements", "offset", "arity", "const")

    def __init__(self, id, kind, vtree, var=-1, sign=True, elements=(), offset=-1, arity=0,
                 const=1.0):
        self.id = id
        self.kind = kind
        self.vtree = vtree
        self.var = var
        self.sign = sign
        self.elements = elements
        self.offset = offset  # -1: no parameter block
        self.arity = arity
        self.const = const  # fixed coefficient of each element when offset == -1

    def __repr__(self):
        return f"PsddNode(#{self.id}, {self.kind}, vtree={self.vtree})"


@dataclass
class QueryResult:
    value: float
    grad: np.ndarray | None = None


class Psdd:
    def __init__(self, skeleton: SddNode, root: PsddNode, nodes: list[PsddNode],
                 blocks: list[tuple[int, int]], smooth: bool):
        self.skeleton = skeleton
        self.manager = skeleton.manager
        self.vtree = skeleton.manager.vtree
        self.root = root
        self.nodes = nodes  # children before parents
        self.blocks = blocks
        self.total_params = sum(a for _, a in blocks)
        self.smooth = smooth
        self.gate_index = {n.id: (n.offset, n.arity) for n in nodes if n.offset >= 0}
        self.num_vars = self.vtree.num_vars
        # blocks grouped by arity: each group is an (n_blocks, arity) index table
        by_arity: dict[int, list[list[int]]] = {}
        for off, ar in blocks:
            by_arity.setdefault(ar, []).append(list(range(off, off + ar)))
        self._groups = [np.array(v, dtype=np.int64) for _, v in sorted(by_arity.items())]

    def __repr__(self):
        return f"Psdd(nodes={len(self.nodes)}, params={self.total_params})"

    # -- parameters ----------------------------------------------------------

    def check_logits(self, logits) -> np.ndarray:
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape[-1] != self.total_params:
            raise ContractError(
                f"expected {self.total_params} logits, got {logits.shape[-1]}")
        return logits

    def softmax(self, logits) -> np.ndarray:
        """Per-block softmax over the last axis; works for 1-D or batched logits."""
        logits = self.check_logits(logits)
        out = np.empty_like(logits)
        for idx in self._groups:
            x = logits[..., idx]
            e = np.exp(x - x.max(axis=-1, keepdims=True))
            out[..., idx] = e / e.sum(axis=-1, keepdims=True)
        return out

    def softmax_backward(self, alpha: np.ndarray, d_alpha: np.ndarray) -> np.ndarray:
        """Chain a gradient w.r.t. alpha through the per-block softmax."""
        out = np.empty_like(d_alpha)
        for idx in self._groups:
            a, d = alpha[..., idx], d_alpha[..., idx]
            out[..., idx] = a * (d - (a * d).sum(axis=-1, keepdims=True))
        return out

    def element_weights(self, node: PsddNode, alpha) -> list[float]:
        if node.offset < 0:
            return [node.const] * max(node.arity, 1)
        return [float(alpha[node.offset + i]) for i in range(node.arity)]


# -- construction --------------------------------------------------------------


def attach_params(sdd: SddNode, smooth: bool = True) -> Psdd:
    if sdd.kind == FALSE:
        raise PsddError("constraint unsatisfiable: cannot parameterize the False SDD")
    vt = sdd.manager.vtree
    true = sdd.manager.true
    memo: dict[tuple, PsddNode] = {}
    nodes: list[PsddNode] = []

    def make(**kw) -> PsddNode:
        node = PsddNode(len(nodes), **kw)
        nodes.append(node)
        return node

    def rec(n: SddNode, v: int, explicit: bool) -> PsddNode:
        key = (n.id, v, explicit or smooth)
        hit = memo.get(key)
        if hit is not None:
            return hit
        vnode = vt[v]
        if n.kind == TRUE and vnode.is_leaf:
            if explicit or smooth:
                out = make(kind=LEAF, vtree=v, var=vnode.var, arity=2)
            else:
                out = make(kind=LEAF, vtree=v, var=vnode.var, arity=2, const=0.5)
        elif n.kind == TRUE:
            left = rec(true, vnode.left, False)
            right = rec(true, vnode.right, False)
            out = make(kind=DEC, vtree=v, elements=((left, right),), arity=1)
        elif n.kind == LITERAL and n.vtree == v:
            out = make(kind=LIT, vtree=v, var=n.var, sign=n.lit > 0)
        elif n.kind == DECISION and n.vtree == v:
            elems = tuple((rec(p, vnode.left, True), rec(s, vnode.right, True))
                          for p, s in n.elements if s.kind != FALSE)
            out = make(kind=DEC, vtree=v, elements=elems, arity=len(elems))
        elif vt.in_left(v, n.vtree):
            out = make(kind=DEC, vtree=v, arity=1,
                       elements=((rec(n, vnode.left, explicit), rec(true, vnode.right, False)),))
        elif vt.in_right(v, n.vtree):
            out = make(kind=DEC, vtree=v, arity=1,
                       elements=((rec(true, vnode.left, False), rec(n, vnode.right, explicit)),))
        else:
            raise PsddError(f"SDD node {n!r} is not normalized under vtree node {v}")
        memo[key] = out
        return out

    root = rec(sdd, vt.root, True)
    # blocks in bottom-up (creation) order, which is deterministic for a given SDD
    blocks = []
    offset = 0
    for node in nodes:
        if node.kind in (DEC, LEAF) and node.arity >= 2 and node.const == 1.0:
            node.offset = offset
            blocks.append((offset, node.arity))
            offset += node.arity
    return Psdd(sdd, root, nodes, blocks, smooth)


def psdd_size(p: Psdd) -> int:
    return sum(len(n.elements) for n in p.nodes if n.kind == DEC)


# -- reference queries (scalar, recursive) -----------------------------------


def _check_model(p: Psdd, m: Sequence) -> None:
    if len(m) != p.num_vars:
        raise ContractError(f"model has length {len(m)}, PSDD has {p.num_vars} vars")


def log_prob_model(p: Psdd, logits, m: Sequence) -> float:
    """log Pr(m); ``-inf`` exactly when m violates the constraint."""
    _check_model(p, m)
    alpha = p.softmax(logits)
    memo: dict[int, float] = {}

    def rec(n: PsddNode) -> float:
        r = memo.get(n.id)
        if r is not None:
            return r
        if n.kind == LIT:
            r = 0.0 if bool(m[n.var]) == n.sign else -math.inf
        elif n.kind == LEAF:
            w = p.element_weights(n, alpha)
            r = max(math.log(w[1] if m[n.var] else w[0]), LOG_FLOOR)
        else:
            w = p.element_weights(n, alpha)
            r = -math.inf
            for i, (prime, sub) in enumerate(n.elements):
                lp = rec(prime)
                if lp != -math.inf:
                    r = max(math.log(w[i]), LOG_FLOOR) + lp + rec(sub)
                    break
        memo[n.id] = r
        return r

    return rec(p.root)


def prob_model(p: Psdd, logits, m: Sequence) -> float:
    lp = log_prob_model(p, logits, m)
    return 0.0 if lp == -math.inf else math.exp(lp)


def prob_query(p: Psdd, logits, q: SddNode, with_grad: bool = False) -> QueryResult:
    """Pr(q) under the PSDD, by a memoized pass over (psdd node, query node) pairs."""
    if q.manager is not p.manager:
        raise ContractError("query must be compiled in the PSDD's SDD manager (same vtree)")
    alpha = p.softmax(logits)
    vt = p.vtree
    values: dict[tuple[int, int], float] = {}
    tape: list[tuple[tuple, list]] = []  # (key, [(alpha_index, weight, child keys)])
    ONE, ZERO = ("one",), ("zero",)

    def value(key):
        if key is ONE:
            return 1.0
        if key is ZERO:
            return 0.0
        return values[key]

    def rec(n: PsddNode, qn: SddNode):
        if qn.kind == TRUE:
            return ONE
        if qn.kind == FALSE:
            return ZERO
        key = (n.id, qn.id)
        if key in values:
            return key
        terms = []
        if n.kind == LIT:
            return ONE if qn.lit == (n.var + 1 if n.sign else -(n.var + 1)) else ZERO
        w = p.element_weights(n, alpha)
        if n.kind == LEAF:
            i = 1 if qn.lit > 0 else 0
            terms.append((n.offset + i if n.offset >= 0 else -1, w[i], ()))
        elif qn.vtree == n.vtree:
            for i, (prime, sub) in enumerate(n.elements):
                for a, b in qn.elements:
                    ka, kb = rec(prime, a), rec(sub, b)
                    if ka is not ZERO and kb is not ZERO:
                        terms.append((n.offset + i if n.offset >= 0 else -1, w[i], (ka, kb)))
        else:
            left = vt.in_left(n.vtree, qn.vtree)
            for i, (prime, sub) in enumerate(n.elements):
                k = rec(prime, qn) if left else rec(sub, qn)
                if k is not ZERO:
                    terms.append((n.offset + i if n.offset >= 0 else -1, w[i], (k,)))
        if not terms:
            return ZERO
        total = 0.0
        for _, wi, kids in terms:
            prod = wi
            for k in kids:
                prod *= value(k)
            total += prod
        values[key] = total
        tape.append((key, terms))
        return key

    root = rec(p.root, q)
    result = QueryResult(value(root))
    if not with_grad:
        return result
    d_alpha = np.zeros(p.total_params)
    if root is ONE or root is ZERO:
        result.grad = d_alpha
        return result
    adj: dict = {root: 1.0}
    for key, terms in reversed(tape):
        g = adj.get(key, 0.0)
        if g == 0.0:
            continue
        for ai, wi, kids in terms:
            vals = [value(k) for k in kids]
            if ai >= 0:
                d_alpha[ai] += g * math.prod(vals)
            for j, k in enumerate(kids):
                if k is ONE:
                    continue
                others = math.prod(v for jj, v in enumerate(vals) if jj != j)
                adj[k] = adj.get(k, 0.0) + g * wi * others
    result.grad = p.softmax_backward(alpha, d_alpha)
    return result


def map_model(p: Psdd, logits) -> tuple[tuple[int, ...], float]:
    """Most probable model; ties go to the lowest element index (``not x`` first at leaves)."""
    alpha = p.softmax(logits)
    best: dict[int, tuple[float, int]] = {}

    def rec(n: PsddNode) -> float:
        hit = best.get(n.id)
        if hit is not None:
            return hit[0]
        if n.kind == LIT:
            best[n.id] = (0.0, 0)
            return 0.0
        w = p.element_weights(n, alpha)
        top, arg = -math.inf, -1
        if n.kind == LEAF:
            for i in (0, 1):
                s = max(math.log(w[i]), LOG_FLOOR)
                if s > top:
                    top, arg = s, i
        else:
            for i, (prime, sub) in enumerate(n.elements):
                s = max(math.log(w[i]), LOG_FLOOR) + rec(prime) + rec(sub)
                if s > top:
                    top, arg = s, i
        best[n.id] = (top, arg)
        return top

    logp = rec(p.root)
    model = [0] * p.num_vars
    stack = [p.root]
    while stack:
        n = stack.pop()
        if n.kind == LIT:
            model[n.var] = int(n.sign)
        elif n.kind == LEAF:
            model[n.var] = best[n.id][1]
        else:
            prime, sub = n.elements[best[n.id][1]]
            stack.append(sub)
            stack.append(prime)
    return tuple(model), math.exp(logp)


# -- compiled, batched evaluation ----------------------------------------------


def _scatter(targets: list[int]) -> tuple[np.ndarray, sparse.csr_matrix]:
    """Distinct target rows and the 0/1 matrix summing terms into them."""
    rows, inverse = np.unique(np.asarray(targets, dtype=np.int64), return_inverse=True)
    T = len(targets)
    S = sparse.csr_matrix((np.ones(T), (inverse, np.arange(T))), shape=(len(rows), T))
    return rows, S


class CircuitProgram:
    """An arithmetic circuit laid out level by level for batched numpy evaluation.

    Columns: ``[inputs..., ONE, ZERO, nodes...]``.  Each node is a sum of terms
    ``const * alpha[a] * V[c1] * V[c2]``; ``a == P`` selects a constant 1.
    """

    def __init__(self, num_inputs: int, num_params: int):
        self.num_inputs = num_inputs
        self.num_params = num_params
        self.ONE = num_inputs
        self.ZERO = num_inputs + 1
        self._terms: list[list[tuple[float, int, int, int]]] = []
        self._level = [0] * (num_inputs + 2)

    def add_node(self, terms: list[tuple[float, int, int, int]]) -> int:
        if not terms:
            return self.ZERO
        col = len(self._level)
        self._terms.append(terms)
        self._level.append(1 + max(max(self._level[c1], self._level[c2]) for _, _, c1, c2 in terms))
        return col

    def finalize(self) -> None:
        first = self.num_inputs + 2
        self.num_cols = len(self._level)
        by_level: dict[int, list[int]] = {}
        for col in range(first, self.num_cols):
            by_level.setdefault(self._level[col], []).append(col)
        self.levels = []
        for lvl in sorted(by_level):
            const, aidx, c1, c2, starts = [], [], [], [], []
            cols = by_level[lvl]
            for col in cols:
                starts.append(len(const))
                for k, a, x, y in self._terms[col - first]:
                    const.append(k)
                    aidx.append(self.num_params if a < 0 else a)
                    c1.append(x)
                    c2.append(y)
            T = len(const)
            counts = np.diff(np.append(starts, T))
            ones = np.ones(T)
            term_ids = np.arange(T)
            self.levels.append(dict(
                cols=np.array(cols), const=np.array(const)[:, None], aidx=np.array(aidx),
                c1=np.array(c1), c2=np.array(c2), starts=np.array(starts),
                out=np.repeat(np.array(cols), counts),
                log_const=np.log(np.array(const)),
                local=term_ids - np.repeat(np.array(starts), counts), counts=counts,
                # scatter matrices for the backward pass
                scatter_a=_scatter(aidx), scatter_1=_scatter(c1), scatter_2=_scatter(c2)))
        self.num_terms = sum(len(lv["aidx"]) for lv in self.levels)

    def _extend(self, alpha: np.ndarray) -> np.ndarray:
        """(B, P) parameters to a (P + 1, B) table whose last row is the constant 1."""
        A = np.empty((alpha.shape[-1] + 1, alpha.shape[0]))
        A[:-1] = alpha.T
        A[-1] = 1.0
        return A

    def forward(self, alpha: np.ndarray, inputs: np.ndarray | None = None) -> np.ndarray:
        """Column values for a batch, shaped (columns, B).

        ``alpha`` is (B, P) and ``inputs`` (B, I).
        """
        B = alpha.shape[0]
        A = self._extend(alpha)
        V = np.zeros((self.num_cols, B))
        if self.num_inputs:
            V[:self.num_inputs] = inputs.T
        V[self.ONE] = 1.0
        for lv in self.levels:
            tv = lv["const"] * A[lv["aidx"]] * V[lv["c1"]] * V[lv["c2"]]
            V[lv["cols"]] = np.add.reduceat(tv, lv["starts"], axis=0)
        return V

    def backward(self, alpha: np.ndarray, V: np.ndarray, dV: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. alpha, (B, P), given adjoints ``dV`` (columns, B) at the outputs."""
        A = self._extend(alpha)
        dA = np.zeros_like(A)
        dV = dV.copy()
        for lv in reversed(self.levels):
            g = dV[lv["out"]] * lv["const"]
            a = A[lv["aidx"]]
            v1, v2 = V[lv["c1"]], V[lv["c2"]]
            ga = g * a
            rows, S = lv["scatter_a"]
            dA[rows] += S @ (g * v1 * v2)
            rows, S = lv["scatter_1"]
            dV[rows] += S @ (ga * v2)
            rows, S = lv["scatter_2"]
            dV[rows] += S @ (ga * v1)
        return dA[:-1].T

    def max_forward(self, log_alpha: np.ndarray, log_inputs: np.ndarray | None = None):
        """Max-product pass in log space for a single parameter vector.

        Returns column log-values and, per node column, the index of the first
        maximizing term (its element index).
        """
        LA = np.concatenate([log_alpha, [0.0]])
        L = np.full(self.num_cols, -np.inf)
        if self.num_inputs:
            L[:self.num_inputs] = log_inputs
        L[self.ONE] = 0.0
        choice = np.full(self.num_cols, -1, dtype=np.int64)
        for lv in self.levels:
            tv = lv["log_const"] + LA[lv["aidx"]] + L[lv["c1"]] + L[lv["c2"]]
            top = np.maximum.reduceat(tv, lv["starts"])
            hit = tv == np.repeat(top, lv["counts"])
            first = np.minimum.reduceat(np.where(hit, lv["local"], len(tv)), lv["starts"])
            L[lv["cols"]] = top
            choice[lv["cols"]] = first
        return L, choice


class CompiledPsdd:
    """Batched PSDD evaluation with indicator inputs ``[not x0, x0, not x1, x1, ...]``.

    Serves model probabilities, MAP, and marginals of conjunctive queries
    (terms), where a term sets the indicators of its contradicting literals to 0.
    """

    def __init__(self, p: Psdd):
        self.psdd = p
        K = p.num_vars
        prog = CircuitProgram(2 * K, p.total_params)
        col: dict[int, int] = {}
        for n in p.nodes:
            if n.kind == LIT:
                col[n.id] = 2 * n.var + int(n.sign)
            elif n.kind == LEAF:
                a0 = n.offset if n.offset >= 0 else -1
                a1 = n.offset + 1 if n.offset >= 0 else -1
                col[n.id] = prog.add_node([(n.const, a0, 2 * n.var, prog.ONE),
                                           (n.const, a1, 2 * n.var + 1, prog.ONE)])
            else:
                terms = []
                for i, (prime, sub) in enumerate(n.elements):
                    a = n.offset + i if n.offset >= 0 else -1
                    terms.append((n.const, a, col[prime.id], col[sub.id]))
                col[n.id] = prog.add_node(terms)
        prog.finalize()
        self.program = prog
        self.col = col
        self.root_col = col[p.root.id]

    @staticmethod
    def term_indicators(num_vars: int, lits: Sequence[int]) -> np.ndarray:
        """Indicator row for a conjunction of signed 1-indexed literals."""
        row = np.ones(2 * num_vars)
        for lit in lits:
            var = abs(lit) - 1
            row[2 * var + (0 if lit > 0 else 1)] = 0.0
        return row

    def marginals(self, logits: np.ndarray, indicators: np.ndarray, with_grad=False):
        """Pr(evidence) per row; optionally the (value, dvalue/dlogits) pair."""
        p = self.psdd
        alpha = p.softmax(logits)
        V = self.program.forward(alpha, indicators)
        vals = V[self.root_col]
        if not with_grad:
            return vals
        return vals, alpha, V

    def marginal_grad(self, alpha, V, d_vals) -> np.ndarray:
        dV = np.zeros_like(V)
        dV[self.root_col] = d_vals
        d_alpha = self.program.backward(alpha, V, dV)
        return self.psdd.softmax_backward(alpha, d_alpha)

    def map_model(self, logits) -> tuple[tuple[int, ...], float]:
        p = self.psdd
        alpha = p.softmax(np.asarray(logits, dtype=np.float64))
        with np.errstate(divide="ignore"):
            log_alpha = np.maximum(np.log(alpha), LOG_FLOOR)
        L, choice = self.program.max_forward(log_alpha, np.zeros(2 * p.num_vars))
        model = [0] * p.num_vars
        stack = [p.root]
        col = self.col
        while stack:
            n = stack.pop()
            if n.kind == LIT:
                model[n.var] = int(n.sign)
            elif n.kind == LEAF:
                model[n.var] = int(choice[col[n.id]])
            else:
                prime, sub = n.elements[choice[col[n.id]]]
                stack.append(sub)
                stack.append(prime)
        return tuple(model), math.exp(L[self.root_col])


class CompiledQueries:
    """Pair-product programs for a fixed list of query SDDs, evaluated in batch.

    Used when the queries are not plain conjunctions of literals.
    """

    def __init__(self, p: Psdd, queries: Sequence[SddNode]):
        self.psdd = p
        vt = p.vtree
        prog = CircuitProgram(0, p.total_params)
        memo: dict[tuple[int, int], int] = {}

        def rec(n: PsddNode, qn: SddNode) -> int:
            if qn.kind == TRUE:
                return prog.ONE
            if qn.kind == FALSE:
                return prog.ZERO
            if n.kind == LIT:
                return prog.ONE if qn.lit == (n.var + 1 if n.sign else -(n.var + 1)) else prog.ZERO
            key = (n.id, qn.id)
            hit = memo.get(key)
            if hit is not None:
                return hit
            terms = []
            if n.kind == LEAF:
                i = 1 if qn.lit > 0 else 0
                terms.append((n.const, n.offset + i if n.offset >= 0 else -1, prog.ONE, prog.ONE))
            elif qn.vtree == n.vtree:
                for i, (prime, sub) in enumerate(n.elements):
                    for a, b in qn.elements:
                        ca, cb = rec(prime, a), rec(sub, b)
                        if ca != prog.ZERO and cb != prog.ZERO:
                            terms.append((n.const, n.offset + i if n.offset >= 0 else -1, ca, cb))
            else:
                left = vt.in_left(n.vtree, qn.vtree)
                for i, (prime, sub) in enumerate(n.elements):
                    c = rec(prime, qn) if left else rec(sub, qn)
                    if c != prog.ZERO:
                        terms.append((n.const, n.offset + i if n.offset >= 0 else -1, c, prog.ONE))
            out = prog.add_node(terms)
            memo[key] = out
            return out

        for q in queries:
            if q.manager is not p.manager:
                raise ContractError("queries must share the PSDD's SDD manager")
        self.roots = np.array([rec(p.root, q) for q in queries], dtype=np.int64)
        prog.finalize()
        self.program = prog

    def values(self, logits: np.ndarray, query_ids: np.ndarray, with_grad=False):
        alpha = self.psdd.softmax(logits)
        V = self.program.forward(alpha)
        vals = V[self.roots[query_ids], np.arange(V.shape[1])]
        if not with_grad:
            return vals
        return vals, alpha, V

    def grad(self, alpha, V, query_ids, d_vals) -> np.ndarray:
        dV = np.zeros_like(V)
        dV[self.roots[query_ids], np.arange(V.shape[1])] = d_vals
        d_alpha = self.program.backward(alpha, V, dV)
        return self.psdd.softmax_backward(alpha, d_alpha)

