"""Variable trees.

Node ids follow in-order position, so the subtree of a node ``v`` is the
contiguous id interval ``[first[v], last[v]]``; its left subtree holds the ids
below ``v`` and its right subtree the ids above it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class VtreeError(ValueError):
    pass


@dataclass(frozen=True)
class VtreeNode:
    id: int
    var: int | None = None
    left: int | None = None
    right: int | None = None
    parent: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.var is not None


class Vtree:
    def __init__(self, nodes: Sequence[VtreeNode], root: int):
        self.nodes = tuple(nodes)
        self.root = root
        n = len(self.nodes)
        self.first = [0] * n
        self.last = [0] * n
        self.var_count = [0] * n
        self.leaf_of: dict[int, int] = {}
        self._vars: list[frozenset[int] | None] = [None] * n
        self._index()

    def _index(self) -> None:
        for node in self.postorder():
            if node.is_leaf:
                if node.var in self.leaf_of:
                    raise VtreeError(f"variable {node.var} appears twice")
                self.leaf_of[node.var] = node.id
                self.first[node.id] = self.last[node.id] = node.id
                self.var_count[node.id] = 1
            else:
                self.first[node.id] = self.first[node.left]
                self.last[node.id] = self.last[node.right]
                self.var_count[node.id] = self.var_count[node.left] + self.var_count[node.right]
        if self.first[self.root] != 0 or self.last[self.root] != len(self.nodes) - 1:
            raise VtreeError("node ids are not in-order positions")
        for node in self.nodes:
            if not node.is_leaf and not (
                    self.last[node.left] == node.id - 1 and self.first[node.right] == node.id + 1):
                raise VtreeError(f"node {node.id} is not numbered in-order")

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, i: int) -> VtreeNode:
        return self.nodes[i]

    @property
    def num_vars(self) -> int:
        return self.var_count[self.root]

    def postorder(self):
        out = []
        stack = [(self.root, False)]
        while stack:
            i, expanded = stack.pop()
            node = self.nodes[i]
            if node.is_leaf or expanded:
                out.append(node)
            else:
                stack.append((i, True))
                stack.append((node.right, False))
                stack.append((node.left, False))
        return out

    def variables(self, v: int) -> frozenset[int]:
        cached = self._vars[v]
        if cached is None:
            node = self.nodes[v]
            if node.is_leaf:
                cached = frozenset([node.var])
            else:
                cached = self.variables(node.left) | self.variables(node.right)
            self._vars[v] = cached
        return cached

    def contains(self, v: int, w: int) -> bool:
        """True if ``w`` lies in the subtree rooted at ``v`` (``v`` itself included)."""
        return self.first[v] <= w <= self.last[v]

    def in_left(self, v: int, w: int) -> bool:
        return self.first[v] <= w < v

    def in_right(self, v: int, w: int) -> bool:
        return v < w <= self.last[v]

    def lca(self, a: int, b: int) -> int:
        v = self.root
        while True:
            node = self.nodes[v]
            if node.is_leaf:
                return v
            lo, hi = min(a, b), max(a, b)
            if hi < v:
                v = node.left
            elif lo > v:
                v = node.right
            else:
                return v

    def leaf_order(self) -> list[int]:
        return [n.var for n in self.nodes if n.is_leaf]

    def shape(self):
        """Nested tuples of variables, handy for tests: ``((0, 1), 2)``."""
        def rec(i):
            node = self.nodes[i]
            return node.var if node.is_leaf else (rec(node.left), rec(node.right))
        return rec(self.root)


def _check_order(order: Sequence[int]) -> None:
    if len(order) == 0:
        raise VtreeError("empty variable order")
    if len(set(order)) != len(order):
        raise VtreeError("variable order contains duplicates")
    if sorted(order) != list(range(len(order))):
        raise VtreeError("variable order must be a permutation of 0..K-1")


def _from_shape(shape) -> Vtree:
    """Assign in-order ids to a nested-tuple shape."""
    nodes: dict[int, dict] = {}
    counter = [0]

    def rec(s, parent_slot):
        if isinstance(s, tuple):
            left = rec(s[0], None)
            me = counter[0]
            counter[0] += 1
            right = rec(s[1], None)
            nodes[me] = dict(id=me, left=left, right=right)
            nodes[left]["parent"] = me
            nodes[right]["parent"] = me
            return me
        me = counter[0]
        counter[0] += 1
        nodes[me] = dict(id=me, var=s)
        return me

    root = rec(shape, None)
    return Vtree([VtreeNode(**nodes[i]) for i in range(len(nodes))], root)


def build_balanced(order: Sequence[int]) -> Vtree:
    _check_order(order)

    def split(seq):
        if len(seq) == 1:
            return seq[0]
        mid = (len(seq) + 1) // 2
        return (split(seq[:mid]), split(seq[mid:]))

    return _from_shape(split(list(order)))


def build_right_linear(order: Sequence[int]) -> Vtree:
    _check_order(order)
    shape = order[-1]
    for v in reversed(order[:-1]):
        shape = (v, shape)
    return _from_shape(shape)


def emit_vtree(vt: Vtree) -> str:
    lines = [f"vtree {len(vt)}"]
    for node in vt.postorder():
        if node.is_leaf:
            lines.append(f"L {node.id} {node.var + 1}")
        else:
            lines.append(f"I {node.id} {node.left} {node.right}")
    return "\n".join(lines) + "\n"


def parse_vtree(text: str) -> Vtree:
    count = None
    raw: dict[int, dict] = {}
    last_id = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0] == "c":
            continue
        try:
            if parts[0] == "vtree":
                count = int(parts[1])
            elif parts[0] == "L":
                if len(parts) != 3:
                    raise VtreeError(f"line {lineno}: leaf lines take 2 fields")
                i, var = int(parts[1]), int(parts[2])
                if i in raw:
                    raise VtreeError(f"line {lineno}: duplicate node id {i}")
                raw[i] = dict(id=i, var=var - 1)
                last_id = i
            elif parts[0] == "I":
                if len(parts) != 4:
                    raise VtreeError(f"line {lineno}: internal nodes must have exactly two children")
                i, left, right = (int(x) for x in parts[1:])
                if i in raw:
                    raise VtreeError(f"line {lineno}: duplicate node id {i}")
                for child in (left, right):
                    if child not in raw:
                        raise VtreeError(f"line {lineno}: dangling child id {child}")
                    if "parent" in raw[child]:
                        raise VtreeError(f"line {lineno}: node {child} has two parents")
                    raw[child]["parent"] = i
                raw[i] = dict(id=i, left=left, right=right)
                last_id = i
            else:
                raise VtreeError(f"line {lineno}: unknown record {parts[0]!r}")
        except ValueError as e:
            if isinstance(e, VtreeError):
                raise
            raise VtreeError(f"line {lineno}: {e}") from None
    if count is None:
        raise VtreeError("missing 'vtree' header")
    if len(raw) != count:
        raise VtreeError(f"header declares {count} nodes, found {len(raw)}")
    if sorted(raw) != list(range(count)):
        raise VtreeError("node ids must be 0..count-1")
    roots = [i for i, d in raw.items() if "parent" not in d]
    if len(roots) != 1 or roots[0] != last_id:
        raise VtreeError("vtree must have a single root, listed last")
    vt = Vtree([VtreeNode(**raw[i]) for i in range(count)], roots[0])
    if sorted(vt.leaf_of) != list(range(len(vt.leaf_of))):
        raise VtreeError("leaf variables must be 1..K")
    return vt
