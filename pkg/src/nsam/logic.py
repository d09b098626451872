"""Propositional language: literals, clauses, CNF formulas, DIMACS I/O.

Propositions are 0-indexed internally and 1-indexed in DIMACS text.  A model
is any sequence of 0/1 (or bools) whose length equals ``num_props``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

MAX_ENUM_PROPS = 22


class ContractError(ValueError):
    """A precondition of an API call was violated."""


class OracleScaleError(RuntimeError):
    """Brute-force enumeration refused because the formula is too large."""


class DimacsError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PropId:
    index: int
    display_name: str


@dataclass(frozen=True, order=True)
class Literal:
    prop: int
    polarity: bool = True

    def __neg__(self) -> Literal:
        return Literal(self.prop, not self.polarity)

    def to_dimacs(self) -> int:
        return self.prop + 1 if self.polarity else -(self.prop + 1)

    @classmethod
    def from_dimacs(cls, value: int) -> Literal:
        if value == 0:
            raise ValueError("0 is not a literal")
        return cls(abs(value) - 1, value > 0)

    def holds(self, m: Sequence) -> bool:
        return bool(m[self.prop]) == self.polarity


@dataclass(frozen=True)
class Clause:
    """Disjunction of literals.  Literal order is kept for exact DIMACS round trips."""

    literals: tuple[Literal, ...]

    def __post_init__(self):
        seen = {}
        for lit in self.literals:
            if seen.get(lit.prop, lit.polarity) != lit.polarity:
                raise ContractError(f"tautological clause on prop {lit.prop}")
            seen[lit.prop] = lit.polarity

    @classmethod
    def of(cls, *dimacs: int) -> Clause:
        return cls(tuple(Literal.from_dimacs(v) for v in dimacs))

    def __len__(self) -> int:
        return len(self.literals)

    def __iter__(self):
        return iter(self.literals)

    def holds(self, m: Sequence) -> bool:
        return any(lit.holds(m) for lit in self.literals)


@dataclass(frozen=True)
class CnfFormula:
    clauses: tuple[Clause, ...]
    num_props: int

    def __post_init__(self):
        if self.num_props < 0:
            raise ContractError("num_props must be non-negative")
        for c in self.clauses:
            for lit in c:
                if not 0 <= lit.prop < self.num_props:
                    raise ContractError(
                        f"literal on prop {lit.prop} outside catalog of {self.num_props}")

    @classmethod
    def from_lists(cls, clauses: Iterable[Iterable[int]], num_props: int) -> CnfFormula:
        """Build from DIMACS-style signed, 1-indexed integer lists."""
        return cls(tuple(Clause.of(*c) for c in clauses), num_props)

    def to_lists(self) -> list[list[int]]:
        return [[lit.to_dimacs() for lit in c] for c in self.clauses]

    def props(self) -> set[int]:
        return {lit.prop for c in self.clauses for lit in c}

    def conjoin(self, other: CnfFormula) -> CnfFormula:
        n = max(self.num_props, other.num_props)
        return CnfFormula(self.clauses + other.clauses, n)


def _check_model(f: CnfFormula, m: Sequence) -> None:
    if len(m) != f.num_props:
        raise ContractError(f"model has length {len(m)}, formula has {f.num_props} props")


def eval_cnf(f: CnfFormula, m: Sequence) -> bool:
    _check_model(f, m)
    return all(c.holds(m) for c in f.clauses)


def enumerate_models(f: CnfFormula) -> list[tuple[int, ...]]:
    """All satisfying assignments in lexicographic order (prop 0 most significant)."""
    if f.num_props > MAX_ENUM_PROPS:
        raise OracleScaleError(
            f"refusing to enumerate 2^{f.num_props} assignments (limit {MAX_ENUM_PROPS} props)")
    return [m for m in itertools.product((0, 1), repeat=f.num_props) if eval_cnf(f, m)]


def parse_dimacs(text: str) -> CnfFormula:
    num_props = num_clauses = None
    clauses: list[Clause] = []
    pending: list[int] = []
    pending_line = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if num_props is not None:
                raise DimacsError("duplicate header", lineno)
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"malformed header {line!r}", lineno)
            try:
                num_props, num_clauses = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(f"malformed header {line!r}", lineno) from None
            if num_props < 0 or num_clauses < 0:
                raise DimacsError("negative counts in header", lineno)
            continue
        if num_props is None:
            raise DimacsError("clause before 'p cnf' header", lineno)
        for tok in line.split():
            try:
                v = int(tok)
            except ValueError:
                raise DimacsError(f"bad token {tok!r}", lineno) from None
            if v == 0:
                try:
                    clauses.append(Clause(tuple(Literal.from_dimacs(x) for x in pending)))
                except ContractError as e:
                    raise DimacsError(str(e), lineno) from None
                pending = []
                pending_line = None
                continue
            if abs(v) > num_props:
                raise DimacsError(f"literal {v} exceeds declared count {num_props}", lineno)
            if pending_line is None:
                pending_line = lineno
            pending.append(v)
    if num_props is None:
        raise DimacsError("missing 'p cnf' header")
    if pending:
        raise DimacsError("clause missing 0 terminator", pending_line)
    if len(clauses) != num_clauses:
        raise DimacsError(f"header declares {num_clauses} clauses, found {len(clauses)}")
    return CnfFormula(tuple(clauses), num_props)


def emit_dimacs(f: CnfFormula, comments: Sequence[str] = ()) -> str:
    lines = [f"c {c}" for c in comments]
    lines.append(f"p cnf {f.num_props} {len(f.clauses)}")
    for c in f.clauses:
        lines.append(" ".join([str(lit.to_dimacs()) for lit in c] + ["0"]))
    return "\n".join(lines) + "\n"


@dataclass
class Catalog:
    """Proposition catalog: dense indices with unique display names."""

    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ContractError("display names must be unique")
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, i: int) -> PropId:
        return PropId(i, self.names[i])

    def __iter__(self):
        return (PropId(i, n) for i, n in enumerate(self.names))

    def index(self, name: str) -> int:
        return self._index[name]

    def dumps(self) -> str:
        return "".join(f"{i}\t{n}\n" for i, n in enumerate(self.names))

    @classmethod
    def loads(cls, text: str) -> Catalog:
        names = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            idx, _, name = line.partition("\t")
            if int(idx) != len(names):
                raise ValueError(f"line {lineno}: catalog indices must be dense, got {idx}")
            names.append(name)
        return cls(names)
