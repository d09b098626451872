"""Constraint MDPs: Sudoku, N-Queens and graph coloring.

Each environment carries a ``DomainSpec``: the proposition catalog, the domain
constraint ``phi`` and one CNF precondition per action.  Observations are the
one-hot vector of the ground model; the model itself is only used for labels
and oracles.

Labels follow the minimal-supervision rule: ``y = 1`` iff neither the state
before nor after the transition violates ``phi``.  Sudoku additionally treats
writing into a filled cell as a rule violation, since the proposition encoding
cannot express overwriting and the fill precondition requires an empty cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .logic import Catalog, Clause, CnfFormula, ContractError, Literal, emit_dimacs, eval_cnf


@dataclass(frozen=True)
class ActionSpec:
    id: int
    name: str
    precondition: CnfFormula

    def is_term(self) -> bool:
        return all(len(c) == 1 for c in self.precondition.clauses)

    def term_literals(self) -> list[int]:
        if not self.is_term():
            raise ContractError(f"precondition of {self.name} is not a conjunction of literals")
        return [c.literals[0].to_dimacs() for c in self.precondition.clauses]


@dataclass(frozen=True)
class DomainSpec:
    catalog: Catalog
    phi: CnfFormula
    actions: tuple[ActionSpec, ...]
    name: str = ""

    def __post_init__(self):
        K = len(self.catalog)
        if self.phi.num_props != K:
            raise ContractError("phi must range over the catalog")
        for i, a in enumerate(self.actions):
            if a.id != i:
                raise ContractError("action ids must be dense and ordered")
            if a.precondition.num_props != K:
                raise ContractError(f"precondition of {a.name} must range over the catalog")

    @property
    def num_props(self) -> int:
        return len(self.catalog)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def preconditions_hold(self, m: Sequence) -> np.ndarray:
        return np.array([eval_cnf(a.precondition, m) for a in self.actions], dtype=bool)


def write_spec_files(spec: DomainSpec, out_dir: str | Path) -> list[Path]:
    """Export phi, each precondition and the catalog for offline inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "phi.cnf", out / "catalog.txt"]
    paths[0].write_text(emit_dimacs(spec.phi, comments=[f"domain constraint: {spec.name}"]))
    paths[1].write_text(spec.catalog.dumps())
    width = len(str(max(spec.num_actions - 1, 0)))
    for a in spec.actions:
        p = out / f"pre_{a.id:0{width}d}.cnf"
        p.write_text(emit_dimacs(a.precondition, comments=[a.name]))
        paths.append(p)
    return paths


def _neg(prop: int) -> Clause:
    return Clause((Literal(prop, False),))


def _at_most_one(props: Sequence[int]) -> list[Clause]:
    return [Clause((Literal(a, False), Literal(b, False))) for a, b in itertools.combinations(props, 2)]


# -- specs -----------------------------------------------------------------


def sudoku_prop(n: int, i: int, j: int, k: int) -> int:
    """0-indexed row, column, digit; cell-major with digits contiguous."""
    return (i * n + j) * n + k


def sudoku_spec(n: int) -> DomainSpec:
    if n < 1:
        raise ContractError("board side must be positive")
    K = n ** 3
    names = [f"cell({i + 1},{j + 1})={k + 1}" for i in range(n) for j in range(n) for k in range(n)]
    P = lambda i, j, k: sudoku_prop(n, i, j, k)  # noqa: E731
    clauses: list[Clause] = []
    for i, j in itertools.product(range(n), repeat=2):
        clauses += _at_most_one([P(i, j, k) for k in range(n)])
    for i, k in itertools.product(range(n), repeat=2):
        clauses += _at_most_one([P(i, j, k) for j in range(n)])
    for j, k in itertools.product(range(n), repeat=2):
        clauses += _at_most_one([P(i, j, k) for i in range(n)])
    actions = []
    for i, j, k in itertools.product(range(n), repeat=3):
        pre = [P(i, j, kk) for kk in range(n)]
        pre += [P(ii, j, k) for ii in range(n) if ii != i]
        pre += [P(i, jj, k) for jj in range(n) if jj != j]
        actions.append(ActionSpec(len(actions), f"fill({i + 1},{j + 1},{k + 1})",
                                  CnfFormula(tuple(_neg(p) for p in pre), K)))
    return DomainSpec(Catalog(names), CnfFormula(tuple(clauses), K), tuple(actions), f"sudoku{n}")


def _current_slot_guard(slot_vars: Sequence[Sequence[int]], slot: int, forbidden: Sequence[int],
                        K: int) -> list[Clause]:
    """Clauses saying: if ``slot`` is the next slot to fill, every ``forbidden`` prop is false.

    Slots fill in order, so ``slot`` is current iff slot-1 is filled and slot is
    empty.  Slot 0 is current iff nothing is filled yet, in which case every
    forbidden prop already lies in an empty later slot, so nothing is added.
    """
    if slot == 0:
        return []
    out = []
    here = [Literal(p, True) for p in slot_vars[slot]]
    for f in forbidden:
        for prev in slot_vars[slot - 1]:
            out.append(Clause((Literal(f, False), Literal(prev, False), *here)))
    return out


def nqueens_spec(N: int) -> DomainSpec:
    if N < 1:
        raise ContractError("board side must be positive")
    K = N * N
    Q = lambda r, c: r * N + c  # noqa: E731
    names = [f"queen({r + 1},{c + 1})" for r in range(N) for c in range(N)]
    clauses: list[Clause] = []
    for r in range(N):
        clauses += _at_most_one([Q(r, c) for c in range(N)])
    for (r1, c1), (r2, c2) in itertools.combinations(itertools.product(range(N), repeat=2), 2):
        if r1 != r2 and (c1 == c2 or abs(r1 - r2) == abs(c1 - c2)):
            clauses.append(Clause((Literal(Q(r1, c1), False), Literal(Q(r2, c2), False))))
    rows = [[Q(r, c) for c in range(N)] for r in range(N)]
    actions = []
    for c in range(N):
        pre: list[Clause] = []
        for r in range(N):
            attackers = [Q(rr, cc) for rr in range(r) for cc in range(N)
                         if cc == c or abs(r - rr) == abs(c - cc)]
            pre += _current_slot_guard(rows, r, attackers, K)
        actions.append(ActionSpec(c, f"place({c + 1})", CnfFormula(tuple(pre), K)))
    return DomainSpec(Catalog(names), CnfFormula(tuple(clauses), K), tuple(actions), f"nqueens{N}")


def graph_coloring_spec(adjacency: Sequence[Sequence[int]], colors: int) -> DomainSpec:
    V = len(adjacency)
    if V < 1 or colors < 1:
        raise ContractError("need at least one node and one color")
    for v, nbrs in enumerate(adjacency):
        for u in nbrs:
            if u == v or v not in adjacency[u]:
                raise ContractError(f"adjacency must be symmetric without self loops (node {v})")
    K = V * colors
    X = lambda v, c: v * colors + c  # noqa: E731
    names = [f"color({v + 1})={c + 1}" for v in range(V) for c in range(colors)]
    clauses: list[Clause] = []
    for v in range(V):
        clauses += _at_most_one([X(v, c) for c in range(colors)])
    for v in range(V):
        for u in sorted(adjacency[v]):
            if u > v:
                for c in range(colors):
                    clauses.append(Clause((Literal(X(v, c), False), Literal(X(u, c), False))))
    slots = [[X(v, c) for c in range(colors)] for v in range(V)]
    actions = []
    for c in range(colors):
        pre: list[Clause] = []
        for v in range(V):
            pre += _current_slot_guard(slots, v, [X(u, c) for u in sorted(adjacency[v]) if u < v], K)
        actions.append(ActionSpec(c, f"color({c + 1})", CnfFormula(tuple(pre), K)))
    return DomainSpec(Catalog(names), CnfFormula(tuple(clauses), K), tuple(actions), f"coloring{V}x{colors}")


# -- state plumbing ------------------------------------------------------------


def encode_state(model: Sequence) -> np.ndarray:
    return np.asarray(model, dtype=np.float64)


def decode_state(obs: np.ndarray) -> tuple[int, ...]:
    obs = np.asarray(obs)
    if not np.all((obs == 0) | (obs == 1)):
        raise ContractError("observation is not a 0/1 vector")
    return tuple(int(x) for x in obs)


@dataclass(frozen=True)
class EnvState:
    observation: np.ndarray
    ground_model: tuple[int, ...] = field(repr=False)


@dataclass(frozen=True)
class Transition:
    s: EnvState
    a: int
    s_next: EnvState
    r: float
    y: int
    done: bool
    dead_end: bool = False
    success: bool = False
    truncated: bool = False


@dataclass(frozen=True)
class RewardSchedule:
    place: float = 0.1
    complete: float = 1.0
    violation: float = -1.0


class ConstraintEnv:
    """Shared episode logic; subclasses supply the action effect and the rule oracle."""

    def __init__(self, spec: DomainSpec, rewards: RewardSchedule, max_steps: int | None = None):
        self.spec = spec
        self.rewards = rewards
        self.max_steps = max_steps if max_steps is not None else 4 * spec.num_actions
        self._model: list[int] = [0] * spec.num_props
        self.done = True
        self.steps = 0

    @property
    def num_actions(self) -> int:
        return self.spec.num_actions

    @property
    def obs_dim(self) -> int:
        return self.spec.num_props

    @property
    def ground_model(self) -> tuple[int, ...]:
        return tuple(self._model)

    @property
    def observation(self) -> np.ndarray:
        return encode_state(self._model)

    def state(self) -> EnvState:
        return EnvState(self.observation, self.ground_model)

    def initial_model(self, rng: np.random.Generator) -> list[int]:
        return [0] * self.spec.num_props

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        return self.reset_to(self.initial_model(rng))

    def reset_to(self, model: Sequence[int]) -> np.ndarray:
        if len(model) != self.spec.num_props:
            raise ContractError("model length does not match the catalog")
        self._model = [int(x) for x in model]
        self.steps = 0
        self.done = self.is_complete(self._model)
        return self.observation

    # subclass hooks
    def rule_explorable(self) -> np.ndarray:
        """Ground-truth explorable actions, computed from the game rules (not from CNF)."""
        raise NotImplementedError

    def effect(self, a: int) -> list[int]:
        raise NotImplementedError

    def is_complete(self, model: Sequence[int]) -> bool:
        raise NotImplementedError

    def illegal_write(self, a: int) -> bool:
        return False

    def step(self, a: int) -> Transition:
        if self.done:
            raise ContractError("step() called after the episode ended; call reset()")
        if not 0 <= a < self.num_actions:
            raise ContractError(f"action {a} out of range")
        before = self.state()
        after_model = self.effect(a)
        ok_before = eval_cnf(self.spec.phi, before.ground_model)
        ok_after = eval_cnf(self.spec.phi, after_model) and not self.illegal_write(a)
        y = int(ok_before and ok_after)
        self._model = after_model
        self.steps += 1
        dead_end = success = truncated = False
        if not y:
            r, done = self.rewards.violation, True
        else:
            r, done = self.rewards.place, False
            if self.is_complete(after_model):
                r += self.rewards.complete
                done = success = True
            elif not self.rule_explorable().any():
                done = dead_end = True
        if not done and self.steps >= self.max_steps:
            done = truncated = True
        self.done = done
        return Transition(before, a, self.state(), r, y, done, dead_end, success, truncated)


# -- Sudoku ---------------------------------------------------------------------

SUDOKU_GIVENS = {1: 0, 2: 1, 3: 3, 4: 5, 5: 8}


def random_latin_square(n: int, rng: np.random.Generator) -> np.ndarray:
    """Cyclic square with rows, columns and symbols independently permuted."""
    base = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return rng.permutation(n)[base[rng.permutation(n)][:, rng.permutation(n)]]


def solve_latin(board: np.ndarray) -> np.ndarray | None:
    """Backtracking completion of a partial board (-1 = empty) under row/column rules."""
    n = board.shape[0]
    grid = board.copy()
    empties = [(i, j) for i in range(n) for j in range(n) if grid[i, j] < 0]

    def ok(i, j, k):
        return k not in grid[i] and k not in grid[:, j]

    def rec(t):
        if t == len(empties):
            return True
        i, j = empties[t]
        for k in range(n):
            if ok(i, j, k):
                grid[i, j] = k
                if rec(t + 1):
                    return True
                grid[i, j] = -1
        return False

    return grid if rec(0) else None


class SudokuEnv(ConstraintEnv):
    def __init__(self, n: int, givens: int | None = None, rewards: RewardSchedule | None = None,
                 max_steps: int | None = None):
        super().__init__(sudoku_spec(n), rewards or RewardSchedule(), max_steps)
        self.n = n
        self.givens = SUDOKU_GIVENS.get(n, n) if givens is None else givens
        if not 0 <= self.givens <= n * n:
            raise ContractError("givens must lie in [0, n*n]")

    def board(self, model: Sequence[int] | None = None) -> np.ndarray:
        m = self._model if model is None else model
        n = self.n
        grid = -np.ones((n, n), dtype=np.int64)
        for i, j, k in itertools.product(range(n), repeat=3):
            if m[sudoku_prop(n, i, j, k)]:
                grid[i, j] = k
        return grid

    def model_of(self, board: np.ndarray) -> list[int]:
        m = [0] * self.spec.num_props
        for (i, j), k in np.ndenumerate(board):
            if k >= 0:
                m[sudoku_prop(self.n, i, j, int(k))] = 1
        return m

    def initial_model(self, rng):
        n = self.n
        solution = random_latin_square(n, rng)
        board = -np.ones((n, n), dtype=np.int64)
        for cell in rng.choice(n * n, size=self.givens, replace=False):
            i, j = divmod(int(cell), n)
            board[i, j] = solution[i, j]
        if solve_latin(board) is None:
            raise AssertionError("generated board is unsolvable")
        return self.model_of(board)

    def decode_action(self, a: int) -> tuple[int, int, int]:
        cell, k = divmod(a, self.n)
        i, j = divmod(cell, self.n)
        return i, j, k

    def filled(self, i: int, j: int) -> bool:
        base = sudoku_prop(self.n, i, j, 0)
        return any(self._model[base:base + self.n])

    def rule_explorable(self) -> np.ndarray:
        grid = self.board()
        out = np.zeros(self.num_actions, dtype=bool)
        for a in range(self.num_actions):
            i, j, k = self.decode_action(a)
            out[a] = grid[i, j] < 0 and k not in grid[i] and k not in grid[:, j]
        return out

    def illegal_write(self, a: int) -> bool:
        i, j, _ = self.decode_action(a)
        return self.filled(i, j)

    def effect(self, a):
        m = list(self._model)
        m[a] = 1  # action ids coincide with proposition indices
        return m

    def is_complete(self, model):
        n = self.n
        return all(any(model[sudoku_prop(n, i, j, k)] for k in range(n))
                   for i in range(n) for j in range(n))


# -- N-Queens -------------------------------------------------------------------


class NQueensEnv(ConstraintEnv):
    def __init__(self, N: int, rewards: RewardSchedule | None = None, max_steps: int | None = None):
        super().__init__(nqueens_spec(N), rewards or RewardSchedule(place=0.0), max_steps)
        self.N = N

    def queens(self, model=None) -> list[int]:
        """Column of the queen in each filled row, in row order."""
        m = self._model if model is None else model
        cols = []
        for r in range(self.N):
            row = [c for c in range(self.N) if m[r * self.N + c]]
            if not row:
                break
            cols.append(row[0])
        return cols

    def rule_explorable(self) -> np.ndarray:
        placed = self.queens()
        r = len(placed)
        if r >= self.N:
            return np.zeros(self.N, dtype=bool)
        return np.array([all(c != pc and abs(r - pr) != abs(c - pc) for pr, pc in enumerate(placed))
                         for c in range(self.N)], dtype=bool)

    def effect(self, a):
        m = list(self._model)
        m[len(self.queens()) * self.N + a] = 1
        return m

    def is_complete(self, model):
        return len(self.queens(model)) == self.N


def nqueens_solutions(N: int) -> list[tuple[int, ...]]:
    """All solutions by backtracking, as column tuples."""
    out = []

    def rec(cols):
        r = len(cols)
        if r == N:
            out.append(tuple(cols))
            return
        for c in range(N):
            if all(c != pc and abs(r - pr) != abs(c - pc) for pr, pc in enumerate(cols)):
                rec(cols + [c])

    rec([])
    return out


# -- graph coloring ---------------------------------------------------------------


class GraphColoringEnv(ConstraintEnv):
    def __init__(self, adjacency: Sequence[Sequence[int]], colors: int,
                 rewards: RewardSchedule | None = None, max_steps: int | None = None):
        super().__init__(graph_coloring_spec(adjacency, colors),
                         rewards or RewardSchedule(place=0.0), max_steps)
        self.adjacency = [sorted(n) for n in adjacency]
        self.colors = colors

    def coloring(self, model=None) -> list[int]:
        m = self._model if model is None else model
        out = []
        for v in range(len(self.adjacency)):
            cs = [c for c in range(self.colors) if m[v * self.colors + c]]
            if not cs:
                break
            out.append(cs[0])
        return out

    def rule_explorable(self) -> np.ndarray:
        col = self.coloring()
        v = len(col)
        if v >= len(self.adjacency):
            return np.zeros(self.colors, dtype=bool)
        used = {col[u] for u in self.adjacency[v] if u < v}
        return np.array([c not in used for c in range(self.colors)], dtype=bool)

    def effect(self, a):
        m = list(self._model)
        m[len(self.coloring()) * self.colors + a] = 1
        return m

    def is_complete(self, model):
        return len(self.coloring(model)) == len(self.adjacency)


def random_graph(num_nodes: int, density: float, rng: np.random.Generator) -> list[list[int]]:
    adj: list[set[int]] = [set() for _ in range(num_nodes)]
    for u, v in itertools.combinations(range(num_nodes), 2):
        if rng.random() < density:
            adj[u].add(v)
            adj[v].add(u)
    return [sorted(a) for a in adj]


def chromatic_number(adjacency: Sequence[Sequence[int]]) -> int:
    V = len(adjacency)
    for C in range(1, V + 1):
        col = [-1] * V

        def rec(v):
            if v == V:
                return True
            for c in range(C):
                if all(col[u] != c for u in adjacency[v] if u < v):
                    col[v] = c
                    if rec(v + 1):
                        return True
            col[v] = -1
            return False

        if rec(0):
            return C
    return V


# (nodes, edge density, seed) for the four shipped instances
GRAPH_INSTANCES = {"G1": (8, 0.3, 11), "G2": (10, 0.4, 12), "G3": (12, 0.4, 13), "G4": (14, 0.3, 15)}


def generate_graph_instance(name: str) -> tuple[list[list[int]], int]:
    """Regenerates a shipped instance from its seed; colors = chromatic number."""
    nodes, density, seed = GRAPH_INSTANCES[name]
    adj = random_graph(nodes, density, np.random.default_rng(seed))
    return adj, chromatic_number(adj)


def graph_instance(name: str) -> tuple[list[list[int]], int]:
    """Loads a shipped instance (``G1``..``G4``) from the package's edge-list files."""
    if name not in GRAPH_INSTANCES:
        raise ContractError(f"unknown graph instance {name!r}; choose from {sorted(GRAPH_INSTANCES)}")
    text = resources.files("nsam").joinpath("graphs").joinpath(f"{name}.edges").read_text()
    return parse_edge_list(text)


def emit_edge_list(adjacency: Sequence[Sequence[int]], colors: int) -> str:
    edges = [(u, v) for u in range(len(adjacency)) for v in adjacency[u] if u < v]
    lines = [f"graph {len(adjacency)} {len(edges)} colors {colors}"]
    lines += [f"{u} {v}" for u, v in edges]
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str) -> tuple[list[list[int]], int]:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0][0] != "graph" or len(lines[0]) != 5:
        raise ContractError("edge list must start with 'graph <nodes> <edges> colors <C>'")
    nodes, num_edges, colors = int(lines[0][1]), int(lines[0][2]), int(lines[0][4])
    adj: list[set[int]] = [set() for _ in range(nodes)]
    for parts in lines[1:]:
        u, v = int(parts[0]), int(parts[1])
        if not (0 <= u < nodes and 0 <= v < nodes) or u == v:
            raise ContractError(f"bad edge {u} {v}")
        adj[u].add(v)
        adj[v].add(u)
    if len(lines) - 1 != num_edges:
        raise ContractError(f"header declares {num_edges} edges, found {len(lines) - 1}")
    return [sorted(a) for a in adj], colors


# -- exhaustive exploration -------------------------------------------------------


def reachable_states(env: ConstraintEnv, start: Sequence[int] | None = None) -> list[tuple[int, ...]]:
    """Every non-terminal state reachable by non-violating moves, by breadth-first search."""
    start = tuple(start) if start is not None else tuple([0] * env.spec.num_props)
    seen = {start}
    frontier = [start]
    out = []
    while frontier:
        nxt = []
        for m in frontier:
            env.reset_to(m)
            if env.done:
                continue
            out.append(m)
            for a in np.flatnonzero(env.rule_explorable()):
                env.reset_to(m)
                t = env.step(int(a))
                child = t.s_next.ground_model
                if t.y and child not in seen:
                    seen.add(child)
                    nxt.append(child)
        frontier = nxt
    return out


def make_env(name: str, size: int | str, **kw) -> ConstraintEnv:
    """``sudoku``/``nqueens`` take an integer size; ``coloring`` takes G1..G4 or an edge-list path."""
    if name == "sudoku":
        return SudokuEnv(int(size), **kw)
    if name == "nqueens":
        return NQueensEnv(int(size), **kw)
    if name == "coloring":
        if str(size) in GRAPH_INSTANCES:
            adj, colors = graph_instance(str(size))
        else:
            adj, colors = parse_edge_list(Path(str(size)).read_text())
        return GraphColoringEnv(adj, colors, **kw)
    raise ContractError(f"unknown environment {name!r}")

