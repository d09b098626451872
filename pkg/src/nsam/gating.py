"""Gating network: states to PSDD logits, trained by cross-entropy on explorability labels.

``P_hat(a | s)`` is the PSDD marginal of the precondition of ``a`` under the
parameters ``g(s)``.  The loss is the mean binary cross-entropy of ``P_hat``
against the transition labels, with ``P_hat`` clamped to ``[1e-7, 1 - 1e-7]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .logic import ContractError
from .nn import AdamState, Mlp, all_finite
from .psdd import CompiledPsdd, CompiledQueries, Psdd, prob_query
from .sdd import DECISION, FALSE, LITERAL, TRUE, SddNode

P_CLAMP = 1e-7


class GatingError(RuntimeError):
    """Training produced non-finite values; parameters were left untouched."""


@dataclass(frozen=True)
class GatingConfig:
    hidden: tuple[int, ...] = (128, 128, 128)
    lr: float = 2e-4
    batch_size: int = 128
    seed: int = 0


@dataclass
class SupervisedBatch:
    states: np.ndarray
    actions: np.ndarray  # precondition references, as action ids
    labels: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        n = len(self.states)
        if n == 0:
            raise ContractError("batch must be nonempty")
        if len(self.actions) != n or len(self.labels) != n:
            raise ContractError("states, actions and labels must have equal length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ContractError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.states)


def term_of(q: SddNode) -> list[int] | None:
    """Literals of ``q`` when it is a conjunction of literals, else None."""
    def rec(n):
        if n.kind == TRUE:
            return []
        if n.kind == LITERAL:
            return [n.lit]
        if n.kind != DECISION:
            return None
        live = [(p, s) for p, s in n.elements if s.kind != FALSE]
        if len(live) != 1:
            return None
        left, right = rec(live[0][0]), rec(live[0][1])
        return None if left is None or right is None else left + right

    if q.kind == FALSE:
        return None
    lits = rec(q)
    # canonicity makes this check exact: q is a term iff it is the node for its literals
    if lits is None or q.manager.term(lits) is not q:
        return None
    return lits


class PreconditionQueries:
    """Batched ``Pr(precondition_a | logits)`` with a vector-Jacobian product.

    ``mode``: ``evidence`` (all preconditions are terms: one indicator pass over
    the PSDD), ``pair`` (compiled PSDD x query pair programs), ``reference``
    (one recursive ``prob_query`` per sample), or ``auto``.
    """

    def __init__(self, psdd: Psdd, preconditions: Sequence[SddNode], mode: str = "auto"):
        self.psdd = psdd
        self.preconditions = list(preconditions)
        for q in self.preconditions:
            if q.manager is not psdd.manager:
                raise ContractError("preconditions must be compiled on the PSDD's vtree")
        terms = [term_of(q) for q in self.preconditions]
        if mode == "auto":
            mode = "evidence" if all(t is not None for t in terms) else "pair"
        if mode == "evidence":
            if any(t is None for t in terms):
                raise ContractError("evidence mode needs every precondition to be a term")
            self._compiled = CompiledPsdd(psdd)
            self._indicators = np.stack(
                [CompiledPsdd.term_indicators(psdd.num_vars, t) for t in terms])
        elif mode == "pair":
            self._compiled = CompiledQueries(psdd, self.preconditions)
        elif mode != "reference":
            raise ContractError(f"unknown query mode {mode!r}")
        self.mode = mode

    def values(self, logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.values_and_vjp(logits, actions, need_grad=False)[0]

    def values_and_vjp(self, logits: np.ndarray, actions: np.ndarray, need_grad: bool = True
                       ) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray] | None]:
        logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64)
        if self.mode == "reference":
            results = [prob_query(self.psdd, th, self.preconditions[a], with_grad=need_grad)
                       for th, a in zip(logits, actions)]
            vals = np.array([r.value for r in results])
            if not need_grad:
                return vals, None
            G = np.stack([r.grad for r in results]) if results else np.zeros_like(logits)
            return vals, lambda d: d[:, None] * G
        if self.mode == "evidence":
            cp: CompiledPsdd = self._compiled
            if not need_grad:
                return cp.marginals(logits, self._indicators[actions]), None
            vals, alpha, V = cp.marginals(logits, self._indicators[actions], with_grad=True)
            return vals, lambda d: cp.marginal_grad(alpha, V, d)
        cq: CompiledQueries = self._compiled
        if not need_grad:
            return cq.values(logits, actions), None
        vals, alpha, V = cq.values(logits, actions, with_grad=True)
        return vals, lambda d: cq.grad(alpha, V, actions, d)


def make_gating_net(num_inputs: int, psdd: Psdd, cfg: GatingConfig,
                    rng: np.random.Generator | None = None) -> Mlp:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return Mlp([num_inputs, *cfg.hidden, max(psdd.total_params, 1)], "relu", rng)


def forward(net: Mlp, psdd: Psdd, s: np.ndarray) -> np.ndarray:
    """Logits ``Theta = g(s)`` for one state or a batch."""
    out = net.forward(s)
    return out[..., :psdd.total_params]


def cross_entropy(p_hat: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE and its derivative w.r.t. ``p_hat`` (zero where the clamp is active)."""
    p = np.clip(p_hat, P_CLAMP, 1.0 - P_CLAMP)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    d = (-(y / p) + (1.0 - y) / (1.0 - p)) / len(p)
    d = np.where((p_hat < P_CLAMP) | (p_hat > 1.0 - P_CLAMP), 0.0, d)
    return loss, d


def loss_and_grad(net: Mlp, queries: PreconditionQueries, batch: SupervisedBatch):
    """Returns ``(loss, grads, p_hat)`` with grads in ``net.params`` order."""
    psdd = queries.psdd
    out, cache = net.forward(batch.states, keep=True)
    logits = out[:, :psdd.total_params]
    p_hat, vjp = queries.values_and_vjp(logits, batch.actions)
    loss, d_p = cross_entropy(p_hat, batch.labels)
    d_out = np.zeros_like(out)
    d_out[:, :psdd.total_params] = vjp(d_p)
    return loss, net.backward(cache, d_out), p_hat


def train_step(net: Mlp, queries: PreconditionQueries, batch: SupervisedBatch, opt: AdamState) -> float:
    loss, grads, p_hat = loss_and_grad(net, queries, batch)
    if not (np.isfinite(loss) and all_finite(grads)):
        bad = [i for i, g in enumerate(grads) if not np.all(np.isfinite(g))]
        raise GatingError(f"non-finite gating gradient (loss={loss}, bad param arrays={bad}, "
                          f"finite p_hat {int(np.isfinite(p_hat).sum())}/{p_hat.size})")
    opt.apply(net.params, grads)
    return loss
