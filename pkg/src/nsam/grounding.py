"""Grounding backends that turn an observation into an action mask.

``psdd``: MAP model of the gated PSDD, then precondition evaluation.
``mlp_ablation``: a per-action sigmoid head thresholded at 1/2.
``none``: every action allowed (plain PPO).
"""

from __future__ import annotations

import numpy as np

from .envs import DomainSpec
from .gating import (GatingConfig, GatingError, PreconditionQueries, SupervisedBatch,
                     cross_entropy, make_gating_net, train_step)
from .logic import ContractError
from .nn import AdamState, Mlp, all_finite
from .psdd import CompiledPsdd, attach_params
from .ppo import build_mask
from .sdd import FALSE, SddManager, compile_cnf
from .vtree import Vtree, build_balanced, build_right_linear

BACKENDS = ("psdd", "mlp_ablation", "none")


def build_vtree(num_props: int, kind: str) -> Vtree:
    order = list(range(num_props))
    if kind == "balanced":
        return build_balanced(order)
    if kind == "right-linear":
        return build_right_linear(order)
    raise ContractError(f"unknown vtree kind {kind!r}")


class CompiledDomain:
    """phi and every precondition compiled in one SDD manager."""

    def __init__(self, spec: DomainSpec, vtree_kind: str = "balanced", node_budget: int | None = None):
        self.spec = spec
        vt = build_vtree(spec.num_props, vtree_kind)
        self.manager = SddManager(vt) if node_budget is None else SddManager(vt, node_budget)
        self.phi = compile_cnf(spec.phi, self.manager)
        self.preconditions = [compile_cnf(a.precondition, self.manager) for a in spec.actions]
        self._consistency: dict[bytes, bool] = {}

    def mask_consistent(self, mask: np.ndarray) -> bool:
        """Is some model of phi exactly the set of states with this precondition pattern?"""
        key = np.asarray(mask, dtype=np.int8).tobytes()
        hit = self._consistency.get(key)
        if hit is None:
            mgr = self.manager
            node = self.phi
            for bit, q in sorted(zip(mask, self.preconditions), key=lambda t: -int(t[0])):
                node = mgr.conjoin(node, q if bit else mgr.negate(q))
                if node.kind == FALSE:
                    break
            hit = self._consistency[key] = node.kind != FALSE
        return hit


class Grounding:
    name = "base"
    nets: dict[str, tuple[Mlp, AdamState]]

    def mask(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def update(self, batch: SupervisedBatch) -> float:
        raise NotImplementedError

    def explorability(self, obs: np.ndarray) -> np.ndarray:
        """Estimated probability that each action is explorable in ``obs``."""
        raise NotImplementedError


class NoGrounding(Grounding):
    name = "none"

    def __init__(self, spec: DomainSpec):
        self.num_actions = spec.num_actions
        self.nets = {}

    def mask(self, obs):
        return np.ones(self.num_actions, dtype=np.int8)

    def update(self, batch):
        return float("nan")

    def explorability(self, obs):
        return np.ones(self.num_actions)


class PsddGrounding(Grounding):
    name = "psdd"

    def __init__(self, domain: CompiledDomain, cfg: GatingConfig, rng: np.random.Generator,
                 query_mode: str = "auto", smooth: bool = True):
        self.domain = domain
        self.spec = domain.spec
        self.psdd = attach_params(domain.phi, smooth=smooth)
        self.compiled = CompiledPsdd(self.psdd)
        self.queries = PreconditionQueries(self.psdd, domain.preconditions, query_mode)
        self.net = make_gating_net(self.spec.num_props, self.psdd, cfg, rng)
        self.opt = AdamState.for_params(self.net.params, cfg.lr)
        self.nets = {"gating": (self.net, self.opt)}

    def logits(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward(obs)[..., :self.psdd.total_params]

    def map_model(self, obs: np.ndarray) -> tuple[int, ...]:
        return self.compiled.map_model(self.logits(obs))[0]

    def mask(self, obs):
        return build_mask(self.map_model(obs), self.spec, self.domain.preconditions)

    def update(self, batch):
        return train_step(self.net, self.queries, batch, self.opt)

    def explorability(self, obs):
        A = self.spec.num_actions
        logits = np.repeat(self.logits(obs)[None], A, axis=0)
        return self.queries.values(logits, np.arange(A))


class MlpGrounding(Grounding):
    """Per-action explorability trained by binary cross-entropy on the taken action only."""

    name = "mlp_ablation"

    def __init__(self, spec: DomainSpec, cfg: GatingConfig, rng: np.random.Generator,
                 domain: CompiledDomain | None = None):
        self.spec = spec
        self.domain = domain
        self.net = Mlp([spec.num_props, *cfg.hidden, spec.num_actions], "relu", rng)
        self.opt = AdamState.for_params(self.net.params, cfg.lr)
        self.nets = {"gating": (self.net, self.opt)}

    def explorability(self, obs):
        return 1.0 / (1.0 + np.exp(-self.net.forward(obs)))

    def mask(self, obs):
        return (self.net.forward(obs) >= 0.0).astype(np.int8)

    def loss_and_grad(self, batch: SupervisedBatch):
        out, cache = self.net.forward(batch.states, keep=True)
        rows = np.arange(len(batch))
        z = out[rows, batch.actions]
        p_hat = 1.0 / (1.0 + np.exp(-z))
        loss, _ = cross_entropy(p_hat, batch.labels)
        d_out = np.zeros_like(out)
        # logit-space derivative of the BCE; keeps a gradient when p_hat saturates
        d_out[rows, batch.actions] = (p_hat - batch.labels) / len(batch)
        return loss, self.net.backward(cache, d_out)

    def update(self, batch):
        loss, grads = self.loss_and_grad(batch)
        if not (np.isfinite(loss) and all_finite(grads)):
            raise GatingError(f"non-finite ablation gradient (loss={loss})")
        self.opt.apply(self.net.params, grads)
        return loss


def make_grounding(backend: str, spec: DomainSpec, cfg: GatingConfig, rng: np.random.Generator,
                   vtree_kind: str = "balanced", query_mode: str = "auto",
                   domain: CompiledDomain | None = None) -> Grounding:
    if backend not in BACKENDS:
        raise ContractError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if backend == "none":
        return NoGrounding(spec)
    domain = domain or CompiledDomain(spec, vtree_kind)
    if backend == "psdd":
        return PsddGrounding(domain, cfg, rng, query_mode)
    return MlpGrounding(spec, cfg, rng, domain)

