"""Brute-force and finite-difference oracles for the circuit stack.

Every check builds random CNFs over at most 12 props, compiles them, and
compares circuit answers against exhaustive enumeration or central
differences.  ``corrupt=True`` perturbs one parameter block after the softmax
so the normalization check must fail (a negative control).
"""

from __future__ import annotations

import itertools
import math
import random
import time
from dataclasses import dataclass, field

import numpy as np

from .gating import (GatingConfig, PreconditionQueries, SupervisedBatch, cross_entropy,
                     loss_and_grad, make_gating_net)
from .logic import CnfFormula, enumerate_models, eval_cnf
from .psdd import CompiledPsdd, Psdd, attach_params, map_model, prob_model, prob_query
from .sdd import SddManager, compile_cnf, evaluate, model_count
from .vtree import build_balanced, build_right_linear

SCOPES = ("sdd", "psdd", "map", "grad")
FD_STEP = 1e-5


@dataclass
class CheckResult:
    scope: str
    name: str
    tolerance: str
    passed: bool = True
    checked: int = 0
    worst: float = 0.0
    detail: str = ""
    seconds: float = 0.0

    def fail(self, detail: str) -> None:
        if self.passed:
            self.detail = detail
        self.passed = False

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"{status} {self.scope}/{self.name}: {self.checked} cases, worst {self.worst:.3g}, "
                f"tolerance {self.tolerance}, {self.seconds:.1f}s{extra}")


def random_cnf(rng: random.Random, num_props: int, max_clauses: int = 30, max_width: int = 3) -> CnfFormula:
    clauses = []
    for _ in range(rng.randint(0, max_clauses)):
        props = rng.sample(range(num_props), rng.randint(1, min(max_width, num_props)))
        clauses.append([(p + 1) * rng.choice((1, -1)) for p in props])
    return CnfFormula.from_lists(clauses, num_props)


@dataclass
class Instance:
    phi: CnfFormula
    query: CnfFormula
    manager: SddManager
    sdd: object
    query_sdd: object
    models: list = field(default_factory=list)


def random_instances(count: int, seed: int = 0, max_props: int = 12, satisfiable: bool = False):
    """Random (phi, query) pairs with alternating balanced / right-linear vtrees."""
    rng = random.Random(seed)
    made = 0
    attempt = 0
    while made < count:
        attempt += 1
        K = rng.randint(1, max_props)
        phi = random_cnf(rng, K, max_clauses=rng.choice((K, 2 * K, 30)))
        order = list(range(K))
        rng.shuffle(order)
        vt = (build_balanced if attempt % 2 else build_right_linear)(order)
        mgr = SddManager(vt)
        sdd = compile_cnf(phi, mgr)
        if satisfiable and sdd.is_false:
            continue
        query = random_cnf(rng, K, max_clauses=rng.randint(1, 6))
        made += 1
        yield Instance(phi, query, mgr, sdd, compile_cnf(query, mgr))


class CorruptedPsdd(Psdd):
    """Scales the first parameter block after the softmax, breaking normalization."""

    def __init__(self, base: Psdd, factor: float = 1.5):
        self.__dict__.update(base.__dict__)
        self.factor = factor

    def softmax(self, logits):
        alpha = super().softmax(logits)
        if self.blocks:
            off, ar = self.blocks[0]
            alpha[..., off:off + ar] *= self.factor
        return alpha


def _logits(p: Psdd, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(scale=2.0, size=p.total_params)


def check_sdd(instances: int, seed: int) -> list[CheckResult]:
    ev = CheckResult("sdd", "evaluate_vs_eval_cnf", "exact")
    mc = CheckResult("sdd", "model_count_vs_enumeration", "exact")
    for inst in random_instances(instances, seed):
        K = inst.phi.num_props
        models = enumerate_models(inst.phi)
        truth = set(models)
        for m in itertools.product((0, 1), repeat=K):
            if evaluate(inst.sdd, m, check=True) != (m in truth):
                ev.fail(f"mismatch at {m}")
        ev.checked += 1
        count = model_count(inst.sdd, K)
        mc.worst = max(mc.worst, abs(count - len(models)))
        if count != len(models):
            mc.fail(f"count {count} vs {len(models)}")
        mc.checked += 1
    return [ev, mc]


def check_psdd(instances: int, seed: int, corrupt: bool = False) -> list[CheckResult]:
    norm = CheckResult("psdd", "normalization", "1e-9")
    support = CheckResult("psdd", "support_exact_zero", "exact")
    query = CheckResult("psdd", "prob_query_vs_enumeration", "1e-9")
    for i, inst in enumerate(random_instances(instances, seed, satisfiable=True)):
        p = attach_params(inst.sdd)
        if corrupt:
            p = CorruptedPsdd(p)
        th = _logits(p, seed + i)
        K = inst.phi.num_props
        probs = {m: prob_model(p, th, m) for m in itertools.product((0, 1), repeat=K)}
        total = math.fsum(probs.values())
        norm.worst = max(norm.worst, abs(total - 1.0))
        if abs(total - 1.0) > 1e-9:
            norm.fail(f"sum {total!r}")
        norm.checked += 1
        for m, pr in probs.items():
            if (pr > 0) != eval_cnf(inst.phi, m):
                support.fail(f"model {m} has probability {pr}")
        support.checked += 1
        expected = math.fsum(pr for m, pr in probs.items() if eval_cnf(inst.query, m))
        got = prob_query(p, th, inst.query_sdd).value
        query.worst = max(query.worst, abs(got - expected))
        if abs(got - expected) > 1e-9:
            query.fail(f"{got!r} vs {expected!r}")
        query.checked += 1
    return [norm, support, query]


def check_map(instances: int, seed: int) -> list[CheckResult]:
    arg = CheckResult("map", "argmax_vs_enumeration", "1e-12")
    comp = CheckResult("map", "compiled_vs_reference", "identical model")
    for i, inst in enumerate(random_instances(instances, seed, satisfiable=True)):
        p = attach_params(inst.sdd)
        th = _logits(p, seed + i)
        models = enumerate_models(inst.phi)
        best = max(prob_model(p, th, m) for m in models)
        m_hat, pr = map_model(p, th)
        ok = eval_cnf(inst.phi, m_hat)
        err = max(abs(prob_model(p, th, m_hat) - best), abs(pr - best))
        arg.worst = max(arg.worst, err)
        if not ok or err > 1e-12 * max(1.0, best):
            arg.fail(f"model {m_hat} prob {pr} vs best {best}")
        arg.checked += 1
        if CompiledPsdd(p).map_model(th)[0] != m_hat:
            comp.fail("compiled MAP returned a different model")
        comp.checked += 1
    return [arg, comp]


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_grad(instances: int, seed: int) -> list[CheckResult]:
    res = CheckResult("grad", "prob_query_grad_vs_central_difference", "1e-4 relative")
    for i, inst in enumerate(random_instances(instances, seed, max_props=8, satisfiable=True)):
        p = attach_params(inst.sdd)
        th = _logits(p, seed + i) * 0.5
        g = prob_query(p, th, inst.query_sdd, with_grad=True).grad
        for j in range(p.total_params):
            e = np.zeros_like(th)
            e[j] = FD_STEP
            fd = (prob_query(p, th + e, inst.query_sdd).value
                  - prob_query(p, th - e, inst.query_sdd).value) / (2 * FD_STEP)
            err = relative_error(fd, g[j])
            res.worst = max(res.worst, err)
            if err > 1e-4:
                res.fail(f"logit {j}: fd {fd!r} vs grad {g[j]!r}")
        res.checked += 1
    return [res]


def gating_fixture(num_props: int, seed: int = 0):
    """A domain, gated PSDD, queries and labelled batch for gradient checks.

    3 props: term preconditions (indicator route).  8 props: clause
    preconditions (pair-program route).
    """
    rng = random.Random(seed)
    if num_props == 3:
        phi = CnfFormula.from_lists([[1, 2], [-2, -3]], 3)
        pres = [CnfFormula.from_lists(c, 3) for c in ([[1]], [[-2], [3]], [[-1], [-3]], [])]
    else:
        phi = CnfFormula.from_lists([[1, 2, -3], [-1, 4], [5, -6], [-5, 7, 8], [-2, -8], [3, 6]], 8)
        pres = [random_cnf(rng, 8, max_clauses=3, max_width=2) for _ in range(5)]
    mgr = SddManager(build_balanced(list(range(num_props))))
    psdd = attach_params(compile_cnf(phi, mgr))
    preconditions = [compile_cnf(q, mgr) for q in pres]
    nrng = np.random.default_rng(seed)
    n = 12
    batch = SupervisedBatch(nrng.integers(0, 2, (n, num_props)).astype(float),
                            nrng.integers(0, len(pres), n), np.arange(n) % 2)
    return psdd, preconditions, batch


def _gating_loss(net, queries, batch) -> float:
    return loss_and_grad(net, queries, batch)[0]


def check_gating_grad(seed: int = 0, hidden: tuple[int, ...] = GatingConfig.hidden) -> list[CheckResult]:
    """Every logit and every gating weight derivative of the BCE loss vs central differences."""
    out = []
    for K in (3, 8):
        psdd, preconditions, batch = gating_fixture(K, seed)
        queries = PreconditionQueries(psdd, preconditions)
        nrng = np.random.default_rng(seed)
        net = make_gating_net(K, psdd, GatingConfig(hidden=hidden), nrng)
        # zero biases put all-zero input rows exactly on ReLU kinks, where differences are undefined
        for b in net.biases:
            b[:] = nrng.normal(scale=0.1, size=b.shape)
        res_logit = CheckResult("grad", f"gating_logits_{K}props_{queries.mode}", "1e-4 relative")
        logits = net.forward(batch.states)[:, :psdd.total_params]
        p_hat, vjp = queries.values_and_vjp(logits, batch.actions)
        g = vjp(cross_entropy(p_hat, batch.labels)[1])

        def loss_at(th):
            return cross_entropy(queries.values(th, batch.actions), batch.labels)[0]

        for idx in np.ndindex(*logits.shape):
            e = np.zeros_like(logits)
            e[idx] = FD_STEP
            fd = (loss_at(logits + e) - loss_at(logits - e)) / (2 * FD_STEP)
            err = relative_error(fd, g[idx])
            res_logit.worst = max(res_logit.worst, err)
            res_logit.checked += 1
            if err > 1e-4:
                res_logit.fail(f"logit {idx}: fd {fd!r} vs grad {g[idx]!r}")

        res_w = CheckResult("grad", f"gating_weights_{K}props", "1e-4 relative")
        _, grads, _ = loss_and_grad(net, queries, batch)
        for k, (param, grad) in enumerate(zip(net.params, grads)):
            flat = param.reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + FD_STEP
                up = _gating_loss(net, queries, batch)
                flat[j] = keep - FD_STEP
                down = _gating_loss(net, queries, batch)
                flat[j] = keep
                fd = (up - down) / (2 * FD_STEP)
                err = relative_error(fd, grad.reshape(-1)[j])
                res_w.worst = max(res_w.worst, err)
                res_w.checked += 1
                if err > 1e-4:
                    res_w.fail(f"param array {k} entry {j}: fd {fd!r} vs grad {grad.reshape(-1)[j]!r}")
        out += [res_logit, res_w]
    return out


def oracle_check(scopes=SCOPES, instances: int = 200, seed: int = 0,
                 corrupt: bool = False) -> list[CheckResult]:
    out = []
    for scope in scopes:
        t = time.perf_counter()
        if scope == "sdd":
            results = check_sdd(instances, seed)
        elif scope == "psdd":
            results = check_psdd(instances, seed, corrupt)
        elif scope == "map":
            results = check_map(instances, seed)
        elif scope == "grad":
            results = check_grad(max(instances // 4, 1), seed) + check_gating_grad(seed)
        else:
            raise ValueError(f"unknown scope {scope!r}; choose from {SCOPES}")
        elapsed = time.perf_counter() - t
        for r in results:
            r.seconds = elapsed
        out += results
    return out
