"""Masked policy, rollout storage and the clipped PPO update.

Masking adds ``MASK_LOGIT`` to the logits of masked actions before the
softmax.  Their probabilities underflow to exactly 0, so they are never
sampled and receive no gradient.  When every action is masked the policy
falls back to the unmasked softmax and the caller counts the event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .envs import DomainSpec
from .logic import ContractError
from .nn import AdamState, Mlp
from .sdd import SddNode, evaluate

MASK_LOGIT = -1e9
STD_FLOOR = 1e-8


def build_mask(model: Sequence[int], spec: DomainSpec, preconditions: Sequence[SddNode]) -> np.ndarray:
    """Bit per action: does its precondition circuit hold under ``model``."""
    if len(preconditions) != spec.num_actions:
        raise ContractError("need one compiled precondition per action")
    return np.array([evaluate(q, model) for q in preconditions], dtype=np.int8)


def masked_logits(logits: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits with masked entries pushed to ``MASK_LOGIT``; rows with no bit set stay unmasked.

    Works on one row or a batch.  Returns the adjusted logits and the per-row
    fallback flags.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask)
    if logits.shape != mask.shape:
        raise ContractError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    fallback = ~mask.astype(bool).any(axis=-1)
    keep = mask.astype(bool) | fallback[..., None]
    return np.where(keep, logits, logits + MASK_LOGIT), fallback


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_distribution(logits: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, bool]:
    """``pi+`` for one state and whether the all-masked fallback fired."""
    z, fallback = masked_logits(logits, mask)
    return np.exp(log_softmax(z)), bool(fallback)


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; zero-probability actions occupy empty intervals and are never drawn."""
    cdf = np.cumsum(probs)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    if a >= len(probs) or probs[a] == 0.0:
        a = int(np.flatnonzero(probs > 0)[-1])
    return a


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 4
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden: tuple[int, ...] = (64, 64, 64)
    normalize_advantages: bool = False
    entropy_coef: float = 0.05

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ContractError("clip must lie in (0, 1)")
        if not 0 <= self.gamma < 1:
            raise ContractError("gamma must lie in [0, 1)")
        if not 0 <= self.lam <= 1:
            raise ContractError("lambda must lie in [0, 1]")
        if self.epochs < 1:
            raise ContractError("epochs must be positive")
        if self.entropy_coef < 0:
            raise ContractError("entropy_coef must be non-negative")


@dataclass
class RolloutBuffer:
    obs: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def add(self, obs, action, reward, done, mask, log_prob, value) -> None:
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))
        self.masks.append(np.asarray(mask, dtype=np.int8).copy())
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))

    def __len__(self) -> int:
        return len(self.actions)

    def clear(self) -> None:
        for v in vars(self).values():
            v.clear()


def gae(rewards: Sequence[float], values: Sequence[float], dones: Sequence[bool],
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and discounted returns; the value after a done step is 0."""
    T = len(rewards)
    adv = np.zeros(T)
    ret = np.zeros(T)
    next_adv = next_value = next_ret = 0.0
    for t in range(T - 1, -1, -1):
        if dones[t]:
            next_adv = next_value = next_ret = 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        next_adv = delta + gamma * lam * next_adv
        next_ret = rewards[t] + gamma * next_ret
        adv[t], ret[t] = next_adv, next_ret
        next_value = values[t]
    return adv, ret


class ActorCritic:
    def __init__(self, obs_dim: int, num_actions: int, cfg: PpoConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.num_actions = num_actions
        self.policy = Mlp([obs_dim, *cfg.hidden, num_actions], "tanh", rng, output_scale=0.01)
        self.value = Mlp([obs_dim, *cfg.hidden, 1], "tanh", rng)
        self.policy_opt = AdamState.for_params(self.policy.params, cfg.actor_lr, eps=1e-5)
        self.value_opt = AdamState.for_params(self.value.params, cfg.critic_lr, eps=1e-5)

    def act(self, obs: np.ndarray, mask: np.ndarray, rng: np.random.Generator):
        """Sample from ``pi+``; returns (action, log-prob, value, fallback, probs)."""
        probs, fallback = masked_distribution(self.policy.forward(obs), mask)
        a = sample_action(probs, rng)
        return a, float(np.log(probs[a])), float(self.value.forward(obs)[0]), fallback, probs


def surrogate_loss_and_grad(logits: np.ndarray, masks: np.ndarray, actions: np.ndarray,
                            old_logp: np.ndarray, adv: np.ndarray, clip: float,
                            entropy_coef: float = 0.0) -> tuple[float, np.ndarray]:
    """Negative clipped surrogate minus the entropy bonus, and its gradient w.r.t. the logits."""
    T = len(actions)
    rows = np.arange(T)
    z, _ = masked_logits(logits, masks)
    logp_all = log_softmax(z)
    probs = np.exp(logp_all)
    ratio = np.exp(logp_all[rows, actions] - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    loss = float(-surr.mean())
    # d(-mean surr)/d logp: only where the unclipped branch is the minimum
    active = ratio * adv <= clipped * adv
    d_logp = np.where(active, -adv * ratio, 0.0) / T
    d_z = -probs * d_logp[:, None]
    d_z[rows, actions] += d_logp
    if entropy_coef:
        # masked entries have p = 0 and get no entropy gradient
        plogp = probs * logp_all
        entropy = -plogp.sum(axis=1)
        loss -= entropy_coef * float(entropy.mean())
        d_z += (entropy_coef / T) * (plogp + probs * entropy[:, None])
    return loss, d_z


def ppo_update(agent: ActorCritic, buffer: RolloutBuffer, cfg: PpoConfig | None = None
               ) -> tuple[float, float]:
    """Clipped-surrogate epochs on the buffer using its stored masks."""
    cfg = cfg or agent.cfg
    if len(buffer) == 0 or not buffer.dones[-1]:
        raise ContractError("ppo_update needs at least one completed episode")
    obs = np.stack(buffer.obs)
    actions = np.array(buffer.actions)
    masks = np.stack(buffer.masks)
    old_logp = np.array(buffer.log_probs)
    adv, ret = gae(buffer.rewards, buffer.values, buffer.dones, cfg.gamma, cfg.lam)
    if cfg.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / max(adv.std(), STD_FLOOR)
    policy_loss = value_loss = 0.0
    for _ in range(cfg.epochs):
        out, cache = agent.policy.forward(obs, keep=True)
        policy_loss, d_z = surrogate_loss_and_grad(out, masks, actions, old_logp, adv,
                                                   cfg.clip, cfg.entropy_coef)
        agent.policy_opt.apply(agent.policy.params, agent.policy.backward(cache, d_z))

        v, vcache = agent.value.forward(obs, keep=True)
        err = v[:, 0] - ret
        value_loss = float(np.mean(err ** 2))
        grad_v = agent.value.backward(vcache, (2.0 * err / len(err))[:, None])
        agent.value_opt.apply(agent.value.params, grad_v)
    return policy_loss, value_loss
