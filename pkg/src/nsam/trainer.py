"""Joint training loop: masked PPO with periodic gating updates from buffer D.

Per step: logits from the gating net, MAP model, mask, masked sample, label.
The policy is updated at episode end with the gating net frozen; every
``freq_g`` environment steps the gating net takes ``gating_updates`` Adam steps
on batches drawn from D.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .envs import RewardSchedule, SudokuEnv, make_env, sudoku_prop
from .gating import GatingConfig, GatingError, SupervisedBatch
from .grounding import BACKENDS, CompiledDomain, Grounding, make_grounding
from .logic import ContractError
from .nn import load_checkpoint, save_checkpoint
from .ppo import ActorCritic, PpoConfig, RolloutBuffer, ppo_update

METRIC_COLUMNS = ("episode", "total_steps", "return", "violated", "dead_end", "success", "steps",
                  "mask_fallback", "inconsistent_mask", "gating_loss")


@dataclass(frozen=True)
class TrainConfig:
    env: str = "sudoku"
    size: str = "2"
    vtree: str = "balanced"
    backend: str = "psdd"
    episodes: int = 2000
    max_total_steps: int = 0  # 0: no cap beyond the episode count
    seed: int = 0
    freq_g: int = 1000
    gating_updates: int = 1000
    buffer_capacity: int = 100_000
    balance_labels: bool = True
    query_mode: str = "auto"
    givens: int = -1  # -1: environment default
    reward_place: float | None = None
    reward_complete: float | None = None
    reward_violation: float | None = None
    out_dir: str = "runs/default"
    save_checkpoint: bool = True
    demo_action: str = "fill(1,1,1)"
    demo_steps: int = 200
    ppo: PpoConfig = field(default_factory=PpoConfig)
    gating: GatingConfig = field(default_factory=GatingConfig)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ContractError(f"backend must be one of {BACKENDS}")
        for name in ("episodes", "freq_g", "gating_updates", "buffer_capacity"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.max_total_steps < 0:
            raise ContractError("max_total_steps must be non-negative")


# -- config files -----------------------------------------------------------------


def _coerce(text: str, current: Any, annotation: str):
    text = text.strip()
    if annotation.endswith("| None") and text.lower() in ("none", ""):
        return None
    if isinstance(current, bool) or annotation == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"not a boolean: {text!r}")
    if isinstance(current, tuple) or annotation.startswith("tuple"):
        return tuple(int(x) for x in text.split(",") if x.strip())
    if isinstance(current, int) or annotation == "int":
        return int(text)
    if isinstance(current, float) or annotation.startswith("float"):
        return float(text)
    return text


def _replace(obj, key: str, text: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    if key not in fields:
        raise ContractError(f"unknown config key {key!r}")
    f = fields[key]
    return dataclasses.replace(obj, **{key: _coerce(text, getattr(obj, key), str(f.type))})


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Flat ``key = value`` lines; ``ppo.*`` and ``gating.*`` reach the nested configs."""
    cfg = base or TrainConfig()
    ppo, gating = cfg.ppo, cfg.gating
    top: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("ppo."):
            ppo = _replace(ppo, key[4:], value)
        elif key.startswith("gating."):
            gating = _replace(gating, key[7:], value)
        else:
            top[key] = value
    for key, value in top.items():
        cfg = _replace(cfg, key, value)
    return dataclasses.replace(cfg, ppo=ppo, gating=gating)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            for g in dataclasses.fields(v):
                lines.append(f"{f.name}.{g.name} = {_fmt(getattr(v, g.name))}")
        else:
            lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def load_config(path: str | Path, seed: int | None = None) -> TrainConfig:
    cfg = parse_config(Path(path).read_text())
    return dataclasses.replace(cfg, seed=seed) if seed is not None else cfg


# -- buffer D ----------------------------------------------------------------------


class LabelBuffer:
    """FIFO ring buffer of (state, action, y)."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.labels = np.zeros(capacity, dtype=np.int8)
        self.size = 0
        self.next = 0
        self.total_added = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action: int, y: int) -> None:
        i = self.next
        self.states[i] = obs
        self.actions[i] = action
        self.labels[i] = y
        self.next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_added += 1

    def oldest_first(self) -> np.ndarray:
        """Stored slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.next) % self.capacity

    def sampler(self, batch_size: int, rng: np.random.Generator, balance: bool = True):
        """Batch sampler over the current contents; 50/50 by label when both labels exist."""
        idx = np.arange(self.size)
        neg = idx[self.labels[:self.size] == 0]
        pos = idx[self.labels[:self.size] == 1]
        both = balance and len(neg) and len(pos)

        def draw() -> SupervisedBatch:
            if both:
                half = batch_size // 2
                pick = np.concatenate([rng.choice(neg, half), rng.choice(pos, batch_size - half)])
            else:
                pick = rng.choice(idx, batch_size)
            return SupervisedBatch(self.states[pick], self.actions[pick], self.labels[pick])

        return draw


# -- training -----------------------------------------------------------------------


def make_env_from(cfg: TrainConfig):
    defaults = RewardSchedule() if cfg.env == "sudoku" else RewardSchedule(place=0.0)
    rewards = RewardSchedule(
        place=defaults.place if cfg.reward_place is None else cfg.reward_place,
        complete=defaults.complete if cfg.reward_complete is None else cfg.reward_complete,
        violation=defaults.violation if cfg.reward_violation is None else cfg.reward_violation)
    kw: dict[str, Any] = {"rewards": rewards}
    if cfg.env == "sudoku" and cfg.givens >= 0:
        kw["givens"] = cfg.givens
    return make_env(cfg.env, cfg.size, **kw)


@dataclass
class Agent:
    env: Any
    grounding: Grounding
    policy: ActorCritic
    domain: CompiledDomain | None


def build_agent(cfg: TrainConfig, seeds: np.random.SeedSequence) -> Agent:
    env = make_env_from(cfg)
    g_seed, p_seed = seeds.spawn(2)
    domain = None if cfg.backend == "none" else CompiledDomain(env.spec, cfg.vtree)
    grounding = make_grounding(cfg.backend, env.spec, cfg.gating, np.random.default_rng(g_seed),
                               cfg.vtree, cfg.query_mode, domain)
    policy = ActorCritic(env.obs_dim, env.num_actions, cfg.ppo, np.random.default_rng(p_seed))
    return Agent(env, grounding, policy, domain)


@dataclass
class RunResult:
    out_dir: Path
    metrics_path: Path
    rows: list[dict]
    summary: dict
    agent: Agent | None = None


def violation_rate(rows: list[dict], last: int | None = None) -> float:
    sel = rows[-last:] if last else rows
    return sum(int(r["violated"]) for r in sel) / len(sel) if sel else 0.0


def summarize(rows: list[dict], gating_intervals: int, window: int = 100) -> dict:
    tail = rows[-window:]
    return {
        "episodes": len(rows),
        "total_steps": int(rows[-1]["total_steps"]) if rows else 0,
        "violation_rate": violation_rate(rows),
        "final_violation_rate": violation_rate(rows, window),
        "final_success_rate": sum(int(r["success"]) for r in tail) / len(tail) if tail else 0.0,
        "final_return": float(np.mean([float(r["return"]) for r in tail])) if tail else 0.0,
        "mean_return": float(np.mean([float(r["return"]) for r in rows])) if rows else 0.0,
        "dead_end_rate": sum(int(r["dead_end"]) for r in rows) / len(rows) if rows else 0.0,
        "mask_fallbacks": sum(int(r["mask_fallback"]) for r in rows),
        "gating_intervals": gating_intervals,
        "window": window,
    }


def _metrics_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_gating_interval(agent: Agent, D: LabelBuffer, cfg: TrainConfig, rng: np.random.Generator) -> float:
    draw = D.sampler(cfg.gating.batch_size, rng, cfg.balance_labels)
    loss = float("nan")
    for _ in range(cfg.gating_updates):
        loss = agent.grounding.update(draw())
    return loss


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite gating update; a state dump was written."""


def _agent_nets(agent: Agent) -> dict:
    nets = dict(agent.grounding.nets)
    nets["policy"] = (agent.policy.policy, agent.policy.policy_opt)
    nets["value"] = (agent.policy.value, agent.policy.value_opt)
    return nets


def _dump_abort_state(out: Path, agent: Agent, D: "LabelBuffer", rows: list[dict],
                      total_steps: int, err: Exception) -> Path:
    (out / "metrics.csv").write_text(_metrics_text(rows))
    order = D.oldest_first()
    path = out / "abort_state.npz"
    save_checkpoint(path, _agent_nets(agent), {
        "total_steps": np.array(total_steps),
        "buffer_states": D.states[order], "buffer_actions": D.actions[order],
        "buffer_labels": D.labels[order]})
    (out / "abort_reason.txt").write_text(f"{err}\n")
    return path


def run_training(cfg: TrainConfig, quiet: bool = True) -> RunResult:
    """Algorithm loop; writes metrics.csv, summary.json, config.txt, timing.csv and a checkpoint."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(cfg.seed)
    build_seed, env_seed, act_seed, batch_seed = root.spawn(4)
    agent = build_agent(cfg, build_seed)
    env_rng = np.random.default_rng(env_seed)
    act_rng = np.random.default_rng(act_seed)
    batch_rng = np.random.default_rng(batch_seed)
    D = LabelBuffer(cfg.buffer_capacity, agent.env.obs_dim)
    rollout = RolloutBuffer()
    rows: list[dict] = []
    timings: list[float] = []
    total_steps = 0
    intervals = 0
    gating_loss = float("nan")
    check_consistency = cfg.backend == "mlp_ablation"
    start = time.perf_counter()
    for episode in range(cfg.episodes):
        obs = agent.env.reset(env_rng)
        rollout.clear()
        ret = 0.0
        violated = dead_end = success = False
        fallbacks = inconsistent = 0
        done = agent.env.done
        while not done:
            mask = agent.grounding.mask(obs)
            if check_consistency and not agent.domain.mask_consistent(mask):
                inconsistent += 1
            a, logp, value, fb, _ = agent.policy.act(obs, mask, act_rng)
            fallbacks += int(fb)
            t = agent.env.step(a)
            D.add(obs, a, t.y)
            rollout.add(obs, a, t.r, t.done, mask, logp, value)
            ret += t.r
            violated |= not t.y
            dead_end |= t.dead_end
            success |= t.success
            done = t.done
            obs = t.s_next.observation
            total_steps += 1
            if cfg.backend != "none" and total_steps % cfg.freq_g == 0:
                try:
                    gating_loss = run_gating_interval(agent, D, cfg, batch_rng)
                except GatingError as err:
                    dump = _dump_abort_state(out, agent, D, rows, total_steps, err)
                    raise TrainingAborted(f"gating update failed at step {total_steps}: {err}; "
                                          f"state written to {dump}") from err
                intervals += 1
        if len(rollout):
            ppo_update(agent.policy, rollout)
        rows.append({
            "episode": episode, "total_steps": total_steps, "return": f"{ret:.6f}",
            "violated": int(violated), "dead_end": int(dead_end), "success": int(success),
            "steps": len(rollout), "mask_fallback": fallbacks,
            "inconsistent_mask": inconsistent if check_consistency else "",
            "gating_loss": "" if np.isnan(gating_loss) else f"{gating_loss:.6f}",
        })
        timings.append(time.perf_counter() - start)
        if not quiet and (episode + 1) % 100 == 0:
            s = summarize(rows, intervals)
            print(f"episode {episode + 1} steps {total_steps} final_viol {s['final_violation_rate']:.3f} "
                  f"final_ret {s['final_return']:.3f} loss {gating_loss:.4f} "
                  f"t={timings[-1]:.0f}s", flush=True)
        if cfg.max_total_steps and total_steps >= cfg.max_total_steps:
            break
    metrics_path = out / "metrics.csv"
    metrics_path.write_text(_metrics_text(rows))
    summary = summarize(rows, intervals)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.txt").write_text(dump_config(cfg))
    # wall-clock lives apart from metrics.csv so that reruns stay byte-identical
    (out / "timing.csv").write_text(
        "episode,wall_seconds\n" + "".join(f"{i},{t:.3f}\n" for i, t in enumerate(timings)))
    if cfg.save_checkpoint:
        save_checkpoint(out / "checkpoint.npz", _agent_nets(agent), {"total_steps": np.array(total_steps)})
    return RunResult(out, metrics_path, rows, summary, agent)


def run_ablation_mlp(cfg: TrainConfig, quiet: bool = True) -> RunResult:
    return run_training(dataclasses.replace(cfg, backend="mlp_ablation"), quiet)


def evaluate_checkpoint(run_dir: str | Path, episodes: int, seed: int = 12345) -> dict:
    """Roll out a saved agent without learning; reports violation and success rates."""
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.txt")
    agent = build_agent(cfg, np.random.SeedSequence(cfg.seed).spawn(4)[0])
    nets, _ = load_checkpoint(run_dir / "checkpoint.npz")
    for name, (net, _) in nets.items():
        target = {"policy": agent.policy.policy, "value": agent.policy.value}.get(name)
        if target is None:
            target = agent.grounding.nets[name][0]
        target.params[:] = net.params
    env_rng, act_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    rows = []
    for episode in range(episodes):
        obs = agent.env.reset(env_rng)
        ret, violated, success = 0.0, False, False
        while not agent.env.done:
            a, *_ = agent.policy.act(obs, agent.grounding.mask(obs), act_rng)
            t = agent.env.step(a)
            ret += t.r
            violated |= not t.y
            success |= t.success
            obs = t.s_next.observation
        rows.append((ret, violated, success))
    return {"episodes": episodes,
            "violation_rate": sum(v for _, v, _ in rows) / episodes,
            "success_rate": sum(s for _, _, s in rows) / episodes,
            "mean_return": float(np.mean([r for r, _, _ in rows]))}


# -- single-transition demo -------------------------------------------------------------


def demo_state(env: SudokuEnv, action: int) -> list[int]:
    """A board on which ``action`` is a violation: its digit given in the same row."""
    i, j, k = env.decode_action(action)
    jj = (j + 1) % env.n
    m = [0] * env.spec.num_props
    m[sudoku_prop(env.n, i, jj, k)] = 1
    return m


def demo_single_transition(cfg: TrainConfig, label: int = 0, steps: int | None = None,
                           backend: str | None = None) -> dict:
    """Train the grounding backend on exactly one (s, a, y) tuple and compare masks."""
    backend = backend or (cfg.backend if cfg.backend != "none" else "psdd")
    env = make_env_from(dataclasses.replace(cfg, env="sudoku"))
    names = [a.name for a in env.spec.actions]
    if cfg.demo_action not in names:
        raise ContractError(f"unknown demo action {cfg.demo_action!r}")
    action = names.index(cfg.demo_action)
    model = demo_state(env, action)
    obs = env.reset_to(model)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    grounding = make_grounding(backend, env.spec, cfg.gating, rng, cfg.vtree, cfg.query_mode)
    mask_before = grounding.mask(obs)
    prob_before = grounding.explorability(obs)
    batch = SupervisedBatch(obs[None], [action], [label])
    losses = [grounding.update(batch) for _ in range(cfg.demo_steps if steps is None else steps)]
    mask_after = grounding.mask(obs)
    prob_after = grounding.explorability(obs)
    newly = [names[a] for a in range(len(names)) if mask_before[a] == 1 and mask_after[a] == 0]
    lowered = [names[a] for a in range(len(names)) if prob_after[a] < prob_before[a] - 0.05]
    return {
        "backend": backend, "action": names[action], "label": label,
        "steps": len(losses), "final_loss": losses[-1] if losses else None,
        "actions": names,
        "mask_before": mask_before.tolist(), "mask_after": mask_after.tolist(),
        "prob_before": prob_before.tolist(), "prob_after": prob_after.tolist(),
        "masked_out": int(len(names) - mask_after.sum()),
        "newly_masked": newly, "lowered": lowered,
    }
