import dataclasses
import json

import numpy as np
import pytest

from nsam import cli
from nsam.gating import GatingConfig
from nsam.logic import ContractError
from nsam.nn import load_checkpoint
from nsam.oracle import oracle_check
from nsam.ppo import PpoConfig
from nsam.trainer import (METRIC_COLUMNS, LabelBuffer, TrainConfig, TrainingAborted, demo_single_transition,
                          dump_config, evaluate_checkpoint, load_config, parse_config, read_metrics,
                          run_ablation_mlp, run_training, summarize, violation_rate)

TINY = TrainConfig(episodes=40, freq_g=25, gating_updates=5, save_checkpoint=False,
                   ppo=PpoConfig(hidden=(16, 16)), gating=GatingConfig(hidden=(16, 16), batch_size=16))


def tiny(tmp_path, **kw):
    return dataclasses.replace(TINY, out_dir=str(tmp_path / kw.pop("name", "run")), **kw)


# -- configuration ------------------------------------------------------------------


def test_parse_config_reaches_nested_fields():
    cfg = parse_config("""
        env = nqueens   # comment
        size = 4
        episodes = 12
        ppo.clip = 0.1
        ppo.hidden = 32,32
        gating.batch_size = 64
        reward_complete = 2.5
        balance_labels = false
    """)
    assert (cfg.env, cfg.size, cfg.episodes) == ("nqueens", "4", 12)
    assert cfg.ppo.clip == 0.1 and cfg.ppo.hidden == (32, 32)
    assert cfg.gating.batch_size == 64
    assert cfg.reward_complete == 2.5 and cfg.balance_labels is False


def test_dump_then_parse_round_trip():
    cfg = parse_config("env = coloring\nsize = G2\nseed = 9\nreward_place = none\nppo.entropy_coef = 0.02")
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(TrainConfig())) == TrainConfig()


@pytest.mark.parametrize("text", ["nonsense", "bogus = 1", "ppo.bogus = 1", "episodes = 0",
                                  "backend = magic", "balance_labels = maybe", "freq_g = -5"])
def test_bad_config_lines_are_rejected(text):
    with pytest.raises(ContractError):
        parse_config(text)


def test_load_config_overrides_seed(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("episodes = 7\nseed = 1\n")
    assert load_config(path).seed == 1
    assert load_config(path, seed=4).seed == 4


def test_shipped_configs_parse():
    from pathlib import Path

    configs = sorted((Path(__file__).parent.parent / "configs").glob("*.cfg"))
    assert configs
    for path in configs:
        load_config(path)


# -- buffer D ---------------------------------------------------------------------------


def test_label_buffer_is_fifo_and_bounded():
    D = LabelBuffer(capacity=5, obs_dim=2)
    for i in range(12):
        D.add(np.array([i, -i]), action=i, y=i % 2)
        assert len(D) == min(i + 1, 5)
    order = D.oldest_first()
    assert D.actions[order].tolist() == [7, 8, 9, 10, 11]
    assert D.states[order][:, 0].tolist() == [7, 8, 9, 10, 11]
    assert D.total_added == 12


def test_balanced_sampler_draws_half_negatives():
    D = LabelBuffer(100, 1)
    for i in range(100):
        D.add([i], 0, int(i >= 3))
    batch = D.sampler(32, np.random.default_rng(0))()
    assert int((batch.labels == 0).sum()) == 16
    unbalanced = D.sampler(1000, np.random.default_rng(0), balance=False)()
    assert (unbalanced.labels == 0).mean() < 0.1


def test_sampler_with_one_label_uses_everything():
    D = LabelBuffer(10, 1)
    for i in range(4):
        D.add([i], i, 1)
    batch = D.sampler(8, np.random.default_rng(0))()
    assert set(batch.actions.tolist()) <= {0, 1, 2, 3}
    assert batch.labels.tolist() == [1] * 8


# -- metrics and bookkeeping -----------------------------------------------------------------


def rows_of(flags):
    return [{"episode": i, "total_steps": i + 1, "return": "0.1", "violated": v, "dead_end": 0,
             "success": 1 - v, "steps": 1, "mask_fallback": 0} for i, v in enumerate(flags)]


def test_violation_rate_counts_flagged_episodes():
    rows = rows_of([1, 0, 0, 1, 1])
    assert violation_rate(rows) == 3 / 5
    assert violation_rate(rows, last=2) == 1.0
    assert violation_rate([]) == 0.0
    s = summarize(rows, gating_intervals=0, window=4)
    assert s["violation_rate"] == 3 / 5 and s["final_violation_rate"] == 2 / 4


@pytest.fixture(scope="module")
def psdd_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("psdd")
    return run_training(dataclasses.replace(TINY, out_dir=str(out), save_checkpoint=True))


def test_run_writes_outputs(psdd_run):
    out = psdd_run.out_dir
    for name in ("metrics.csv", "summary.json", "config.txt", "timing.csv", "checkpoint.npz"):
        assert (out / name).exists(), name
    assert parse_config((out / "config.txt").read_text()).out_dir == str(out)
    assert len(read_metrics(psdd_run.metrics_path)) == TINY.episodes


def test_violation_rate_matches_raw_flags(psdd_run):
    rows = read_metrics(psdd_run.metrics_path)
    recomputed = sum(int(r["violated"]) for r in rows) / len(rows)
    summary = json.loads((psdd_run.out_dir / "summary.json").read_text())
    assert recomputed == summary["violation_rate"]
    tail = rows[-summary["window"]:]
    assert sum(int(r["violated"]) for r in tail) / len(tail) == summary["final_violation_rate"]


def test_gating_cadence(psdd_run):
    s = psdd_run.summary
    assert s["gating_intervals"] == s["total_steps"] // TINY.freq_g
    rows = read_metrics(psdd_run.metrics_path)
    first_loss = next(r for r in rows if r["gating_loss"] != "")
    assert int(first_loss["total_steps"]) >= TINY.freq_g


def test_episode_steps_add_up(psdd_run):
    rows = read_metrics(psdd_run.metrics_path)
    assert sum(int(r["steps"]) for r in rows) == psdd_run.summary["total_steps"]
    for r in rows:
        assert 1 <= int(r["steps"]) <= 4 * 8


def test_metrics_are_byte_identical_across_reruns(tmp_path, psdd_run):
    again = run_training(dataclasses.replace(TINY, out_dir=str(tmp_path / "again")))
    assert again.metrics_path.read_bytes() == psdd_run.metrics_path.read_bytes()


def test_different_seed_changes_metrics(tmp_path, psdd_run):
    other = run_training(tiny(tmp_path, seed=1))
    assert other.metrics_path.read_bytes() != psdd_run.metrics_path.read_bytes()


@pytest.mark.parametrize("backend", ["none", "mlp_ablation"])
def test_schema_is_stable_across_backends(tmp_path, psdd_run, backend):
    result = run_training(tiny(tmp_path, backend=backend, name=backend))
    header = result.metrics_path.read_text().splitlines()[0]
    assert header == psdd_run.metrics_path.read_text().splitlines()[0] == ",".join(METRIC_COLUMNS)
    rows = read_metrics(result.metrics_path)
    if backend == "none":
        assert result.summary["gating_intervals"] == 0
        assert all(r["gating_loss"] == "" and r["mask_fallback"] == "0" for r in rows)
        assert all(r["inconsistent_mask"] == "" for r in rows)
    else:
        assert all(r["inconsistent_mask"] != "" for r in rows)


def test_plain_ppo_sees_all_ones_mask(tmp_path):
    result = run_training(tiny(tmp_path, backend="none", episodes=5))
    obs = result.agent.env.reset(np.random.default_rng(0))
    assert result.agent.grounding.mask(obs).tolist() == [1] * result.agent.env.num_actions


def test_ablation_runner_forces_mlp_backend(tmp_path):
    result = run_ablation_mlp(tiny(tmp_path, episodes=5))
    assert result.agent.grounding.name == "mlp_ablation"


def test_max_total_steps_stops_early(tmp_path):
    result = run_training(tiny(tmp_path, episodes=1000, max_total_steps=30))
    assert 30 <= result.summary["total_steps"] < 30 + 32
    assert result.summary["episodes"] < 1000


def test_checkpoint_evaluation(psdd_run):
    report = evaluate_checkpoint(psdd_run.out_dir, episodes=10)
    assert report["episodes"] == 10
    assert 0.0 <= report["violation_rate"] <= 1.0
    assert report == evaluate_checkpoint(psdd_run.out_dir, episodes=10)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gating_update_aborts_with_dump(tmp_path):
    cfg = tiny(tmp_path, gating=GatingConfig(hidden=(16, 16), batch_size=16, lr=float("inf")))
    with pytest.raises(TrainingAborted):
        run_training(cfg)
    out = tmp_path / "run"
    assert (out / "abort_state.npz").exists()
    assert "finite" in (out / "abort_reason.txt").read_text()
    nets, extra = load_checkpoint(out / "abort_state.npz")
    assert {"policy", "value"} <= set(nets)
    assert extra["buffer_states"].shape[0] == TINY.freq_g


# -- single-transition demo -------------------------------------------------------------------


@pytest.fixture(scope="module")
def demo_cfg():
    return TrainConfig(gating=GatingConfig(hidden=(32, 32, 32)), ppo=PpoConfig(hidden=(16,)))


def test_demo_without_steps_keeps_mask(demo_cfg):
    report = demo_single_transition(demo_cfg, steps=0)
    assert report["mask_after"] == report["mask_before"]
    assert report["steps"] == 0 and report["newly_masked"] == []


def test_demo_negative_sample_lowers_the_action(demo_cfg):
    report = demo_single_transition(demo_cfg, label=0)
    a = report["actions"].index(demo_cfg.demo_action)
    assert report["prob_after"][a] < report["prob_before"][a] - 0.05
    assert demo_cfg.demo_action in report["lowered"]
    assert report["mask_after"][a] == 0


def test_demo_positive_sample_masks_nothing_new(demo_cfg):
    report = demo_single_transition(demo_cfg, label=1)
    a = report["actions"].index(demo_cfg.demo_action)
    assert report["newly_masked"] == []
    assert report["mask_after"].count(0) <= report["mask_before"].count(0)
    assert report["prob_after"][a] > report["prob_before"][a]


def test_demo_rejects_unknown_action(demo_cfg):
    with pytest.raises(ContractError):
        demo_single_transition(dataclasses.replace(demo_cfg, demo_action="fill(9,9,9)"))


# -- oracle harness ------------------------------------------------------------------------------


def test_oracle_check_passes_small():
    results = oracle_check(("sdd", "psdd", "map"), instances=12, seed=3)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]


def test_oracle_negative_control_fails_normalization():
    results = oracle_check(("psdd",), instances=6, seed=0, corrupt=True)
    assert any(not r.passed and "normal" in r.name for r in results)


# -- CLI ------------------------------------------------------------------------------------------


def test_cli_compile(tmp_path, capsys):
    assert cli.main(["compile", "sudoku", "2", "--out", str(tmp_path / "c")]) == 0
    report = json.loads((tmp_path / "c" / "report.json").read_text())
    assert report["props"] == 8 and report["actions"] == 8
    for name in ("phi.cnf", "vtree.txt", "phi.sdd"):
        assert (tmp_path / "c" / name).exists(), name


def test_cli_train_eval_and_plot(tmp_path, capsys):
    cfg_path = tmp_path / "t.cfg"
    cfg_path.write_text(dump_config(dataclasses.replace(TINY, episodes=10, save_checkpoint=True)))
    out = tmp_path / "cli_run"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(out), "--quiet",
                     "--set", "seed=2"]) == 0
    assert parse_config((out / "config.txt").read_text()).seed == 2
    assert cli.main(["eval", "--checkpoint", str(out), "--episodes", "3"]) == 0
    assert cli.main(["plot", "--csv", str(out / "metrics.csv"), "--out", str(tmp_path / "p.png")]) == 0
    assert (tmp_path / "p.png").stat().st_size > 0
    assert '"episodes": 3' in capsys.readouterr().out


def test_cli_demo_writes_table(tmp_path):
    cfg_path = tmp_path / "d.cfg"
    cfg_path.write_text("gating.hidden = 16,16\n")
    assert cli.main(["demo-single-transition", "--config", str(cfg_path), "--out", str(tmp_path),
                     "--steps", "5"]) == 0
    lines = (tmp_path / "demo_psdd_y0.csv").read_text().splitlines()
    assert lines[0] == "action,mask_before,mask_after,prob_before,prob_after"
    assert len(lines) == 9


def test_cli_oracle_check_exit_codes(capsys):
    assert cli.main(["oracle-check", "--scope", "psdd", "--instances", "4"]) == 0
    assert cli.main(["oracle-check", "--scope", "psdd", "--instances", "4", "--corrupt"]) == 1
    assert "FAIL" in capsys.readouterr().out
