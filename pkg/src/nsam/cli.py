"""Command-line entry point: ``nsam <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .envs import make_env, write_spec_files
from .grounding import CompiledDomain
from .oracle import SCOPES, oracle_check
from .psdd import attach_params
from .sdd import emit_sdd, sdd_size
from .trainer import (demo_single_transition, evaluate_checkpoint, load_config, parse_config,
                      run_ablation_mlp, run_training)
from .vtree import emit_vtree


def cmd_compile(args) -> int:
    env = make_env(args.env, args.size)
    out = Path(args.out or f"compiled/{args.env}{args.size}")
    write_spec_files(env.spec, out)
    domain = CompiledDomain(env.spec, args.vtree)
    (out / "vtree.txt").write_text(emit_vtree(domain.manager.vtree))
    (out / "phi.sdd").write_text(emit_sdd(domain.phi))
    psdd = attach_params(domain.phi)
    report = {"env": args.env, "size": str(args.size), "vtree": args.vtree,
              "props": env.spec.num_props, "actions": env.spec.num_actions,
              "phi_sdd_size": sdd_size(domain.phi),
              "precondition_sdd_sizes": [sdd_size(q) for q in domain.preconditions],
              "psdd_params": psdd.total_params}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps({k: v for k, v in report.items() if k != "precondition_sdd_sizes"}))
    print(f"wrote {out}")
    return 0


def _config(args):
    cfg = load_config(args.config, args.seed)
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    runner = run_ablation_mlp if cfg.backend == "mlp_ablation" else run_training
    result = runner(cfg, quiet=args.quiet)
    print(json.dumps(result.summary, sort_keys=True))
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    print(json.dumps(evaluate_checkpoint(args.checkpoint, args.episodes, args.seed), sort_keys=True))
    return 0


def cmd_oracle_check(args) -> int:
    results = oracle_check(args.scope or SCOPES, args.instances, args.seed, corrupt=args.corrupt)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_demo(args) -> int:
    cfg = _config(args)
    report = demo_single_transition(cfg, label=args.label, steps=args.steps, backend=args.backend)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = ["action,mask_before,mask_after,prob_before,prob_after"]
    for row in zip(report["actions"], report["mask_before"], report["mask_after"],
                   report["prob_before"], report["prob_after"]):
        table.append(f"{row[0]},{row[1]},{row[2]},{row[3]:.6f},{row[4]:.6f}")
    path = out / f"demo_{report['backend']}_y{args.label}.csv"
    path.write_text("\n".join(table) + "\n")
    print(json.dumps({k: report[k] for k in ("backend", "action", "label", "steps", "final_loss",
                                             "masked_out", "newly_masked", "lowered")}))
    print(f"probability table: {path}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_curves

    out = args.out or str(Path(args.csv[0]).with_suffix(".png"))
    print(f"wrote {plot_curves(args.csv, out, args.window)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a domain and write its circuits")
    p.add_argument("env", choices=("sudoku", "nqueens", "coloring"))
    p.add_argument("size", help="board size, queen count, or G1..G4 / edge-list path")
    p.add_argument("--vtree", choices=("balanced", "right-linear"), default="balanced")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compile)

    for name, func, helptext in (("train", cmd_train, "run the training loop"),
                                 ("demo-single-transition", cmd_demo, "train grounding on one sample")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="override out_dir")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--quiet", action="store_true")
        else:
            p.add_argument("--label", type=int, choices=(0, 1), default=0)
            p.add_argument("--steps", type=int, help="gating updates (default: demo_steps)")
            p.add_argument("--backend", choices=("psdd", "mlp_ablation"))

    p = sub.add_parser("eval", help="roll out a saved agent")
    p.add_argument("--checkpoint", required=True, help="run directory")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=12345)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", help="brute-force and finite-difference oracles")
    p.add_argument("--scope", nargs="+", choices=SCOPES)
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help="negative control: break one parameter block")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("plot", help="learning and violation curves from metrics CSVs")
    p.add_argument("--csv", nargs="+", required=True)
    p.add_argument("--out")
    p.add_argument("--window", type=int, default=100)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
