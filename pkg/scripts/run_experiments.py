"""Run shipped configs over several seeds and tabulate the summaries.

    python3 scripts/run_experiments.py sudoku2 nqueens4 --seeds 0 1 2 3 4
    python3 scripts/run_experiments.py sudoku3 sudoku3_ppo --plot

Each run writes to ``<out>/<config>_s<seed>``; the table goes to
``<out>/results.md`` and one learning-curve figure per config to ``<out>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import time
from pathlib import Path

from nsam.plotting import plot_curves
from nsam.trainer import load_config, run_training

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
COLUMNS = ("final_violation_rate", "final_success_rate", "final_return", "violation_rate", "mean_return",
           "total_steps", "episodes")


def run_one(name: str, seed: int, out_root: Path) -> dict:
    cfg = load_config(CONFIG_DIR / f"{name}.cfg", seed)
    cfg = dataclasses.replace(cfg, out_dir=str(out_root / f"{name}_s{seed}"))
    start = time.perf_counter()
    result = run_training(cfg)
    return {"config": name, "seed": seed, "seconds": time.perf_counter() - start, **result.summary}


def markdown_table(rows: list[dict]) -> str:
    head = ("config", "seed", *COLUMNS, "seconds")
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r["config"], str(r["seed"])]
        cells += [f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c]) for c in COLUMNS]
        cells.append(f"{r['seconds']:.0f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("configs", nargs="+", help="config names under configs/ (without .cfg)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--out", default="runs/experiments")
    parser.add_argument("--plot", action="store_true", help="one learning-curve figure per config")
    args = parser.parse_args()

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.configs:
        for seed in args.seeds:
            row = run_one(name, seed, out_root)
            rows.append(row)
            print(json.dumps({k: row[k] for k in ("config", "seed", *COLUMNS[:3])}), flush=True)
        if args.plot:
            csvs = [out_root / f"{name}_s{s}" / "metrics.csv" for s in args.seeds]
            plot_curves(csvs, out_root / f"{name}.png", labels=[f"seed {s}" for s in args.seeds])
    (out_root / "results.md").write_text(markdown_table(rows))
    (out_root / "results.json").write_text(json.dumps(rows, indent=2) + "\n")
    print(f"wrote {out_root / 'results.md'}")


if __name__ == "__main__":
    main()
