"""Learning-curve and violation-curve images from metrics CSVs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` entries; same length as the input."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return x
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def plot_curves(csv_paths: Sequence[str | Path], out_path: str | Path, window: int = 100,
                labels: Sequence[str] | None = None) -> Path:
    """Return vs total steps (left) and running violation rate vs episode (right)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .trainer import read_metrics

    fig, (ax_ret, ax_viol) = plt.subplots(1, 2, figsize=(10, 4))
    for i, path in enumerate(csv_paths):
        rows = read_metrics(path)
        label = labels[i] if labels else Path(path).parent.name
        steps = [int(r["total_steps"]) for r in rows]
        returns = [float(r["return"]) for r in rows]
        violated = [int(r["violated"]) for r in rows]
        ax_ret.plot(steps, moving_average(returns, window), label=label)
        ax_viol.plot(np.arange(len(rows)), np.cumsum(violated) / np.arange(1, len(rows) + 1), label=label)
    ax_ret.set_xlabel("environment steps")
    ax_ret.set_ylabel(f"episode return ({window}-episode mean)")
    ax_viol.set_xlabel("episode")
    ax_viol.set_ylabel("violation rate so far")
    ax_viol.set_ylim(0, 1)
    for ax in (ax_ret, ax_viol):
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
