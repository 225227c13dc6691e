"""PR-curve figures written next to the CLI's JSON/CSV reports."""

from __future__ import annotations

import os
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _step_curve(ax, curve: Sequence[Sequence[float]], label: str, **kw) -> None:
    recall = [0.0] + [r for r, _ in curve]
    precision = [curve[0][1] if curve else 1.0] + [p for _, p in curve]
    ax.step(recall, precision, where="post", label=label, **kw)


def _finish(fig, ax, path: str | os.PathLike, title: str) -> Path:
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower left", fontsize=7)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_pr_curve(curve: Sequence[Sequence[float]], pr_auc: float, path: str | os.PathLike,
                  title: str = "precision-recall") -> Path:
    """Single PR curve (``[[recall, precision], ...]``) saved as PNG."""
    fig, ax = plt.subplots(figsize=(5, 4))
    _step_curve(ax, curve, f"PR-AUC {pr_auc:.3f}")
    return _finish(fig, ax, path, title)


def plot_sweep(rows, out_dir: str | os.PathLike) -> list[Path]:
    """One figure per walk parameter; each shows the best-scoring config for every value.

    ``rows`` are sweep rows with ``num_walks, walk_length, p, q, pr_auc, pr_curve``.
    """
    out = Path(out_dir)
    written = []
    for param in ("num_walks", "walk_length", "p", "q"):
        best = defaultdict(lambda: None)
        for row in rows:
            key = getattr(row, param)
            if best[key] is None or row.pr_auc > best[key].pr_auc:
                best[key] = row
        fig, ax = plt.subplots(figsize=(5, 4))
        for key in sorted(best):
            r = best[key]
            _step_curve(ax, r.pr_curve, f"{param}={key}: {r.pr_auc:.3f} "
                                         f"(r={r.num_walks}, l={r.walk_length}, p={r.p}, q={r.q})")
        written.append(_finish(fig, ax, out / f"sweep-pr-{param}.png", f"best PR curve per {param}"))
    return written
