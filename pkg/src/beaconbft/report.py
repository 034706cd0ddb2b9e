"""Figures for a finished run: leader fairness, malicious streaks, commit latency."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simnet.metrics import Metrics, commit_latencies  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def leader_histogram_figure(metrics: Metrics, path: Path, malicious_share: float | None = None) -> Path:
    counts = np.asarray(metrics.leader_histogram, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.arange(len(counts)), counts, color="#4c72b0")
    if counts.sum():
        ax.axhline(counts.sum() / len(counts), color="black", lw=1, ls="--", label="uniform")
        ax.legend(loc="upper right")
    ax.set_xlabel("node index")
    ax.set_ylabel("views led")
    title = "Leader selection"
    if malicious_share is not None:
        title += f" (malicious-led share {malicious_share:.3f})"
    ax.set_title(title)
    return _save(fig, path)


def streak_figure(metrics: Metrics, path: Path) -> Path:
    hist = {int(k): v for k, v in metrics.malicious_streak_histogram.items()}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if hist:
        lengths = np.arange(1, max(hist) + 1)
        ax.bar(lengths, [hist.get(int(d), 0) for d in lengths], color="#c44e52")
        ax.set_xticks(lengths)
    ax.set_yscale("symlog")
    ax.set_xlabel("consecutive malicious-led views")
    ax.set_ylabel("maximal streaks")
    ax.set_title("Malicious leader streaks")
    return _save(fig, path)


def latency_figure(trace: Sequence[dict], path: Path, delta: float = 1.0) -> Path:
    lat = np.sort(np.asarray(commit_latencies(trace), dtype=float)) / delta
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if lat.size:
        ax.step(lat, np.arange(1, lat.size + 1) / lat.size, where="post", color="#55a868")
    ax.set_xlabel("commit latency (multiples of delta)")
    ax.set_ylabel("fraction of commits")
    ax.set_title("Commit latency CDF")
    ax.set_ylim(0, 1.02)
    return _save(fig, path)


def write_report(metrics: Metrics, trace: Sequence[dict], out_dir: Path, delta: float = 1.0) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    share = metrics.malicious_leader_views / metrics.views if metrics.views else None
    return [
        leader_histogram_figure(metrics, out_dir / "leaders.png", share),
        streak_figure(metrics, out_dir / "streaks.png"),
        latency_figure(trace, out_dir / "latency.png", delta),
    ]
