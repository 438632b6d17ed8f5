"""Figure rendering for the report paths.

Every figure lands next to the delimited output it illustrates. The Agg
backend is forced so rendering works on headless machines.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .corpus import FrequencyTable  # noqa: E402
from .eval import TRIAL_METRICS, MetricReport  # noqa: E402

_LABELS = {"recall_at_1": "R @ 1", "recall_at_10": "R @ 10", "ndcg_at_10": "nDCG @ 10"}


def report_figure(report: MetricReport, path: str | Path) -> None:
    """Bar chart of per-trial metrics with the trial mean overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    n_trials = len(report.per_trial)
    width = 0.8 / n_trials
    for trial_idx, trial in enumerate(report.per_trial):
        values = [100.0 * trial[m] for m in TRIAL_METRICS]
        offset = (trial_idx - (n_trials - 1) / 2) * width
        positions = [i + offset for i in range(len(TRIAL_METRICS))]
        ax.bar(positions, values, width=width, label=f"trial {trial_idx}")
    ax.set_xticks(range(len(TRIAL_METRICS)))
    ax.set_xticklabels([_LABELS[m] for m in TRIAL_METRICS])
    ax.set_ylabel("%")
    ax.set_title(report.name)
    if n_trials > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def threshold_figure(rows: list[dict], path: str | Path) -> None:
    """Metric trends across frequency thresholds."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row["x_percent"] for row in rows]
    for metric in TRIAL_METRICS:
        ax.plot(xs, [100.0 * row[metric] for row in rows], marker="o", label=_LABELS[metric])
    ax.set_xlabel("frequency threshold X (%)")
    ax.set_ylabel("%")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def frequency_figure(table: FrequencyTable, path: str | Path) -> None:
    """Citation counts by frequency rank, log scale on both axes."""
    counts = sorted(table.counts.values(), reverse=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(counts) + 1), counts)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("passage rank by citation count")
    ax.set_ylabel("citations")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
