"""Matplotlib figures written next to the CLI's delimited output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_bench(result, path):
    """Per-iteration throughput, one panel per metric."""
    series = [("decode", result.decode_bps, "bytes/s"),
              ("batch", result.batch_eps, "events/s"),
              ("stream", result.stream_eps, "events/s")]
    series = [s for s in series if s[1]]
    fig, axes = plt.subplots(1, len(series), figsize=(3.2 * len(series), 3), squeeze=False)
    for ax, (name, xs, unit) in zip(axes[0], series):
        ax.bar(range(1, len(xs) + 1), xs, color="0.4")
        ax.set_title(name)
        ax.set_xlabel("iteration")
        ax.set_ylabel(unit)
        ax.ticklabel_format(axis="y", style="sci", scilimits=(0, 0))
    return _finish(fig, path)


def plot_violations(report, path, events=None):
    """Violation positions along the replayed instruction stream, one row per sink kind."""
    kinds = sorted({v.sink for v in report.violations})
    fig, ax = plt.subplots(figsize=(6, 1 + 0.4 * max(1, len(kinds))))
    for row, kind in enumerate(kinds):
        xs = [v.event_index for v in report.violations if v.sink == kind]
        ax.scatter(xs, [row] * len(xs), marker="|", s=200, color="k")
    ax.set_yticks(range(len(kinds)))
    ax.set_yticklabels(kinds)
    ax.set_xlabel("instruction index")
    if events:
        ax.set_xlim(0, max(events, 1))
    if not kinds:
        ax.set_title("no violations")
    return _finish(fig, path)
