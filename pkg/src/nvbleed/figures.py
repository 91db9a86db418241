"""Figure rendering for CLI report paths.

Every function takes already-computed report rows plus an output path,
renders one PNG with the Agg backend (no display required), and returns the
path.  Figures are a visual companion to the CSV/JSON artifacts: the CSVs
remain the source of truth and are what manifest reruns verify, since PNG
encoding is not guaranteed stable across matplotlib versions.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .exceptions import ValidationError

__all__ = [
    "save_covert_sweep", "save_window_sweep", "save_mitigation_sweep",
    "save_confusion", "save_trace", "save_transfer_timeline",
]

_GRID = {"alpha": 0.3, "linewidth": 0.6}


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_covert_sweep(reports, path: str | Path) -> Path:
    """Bandwidth and error rate vs sender size, one line per protocol."""
    if not reports:
        raise ValidationError("no covert reports to plot")
    rows = [r.to_dict() if hasattr(r, "to_dict") else dict(r) for r in reports]
    protocols = sorted({r["protocol"] for r in rows})
    fig, (ax_bw, ax_err) = plt.subplots(1, 2, figsize=(9, 3.6))
    for proto in protocols:
        pts = sorted((r["sender_size"], r["bandwidth_bps"], r["error_rate"])
                     for r in rows if r["protocol"] == proto)
        sizes = [p[0] for p in pts]
        ax_bw.plot(sizes, [p[1] / 1e3 for p in pts], marker="o", label=proto)
        ax_err.plot(sizes, [100 * p[2] for p in pts], marker="o", label=proto)
    for ax, ylabel in ((ax_bw, "bandwidth (kb/s)"), (ax_err, "error rate (%)")):
        ax.set_xscale("log")
        ax.set_xlabel("sender transfer size (bytes)")
        ax.set_ylabel(ylabel)
        ax.grid(True, **_GRID)
        ax.legend()
    ax_bw.set_yscale("log")
    fig.tight_layout()
    return _finish(fig, path)


def save_window_sweep(rows, path: str | Path) -> Path:
    """Classification F1 vs feature-window length (cross-VM observer)."""
    if not rows:
        raise ValidationError("no sweep rows to plot")
    rows = sorted(rows, key=lambda r: r["window"])
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot([r["window"] for r in rows], [r["f1"] for r in rows],
            marker="o", label="per-window F1")
    if "trace_f1" in rows[0]:
        ax.plot([r["window"] for r in rows], [r["trace_f1"] for r in rows],
                marker="s", linestyle="--", label="per-trace vote F1")
    ax.set_xlabel("window length (samples)")
    ax.set_ylabel("macro F1")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, **_GRID)
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_mitigation_sweep(rows, path: str | Path, *,
                          disabled_f1: float | None = None,
                          baseline_f1: float | None = None) -> Path:
    """F1 vs counter sampling rate, with optional shutoff/baseline lines."""
    if not rows:
        raise ValidationError("no sweep rows to plot")
    rows = sorted(rows, key=lambda r: r["rate_hz"])
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot([r["rate_hz"] for r in rows], [r["f1"] for r in rows],
            marker="o", label="rate-limited counters")
    if disabled_f1 is not None:
        ax.axhline(disabled_f1, color="tab:red", linestyle="--",
                   label="counters disabled (timing only)")
    if baseline_f1 is not None:
        ax.axhline(baseline_f1, color="gray", linestyle=":",
                   label="random guess")
    ax.set_xscale("log")
    ax.set_xlabel("counter sampling rate (Hz)")
    ax.set_ylabel("macro F1")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, **_GRID)
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_confusion(labels, matrix, path: str | Path) -> Path:
    """Row-normalized confusion heatmap (true rows, predicted columns)."""
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
        raise ValidationError("confusion matrix must be square and non-empty")
    if len(labels) != mat.shape[0]:
        raise ValidationError("one label per confusion-matrix row required")
    sums = mat.sum(axis=1, keepdims=True)
    norm = np.divide(mat, sums, out=np.zeros_like(mat), where=sums > 0)
    n = mat.shape[0]
    size = max(4.0, min(10.0, 0.22 * n + 2.0))
    fig, ax = plt.subplots(figsize=(size, size))
    im = ax.imshow(norm, cmap="viridis", vmin=0.0, vmax=1.0)
    fig.colorbar(im, ax=ax, fraction=0.046)
    ticks = range(n)
    small = n <= 25
    ax.set_xticks(ticks, labels=labels if small else ["" for _ in ticks],
                  rotation=90, fontsize=7)
    ax.set_yticks(ticks, labels=labels if small else ["" for _ in ticks],
                  fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.tight_layout()
    return _finish(fig, path)


def save_trace(trace, path: str | Path, *, channels=None,
               max_samples: int = 2000) -> Path:
    """Stacked per-channel series of one recorded trace."""
    chans = tuple(channels) if channels is not None else trace.channels
    if not chans:
        raise ValidationError("trace has no channels to plot")
    n = min(trace.n_samples, max_samples)
    t_s = (trace.times_ns[:n] - trace.times_ns[0]) / 1e9
    fig, axes = plt.subplots(len(chans), 1, figsize=(7.5, 1.1 * len(chans) + 1.2),
                             sharex=True, squeeze=False)
    for ax, ch in zip(axes[:, 0], chans):
        ax.plot(t_s, trace.series(ch)[:n], linewidth=0.7)
        ax.set_ylabel(ch, fontsize=7)
        ax.grid(True, **_GRID)
    axes[-1, 0].set_xlabel("time (s)")
    axes[0, 0].set_title(f"{trace.class_name} ({trace.scenario})", fontsize=9)
    fig.tight_layout()
    return _finish(fig, path)


def save_transfer_timeline(events, path: str | Path, *,
                           max_events: int = 4000) -> Path:
    """Transfer payloads vs start time (architecture-extraction view)."""
    if not events:
        raise ValidationError("no transfer events to plot")
    ev = events[:max_events]
    t_ms = [e.start_ns / 1e6 for e in ev]
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.stem(t_ms, [e.payload_bytes for e in ev], basefmt=" ",
            markerfmt=".", linefmt="tab:blue")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("transfer payload (bytes)")
    ax.set_yscale("log")
    ax.grid(True, **_GRID)
    fig.tight_layout()
    return _finish(fig, path)
