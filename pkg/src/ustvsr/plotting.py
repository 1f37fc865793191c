"""Figures written next to the CSV reports (loss curves, PSNR vs. t / s, bench timings)."""
from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def new_figure(width=6.0, height=None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    ax.grid(True, alpha=0.3)
    return fig, ax


def save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curve(losses, path):
    fig, ax = new_figure()
    steps = [s for s, _ in losses]
    ax.plot(steps, [v for _, v in losses], lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    save(fig, path)


def plot_eval(rows, path, baseline_rows=None):
    """PSNR against ``t``, one line per scale factor."""
    fig, ax = new_figure()
    for label, data, style in (("model", rows, "-o"), ("baseline", baseline_rows or [], "--x")):
        by_s = defaultdict(list)
        for r in data:
            by_s[r.s].append((r.t, r.psnr))
        for s, pts in sorted(by_s.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], style, ms=3, label=f"{label} s={s:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=7)
    save(fig, path)


def plot_bench(rows, path):
    fig, ax = new_figure()
    by_method = defaultdict(list)
    for s, method, ms in rows:
        if ms is not None:
            by_method[method].append((s, ms))
    for method, pts in by_method.items():
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "-o", ms=3, label=method)
    ax.set_xlabel("scale factor s")
    ax.set_ylabel("ms / call")
    ax.legend(fontsize=7)
    save(fig, path)
