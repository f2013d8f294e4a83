"""Figures rendered next to the tab-separated reports.

Everything draws with the non-interactive Agg backend and returns the path
written.
"""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
PSNR_COLOR = "#1565C0"
SSIM_COLOR = "#C62828"
MSE_COLOR = "#2E7D32"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_eval_report(report, path) -> Path:
    """Mean PSNR and SSIM per suite cell."""
    cells = [a.cell for a in report.aggregates]
    x = range(len(cells))
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(6.0, 0.6 * len(cells) + 3), 3.0))
        ax1.plot(x, [a.mean_psnr for a in report.aggregates], "o-", color=PSNR_COLOR)
        ax1.set_ylabel("mean PSNR (dB)")
        ax2.plot(x, [a.mean_ssim for a in report.aggregates], "s-", color=SSIM_COLOR)
        ax2.set_ylabel("mean SSIM")
        for ax in (ax1, ax2):
            ax.set_xticks(list(x))
            ax.set_xticklabels(cells, rotation=45, ha="right")
            ax.grid(axis="y", alpha=0.3)
        fig.suptitle(f"{report.suite} (seed {report.seed})")
        fig.tight_layout()
        return _save(fig, path)


def plot_alpha_sweep(report, path) -> Path:
    """Validation MSE against the transmission-loss weight, per seed and averaged."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for s in report.seeds:
            pts = [(r.alpha, r.val_mse) for r in report.rows if r.seed == s and math.isfinite(r.val_mse)]
            if pts:
                ax.plot(*zip(*pts), "o", color=MSE_COLOR, alpha=0.35, ms=4)
        curve = [(a, m) for a, m in report.curve() if math.isfinite(m)]
        if curve:
            ax.plot(*zip(*curve), "-", color=MSE_COLOR, lw=1.8, label="mean over seeds")
            best = min(curve, key=lambda p: p[1])
            ax.annotate(f"min at {best[0]:g}", best, textcoords="offset points", xytext=(0, 8), ha="center")
        ax.set_xlabel("alpha (transmission loss weight)")
        ax.set_ylabel("validation MSE")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_training_log(rows: list[dict], path) -> Path:
    epochs = [r["epoch"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(epochs, [r["train_loss"] for r in rows], "-", color=PSNR_COLOR, label="train loss")
        val = [(r["epoch"], r["val_mse"]) for r in rows if math.isfinite(r["val_mse"])]
        if val:
            ax.plot(*zip(*val), "--", color=MSE_COLOR, label="validation MSE")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
