"""Training-curve figures written next to the metric log."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .training import MetricLog  # noqa: E402


def plot_training_curves(log: MetricLog, path, title: str = "") -> None:
    """Training loss (left axis) and every validation metric (right axis) against iteration."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    it, loss = log.series("train", "loss")
    ax.plot(it, loss, color="tab:blue", linewidth=1.0, label="train loss")
    ax.set_xlabel("iteration / epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    metrics = sorted({r["metric"] for r in log.records if r["split"] == "valid"})
    if metrics:
        ax2 = ax.twinx()
        for m in metrics:
            vi, vv = log.series("valid", m)
            ax2.plot(vi, vv, marker="o", markersize=3, color="tab:orange", label=f"valid {m}")
        ax2.set_ylabel("validation " + ", ".join(metrics), color="tab:orange")
        ax2.set_ylim(0.0, 1.0)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
