"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps repeated renders byte-stable
_PNG_META = {"Software": None}


def plot_history(history, path):
    epochs = [h.epoch for h in history]
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    ax1.plot(epochs, [h.loss for h in history], "o-", color="tab:blue", label="loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [100 * h.accuracy for h in history], "s--", color="tab:green", label="accuracy")
    ax2.set_ylabel("training accuracy (%)", color="tab:green")
    ax2.set_ylim(0, 100)
    ax1.set_title("Patch classifier training")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_report(reports, path):
    """Grouped bars of FRR / FAR / ACE per evaluation level."""
    metrics = ("frr", "far", "ace")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(reports), 1)
    for i, rep in enumerate(reports):
        vals = [getattr(rep, m) or 0.0 for m in metrics]
        xs = [j + i * width for j in range(len(metrics))]
        bars = ax.bar(xs, vals, width=width, label=f"{rep.level} (acc {rep.accuracy or 0:.2f}%)")
        for b, v in zip(bars, vals):
            ax.annotate(f"{v:.2f}", (b.get_x() + b.get_width() / 2, v), ha="center", va="bottom", fontsize=8)
    ax.set_xticks([j + width * (len(reports) - 1) / 2 for j in range(len(metrics))])
    ax.set_xticklabels([m.upper() for m in metrics])
    ax.set_ylabel("error (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
