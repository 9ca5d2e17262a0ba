"""Figure rendering for experiment reports (PNG files next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def accuracy_figure(series: dict, path, title: str, xlabel: str = "round"):
    """One line per named accuracy series."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in series:
        ys = series[name]
        ax.plot(range(1, len(ys) + 1), ys, label=name, linewidth=1.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def trust_figure(phi_series: dict, path, title: str = "trust scores per round"):
    """One line per trainer's phi trajectory."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for tid in sorted(phi_series):
        ys = phi_series[tid]
        ax.plot(range(1, len(ys) + 1), ys, label=f"trainer {tid}", linewidth=1.6)
    ax.set_xlabel("round")
    ax.set_ylabel("phi")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(ncol=2, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bar_figure(labels, values, path, title: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar([str(l) for l in labels], values, color="#4878a8")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(rows, path, title: str = "max accuracy by trainer:validator split"):
    """Max accuracy bars with the argmax iteration annotated above each."""
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    labels = [f"{r.trainers}:{r.validators}" for r in rows]
    values = [r.max_accuracy for r in rows]
    bars = ax.bar(labels, values, color="#4878a8")
    for bar, row in zip(bars, rows):
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height() + 0.004,
                f"it {row.argmax_iteration}", ha="center", fontsize=7)
    ax.set_xlabel("trainers : validators")
    ax.set_ylabel("max accuracy (median of seeds)")
    ax.set_title(title)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
