"""Figure rendering for CLI report paths.

Every report command writes its delimited output first; these helpers render
a companion PNG next to it. Import stays CLI-side so library users without a
display never touch matplotlib.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import CurvePoint  # noqa: E402
from .solvers import TrainReport  # noqa: E402


def render_training_report(report: TrainReport, path) -> None:
    """Loss and soft coverage per accepted iteration."""
    iters = [r.iteration for r in report.records]
    fig, ax_loss = plt.subplots(figsize=(7, 4.5))
    ax_loss.plot([0] + iters, [report.initial_loss] + [r.loss for r in report.records],
                 color="tab:blue", label="training loss")
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss", color="tab:blue")
    ax_cov = ax_loss.twinx()
    ax_cov.plot([0] + iters,
                [report.initial_soft_coverage] + [r.soft_coverage for r in report.records],
                color="tab:orange", label="soft coverage")
    ax_cov.set_ylabel("soft coverage (%)", color="tab:orange")
    ax_cov.set_ylim(0, 100)
    ax_loss.set_title(f"training trajectory (status: {report.status})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_tradeoff_curve(frontier: list[CurvePoint], path,
                          label: str = "model") -> None:
    """Accuracy against hard coverage along the per-threshold frontier."""
    pts = sorted(frontier, key=lambda p: p.hard_coverage)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot([p.hard_coverage for p in pts], [p.accuracy for p in pts],
            marker="o", markersize=3, label=label)
    ax.set_xlabel("hard coverage (%)")
    ax.set_ylabel("accuracy (%)")
    ax.set_title("accuracy vs reliance on human rules")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_gate_weights(names: list[str], weights: list[float], path) -> None:
    """Horizontal bars for the largest-magnitude gate weights, sign retained."""
    fig, ax = plt.subplots(figsize=(6.5, 0.45 * max(4, len(names)) + 1))
    order = range(len(names) - 1, -1, -1)
    ax.barh([names[i] for i in order], [weights[i] for i in order],
            color=["tab:green" if weights[i] >= 0 else "tab:red" for i in order])
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("gate weight")
    ax.set_title("where the gate defers to human rules")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
