"""Coverage, discrimination, trade-off curves, and threshold calibration.

Soft coverage is the mean gate value (percent); hard coverage at threshold t
is the percent of rows whose gate value clears t. Both average over all rows,
including rows where no rule applies; pass applicable_only=True to restrict
soft coverage to rule-applicable rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError
from .model import NOT_APPLICABLE, MoEModel, expert_prob, gate_prob

DEFAULT_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class CurvePoint:
    gate_threshold: float
    pred_threshold: float
    accuracy: float          # percent
    hard_coverage: float     # percent


def soft_coverage(model: MoEModel, X: np.ndarray,
                  g: np.ndarray | None = None,
                  applicable_only: bool = False) -> float:
    rho = gate_prob(model, X)
    if applicable_only:
        if g is None:
            raise ValueError("applicable_only requires guideline values")
        rho = rho[np.asarray(g) != NOT_APPLICABLE]
        if rho.size == 0:
            raise MetricError("no rule-applicable rows to average over")
    return 100.0 * float(np.mean(rho))


def hard_coverage(model: MoEModel, X: np.ndarray, t: float) -> float:
    rho = gate_prob(model, X)
    return 100.0 * float(np.mean(rho >= t))


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores receive average rank."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: both classes must be present")
    ranks = rankdata(scores)
    return float((np.sum(ranks[labels == 1]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _hard_gated_scores(model: MoEModel, X: np.ndarray, g: np.ndarray,
                       gate_threshold: float) -> np.ndarray:
    """Predicted values under hard gating: follow g where it applies and the
    gate clears the threshold, otherwise the expert."""
    f = expert_prob(model, X)
    rho = gate_prob(model, X)
    g = np.asarray(g)
    use_rule = (g != NOT_APPLICABLE) & (rho >= gate_threshold)
    return np.where(use_rule, g.astype(float), f)


def accuracy_coverage_curve(model: MoEModel, X: np.ndarray, y: np.ndarray,
                            g: np.ndarray,
                            gate_grid: np.ndarray | None = None,
                            pred_grid: np.ndarray | None = None,
                            ) -> tuple[list[CurvePoint], list[CurvePoint]]:
    """All (gate threshold, prediction threshold) operating points.

    Returns (points, frontier): one CurvePoint per grid pair sorted by gate
    threshold then prediction threshold, plus the per-gate-threshold best
    accuracy frontier (ties toward the larger prediction threshold).
    """
    gate_grid = DEFAULT_GRID if gate_grid is None else np.asarray(gate_grid, dtype=float)
    pred_grid = DEFAULT_GRID if pred_grid is None else np.asarray(pred_grid, dtype=float)
    if gate_grid.size == 0 or pred_grid.size == 0:
        raise ValueError("threshold grids must be nonempty")
    y = np.asarray(y)
    rho = gate_prob(model, X)

    points: list[CurvePoint] = []
    frontier: list[CurvePoint] = []
    for t in np.sort(gate_grid):
        scores = _hard_gated_scores(model, X, g, t)
        cov = 100.0 * float(np.mean(rho >= t))
        best = None
        for tau in np.sort(pred_grid):
            acc = 100.0 * float(np.mean((scores >= tau).astype(int) == y))
            point = CurvePoint(float(t), float(tau), acc, cov)
            points.append(point)
            if best is None or acc >= best.accuracy:
                best = point
        frontier.append(best)
    return points, frontier


def calibrate_thresholds(model: MoEModel, X: np.ndarray, y: np.ndarray,
                         g: np.ndarray, objective: str = "accuracy",
                         gate_grid: np.ndarray | None = None,
                         pred_grid: np.ndarray | None = None) -> tuple[float, float]:
    """Grid pair maximizing the objective on validation data.

    Ties break toward the larger gate threshold (prefer human reliance), then
    the larger prediction threshold.
    """
    if objective not in ("accuracy", "youden"):
        raise ValueError(f"unknown calibration objective {objective!r}")
    gate_grid = DEFAULT_GRID if gate_grid is None else np.asarray(gate_grid, dtype=float)
    pred_grid = DEFAULT_GRID if pred_grid is None else np.asarray(pred_grid, dtype=float)
    y = np.asarray(y)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if objective == "youden" and (n_pos == 0 or n_neg == 0):
        raise MetricError("Youden calibration requires both classes")

    best_score, best_pair = -np.inf, None
    for t in np.sort(gate_grid):
        scores = _hard_gated_scores(model, X, g, t)
        for tau in np.sort(pred_grid):
            pred = (scores >= tau).astype(int)
            if objective == "accuracy":
                value = float(np.mean(pred == y))
            else:
                tpr = float(np.sum((pred == 1) & (y == 1))) / n_pos
                fpr = float(np.sum((pred == 1) & (y == 0))) / n_neg
                value = tpr - fpr
            if value >= best_score:
                best_score, best_pair = value, (float(t), float(tau))
    return best_pair


def curve_to_csv(points: list[CurvePoint]) -> str:
    """Render curve points as the delimited interchange format (6 decimals)."""
    ordered = sorted(points, key=lambda p: (p.gate_threshold, p.pred_threshold))
    lines = ["gate_threshold,pred_threshold,accuracy,hard_coverage"]
    for p in ordered:
        lines.append(f"{p.gate_threshold:.6f},{p.pred_threshold:.6f},"
                     f"{p.accuracy:.6f},{p.hard_coverage:.6f}")
    return "\n".join(lines) + "\n"
