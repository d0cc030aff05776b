"""Per-segment anomaly indicators, baselines, and ranking metrics.

Indicators reduce the abnormal part E to one score per road segment:
AST sums a row, MST takes its maximum, TAT@k averages its k largest
entries. Metrics are computed from scratch with tie-aware formulas;
the fixed sort order (descending score, ascending index) only makes
reports reproducible and never changes a metric value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .decompose import DecompositionProblem, DecompositionResult, solve
from .geo import point_to_chords
from .routegrid import DurationMatrix, RoadSegment

BASELINE_MODES = ("full", "wst", "wsa", "uis")

INDICATORS = ("ast", "mst", "tat")


class UndefinedMetricError(ValueError):
    """Labels do not contain both classes."""


def ast_scores(E) -> np.ndarray:
    """All Stop Time: row sums of the abnormal part."""
    return np.asarray(E, dtype=float).sum(axis=1)


def mst_scores(E) -> np.ndarray:
    """Maximum Stop Time: row maxima of the abnormal part."""
    return np.asarray(E, dtype=float).max(axis=1)


def tat_scores(E, k: int) -> np.ndarray:
    """Top-k Averaged stop Time: mean of each row's k largest entries."""
    if k < 1:
        raise ValueError("k must be at least 1")
    E = np.asarray(E, dtype=float)
    k = min(k, E.shape[1])
    top = np.sort(E, axis=1)[:, -k:]
    return top.mean(axis=1)


def indicator_scores(E, indicator: str, k: int = 2) -> np.ndarray:
    if indicator == "ast":
        return ast_scores(E)
    if indicator == "mst":
        return mst_scores(E)
    if indicator == "tat":
        return tat_scores(E, k)
    raise ValueError(f"unknown indicator {indicator!r}")


def _check_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("labels must contain both classes")
    return scores, labels


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative.

    Ties count one half; equals the trapezoidal area under the ROC
    curve swept over all distinct thresholds.
    """
    scores, labels = _check_labels(scores, labels)
    n = len(scores)
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(n, dtype=float)
    ranks[order] = np.arange(1, n + 1)
    sorted_scores = scores[order]
    start = 0
    for i in range(1, n + 1):
        if i == n or sorted_scores[i] != sorted_scores[start]:
            if i - start > 1:
                ranks[order[start:i]] = ranks[order[start:i]].mean()
            start = i
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) at every distinct threshold, descending, plus (0, 0)."""
    scores, labels = _check_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    order = np.lexsort((np.arange(len(scores)), -scores))
    pts = [(0.0, 0.0)]
    tp = fp = 0
    s_sorted = scores[order]
    l_sorted = labels[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and s_sorted[j] == s_sorted[i]:
            tp += int(l_sorted[j] == 1)
            fp += int(l_sorted[j] == 0)
            j += 1
        pts.append((fp / n_neg, tp / n_pos))
        i = j
    return pts


def precision_recall_curve(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) at every distinct threshold, descending."""
    scores, labels = _check_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    order = np.lexsort((np.arange(len(scores)), -scores))
    pts = []
    tp = fp = 0
    s_sorted = scores[order]
    l_sorted = labels[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and s_sorted[j] == s_sorted[i]:
            tp += int(l_sorted[j] == 1)
            fp += int(l_sorted[j] == 0)
            j += 1
        pts.append((tp / n_pos, tp / (tp + fp)))
        i = j
    return pts


def average_precision(scores, labels) -> float:
    """Area under the precision-recall curve by the step rule.

    AP = sum over distinct thresholds of (recall_k - recall_{k-1}) *
    precision_k; items with tied scores enter together.
    """
    pts = precision_recall_curve(scores, labels)
    ap = 0.0
    prev_recall = 0.0
    for recall, precision in pts:
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


@dataclass
class MetricReport:
    ap: float
    auc: float
    n_pos: int
    n_neg: int
    pr_curve: list[tuple[float, float]]
    roc_points: list[tuple[float, float]]

    def to_json(self, extra: dict | None = None) -> str:
        payload = {
            "ap": self.ap,
            "auc": self.auc,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "pr_curve": [[r, p] for r, p in self.pr_curve],
            "roc_curve": [[f, t] for f, t in self.roc_points],
        }
        if extra:
            payload.update(extra)
        return json.dumps(payload, sort_keys=True)


def evaluate(scores, labels) -> MetricReport:
    scores, labels = _check_labels(scores, labels)
    return MetricReport(
        ap=average_precision(scores, labels),
        auc=roc_auc(scores, labels),
        n_pos=int((labels == 1).sum()),
        n_neg=int((labels == 0).sum()),
        pr_curve=precision_recall_curve(scores, labels),
        roc_points=roc_curve(scores, labels),
    )


def label_segments(
    truth_spots: list[tuple[float, float]],
    segments: list[RoadSegment],
    radius: float = 100.0,
) -> np.ndarray:
    """0/1 labels: a segment is positive if any spot is within radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    labels = np.zeros(len(segments), dtype=int)
    if not truth_spots:
        return labels
    starts = np.array([s.r_s for s in segments], dtype=float)
    ends = np.array([s.r_e for s in segments], dtype=float)
    for spot in truth_spots:
        dist, _ = point_to_chords(tuple(spot), starts, ends)
        labels[dist <= radius] = 1
    return labels


def run_baseline(
    mode: str,
    matrix: DurationMatrix,
    problem: DecompositionProblem | None = None,
    uis_matrix: DurationMatrix | None = None,
) -> tuple[np.ndarray, DecompositionResult | None]:
    """AST scores under one of the comparison strategies.

    full solves the decomposition on R; wst drops the group term
    (beta = 0); wsa scores R directly without decomposing; uis solves
    the decomposition on the matrix built from zero-speed points only.
    """
    if mode not in BASELINE_MODES:
        raise ValueError(f"unknown baseline mode {mode!r}")
    if mode == "wsa":
        return ast_scores(matrix.values), None
    if problem is None:
        problem = DecompositionProblem(values=matrix.values)
    if mode == "full":
        problem = replace(problem, values=matrix.values)
    elif mode == "wst":
        problem = replace(problem, values=matrix.values, beta=0.0)
    elif mode == "uis":
        if uis_matrix is None:
            raise ValueError("uis baseline needs the zero-speed matrix")
        problem = replace(problem, values=uis_matrix.values)
    result = solve(problem)
    return ast_scores(result.E), result


__all__ = [
    "BASELINE_MODES",
    "INDICATORS",
    "MetricReport",
    "UndefinedMetricError",
    "ast_scores",
    "average_precision",
    "evaluate",
    "indicator_scores",
    "label_segments",
    "mst_scores",
    "precision_recall_curve",
    "roc_auc",
    "roc_curve",
    "run_baseline",
    "tat_scores",
]
