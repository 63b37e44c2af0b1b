"""Rank-based evaluation: ROC-AUC, Recall@K-deciles and ROC curve export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise ValueError("both classes must be present")
    return s, y


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted as 1/2."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def recall_at_deciles(scores: Sequence[float], labels: Sequence[int], k_deciles: int) -> float:
    """Share of positives ranked inside the top ``k_deciles`` tenths.

    Observations are sorted by descending score, ties going to the earlier
    index; the top ``ceil(k * n / 10)`` form the selected set.
    """
    if not 1 <= int(k_deciles) <= 10:
        raise ValueError("k_deciles must be in 1..10")
    s, y = _check(scores, labels)
    n = len(s)
    top = -(-int(k_deciles) * n // 10)
    order = np.lexsort((np.arange(n), -s))
    return float(y[order[:top]].sum() / y.sum())


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """ROC vertices ``(fpr, tpr, threshold)``, one per distinct score.

    The first point is (0, 0) with an infinite threshold; a point means
    "predict positive when score >= threshold".
    """
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    n_pos, n_neg = tps[-1], fps[-1]
    pts = [(0.0, 0.0, float("inf"))]
    pts += [(float(fps[i] / n_neg), float(tps[i] / n_pos), float(s[i])) for i in last]
    return pts


def trapezoid_area(points) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class EvalReport:
    roc_auc: float
    recall_at_deciles: dict[int, float]
    roc_points: list[tuple[float, float, float]] = field(repr=False)
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return {
            "roc_auc": self.roc_auc,
            "recall_at_deciles": {str(k): v for k, v in sorted(self.recall_at_deciles.items())},
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            # JSON has no infinity; the origin's threshold is written as null
            "roc_points": [[f, t, None if np.isinf(th) else th] for f, t, th in self.roc_points],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            roc_auc=doc["roc_auc"],
            recall_at_deciles={int(k): v for k, v in doc["recall_at_deciles"].items()},
            roc_points=[(f, t, float("inf") if th is None else th) for f, t, th in doc["roc_points"]],
            n_pos=doc["n_pos"],
            n_neg=doc["n_neg"],
        )

    def write_roc_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in self.roc_points:
                w.writerow([repr(f), repr(t), "inf" if np.isinf(th) else repr(th)])


def evaluate(scores, labels, k_deciles: Sequence[int] = (3,)) -> EvalReport:
    s, y = _check(scores, labels)
    return EvalReport(
        roc_auc=roc_auc(s, y),
        recall_at_deciles={int(k): recall_at_deciles(s, y, k) for k in k_deciles},
        roc_points=roc_points(s, y),
        n_pos=int(y.sum()),
        n_neg=int((~y).sum()),
    )


def dumps_report(report: EvalReport, **extra) -> str:
    doc = report.to_dict()
    doc.update(extra)
    return json.dumps(doc, indent=1, sort_keys=True)
