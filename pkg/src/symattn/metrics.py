"""Regression metrics: RMSE, MAE and Lin's concordance correlation coefficient."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkern import InvalidInputError


def _pair(pred, truth, min_len: int = 1):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise InvalidInputError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size < min_len:
        raise InvalidInputError(f"need at least {min_len} values, got {p.size}")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    d = p - t
    return math.sqrt(float(np.mean(d * d)))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def ccc(pred, truth) -> float:
    """Lin's CCC with population (1/n) moments.

    Both series constant with equal means gives 1; any other zero
    denominator gives 0.
    """
    p, t = _pair(pred, truth, min_len=2)
    mp, mt = np.mean(p), np.mean(t)
    dp, dt = p - mp, t - mt
    vp = float(np.mean(dp * dp))
    vt = float(np.mean(dt * dt))
    cov = float(np.mean(dp * dt))
    denom = vp + vt + (mp - mt) ** 2
    if denom == 0.0:
        return 1.0 if (vp == 0.0 and vt == 0.0 and mp == mt) else 0.0
    return 2.0 * cov / denom


@dataclass
class MetricsReport:
    total: dict
    per_symptom: list[dict]
    n: int

    def to_dict(self) -> dict:
        return {"total": self.total, "per_symptom": self.per_symptom, "n": self.n}

    def table(self) -> str:
        lines = [
            f"{'':<16}{'RMSE':>10}{'MAE':>10}{'CCC':>10}",
            f"{'total':<16}{self.total['rmse']:>10.3f}{self.total['mae']:>10.3f}"
            f"{self.total['ccc']:>10.3f}",
            "",
            f"{'Symptom':<16}{'RMSE':>10}{'MAE':>10}",
        ]
        for row in self.per_symptom:
            lines.append(f"{row['symptom']:<16}{row['rmse']:>10.3f}{row['mae']:>10.3f}")
        lines.append(f"(n = {self.n})")
        return "\n".join(lines)


def report(pred_scores, true_scores, symptom_names) -> MetricsReport:
    """Build a report from (n, 8) predicted and true symptom scores."""
    pred_scores = np.asarray(pred_scores, dtype=np.float64)
    true_scores = np.asarray(true_scores, dtype=np.float64)
    if pred_scores.shape != true_scores.shape or pred_scores.ndim != 2:
        raise InvalidInputError("scores must be matching (n, 8) arrays")
    n = pred_scores.shape[0]
    if n < 1:
        raise InvalidInputError("empty split")
    pt = np.array([sum(float(v) for v in row) for row in pred_scores])
    tt = true_scores.sum(axis=1)
    total = {"rmse": rmse(pt, tt), "mae": mae(pt, tt),
             "ccc": ccc(pt, tt) if n >= 2 else float("nan")}
    per = [
        {"symptom": name, "rmse": rmse(pred_scores[:, s], true_scores[:, s]),
         "mae": mae(pred_scores[:, s], true_scores[:, s])}
        for s, name in enumerate(symptom_names)
    ]
    return MetricsReport(total, per, n)


def evaluate(params, records) -> MetricsReport:
    """Dropout-off forward per participant, in id order."""
    from .model import SYMPTOM_NAMES, forward

    if not records:
        raise InvalidInputError("empty split")
    records = sorted(records, key=lambda r: r.id)
    preds = np.array([forward(params, r.segments).symptom_scores for r in records])
    truth = np.array([r.labels for r in records], dtype=np.float64)
    return report(preds, truth, SYMPTOM_NAMES)
