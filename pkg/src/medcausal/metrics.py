"""Recommendation metrics and bootstrap aggregation.

Jaccard, F1 and PRAUC are computed per visit, averaged over a patient's
visits and then over patients. The DDI rate pools pairs across all visits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

METRICS = ("jaccard", "ddi_rate", "f1", "prauc", "avg_med")
HEADERS = {"jaccard": "Jaccard", "ddi_rate": "DDI", "f1": "F1", "prauc": "PRAUC", "avg_med": "Avg.#Med"}


def jaccard(truth, pred) -> float:
    t, p = set(truth), set(pred)
    union = t | p
    return len(t & p) / len(union) if union else 0.0


def precision_recall(truth, pred) -> tuple[float, float]:
    t, p = set(truth), set(pred)
    hit = len(t & p)
    return (hit / len(p) if p else 0.0), (hit / len(t) if t else 0.0)


def f1(truth, pred) -> float:
    prec, rec = precision_recall(truth, pred)
    return 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0


def prauc(truth, scores) -> float:
    """Step-sum average precision: sum_k precision@k * (recall@k - recall@k-1).

    Ranking is by descending score with ties broken by lower medication index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    t = np.zeros(len(scores), dtype=bool)
    t[list(truth)] = True
    if not t.any():
        return 0.0
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = t[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(scores) + 1)
    return float(np.sum(precision * hits) / t.sum())


def ddi_rate(selected_sets: Sequence, ddi) -> float:
    """Interacting pairs over all pairs, pooled across the predicted sets."""
    m = np.asarray(getattr(ddi, "matrix", ddi))
    bad = total = 0
    for s in selected_sets:
        idx = sorted(s)
        k = len(idx)
        if k < 2:
            continue
        total += k * (k - 1) // 2
        bad += int(np.triu(m[np.ix_(idx, idx)], 1).sum())
    return bad / total if total else 0.0


def ddi_rate_label_denominator(selected_sets: Sequence, truth_sets: Sequence, ddi) -> float:
    """Variant that divides predicted interacting pairs by ground-truth pair counts."""
    m = np.asarray(getattr(ddi, "matrix", ddi))
    bad = total = 0
    for s, t in zip(selected_sets, truth_sets):
        idx = sorted(s)
        if len(idx) >= 2:
            bad += int(np.triu(m[np.ix_(idx, idx)], 1).sum())
        total += len(t) * (len(t) - 1) // 2
    return bad / total if total else 0.0


def avg_med(selected_sets: Sequence) -> float:
    return float(np.mean([len(s) for s in selected_sets])) if len(selected_sets) else 0.0


@dataclass
class PatientPrediction:
    """Per-visit truth sets, scores (post-correction when applied) and selected sets."""

    patient_id: str
    truth: list[frozenset]
    scores: list[np.ndarray]
    selected: list[frozenset]


def evaluate_predictions(preds: Sequence[PatientPrediction], ddi) -> dict[str, float]:
    per_patient = {"jaccard": [], "f1": [], "prauc": []}
    sets, truths = [], []
    for p in preds:
        per_patient["jaccard"].append(np.mean([jaccard(t, s) for t, s in zip(p.truth, p.selected)]))
        per_patient["f1"].append(np.mean([f1(t, s) for t, s in zip(p.truth, p.selected)]))
        per_patient["prauc"].append(np.mean([prauc(t, sc) for t, sc in zip(p.truth, p.scores)]))
        sets.extend(p.selected)
        truths.extend(p.truth)
    out = {k: float(np.mean(v)) if v else 0.0 for k, v in per_patient.items()}
    out["ddi_rate"] = ddi_rate(sets, ddi)
    out["ddi_rate_label_denominator"] = ddi_rate_label_denominator(sets, truths, ddi)
    out["avg_med"] = avg_med(sets)
    return out


@dataclass
class MetricReport:
    rounds: list[dict[str, float]]
    meta: dict = field(default_factory=dict)

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.rounds]))

    def stderr(self, key: str) -> float:
        vals = np.array([r[key] for r in self.rounds])
        if len(vals) < 2:
            return 0.0
        return float(vals.std(ddof=1) / np.sqrt(len(vals)))

    def summary(self) -> dict[str, tuple[float, float]]:
        return {k: (self.mean(k), self.stderr(k)) for k in METRICS}

    def table_row(self, digits: int = 4) -> list[str]:
        return [f"{self.mean(k):.{digits}f}±{self.stderr(k):.{digits}f}" for k in METRICS]

    def write_csv(self, path: str | Path, label: str = "model") -> None:
        """Summary row in the standard metric order, then one line per bootstrap round."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for key in sorted(self.meta):
                fh.write(f"# {key}: {self.meta[key]}\n")
            w.writerow(["row"] + [HEADERS[k] for k in METRICS] + ["DDI(label denominator)"])
            extra = "ddi_rate_label_denominator"
            w.writerow([label] + self.table_row()
                       + [f"{self.mean(extra):.4f}±{self.stderr(extra):.4f}"])
            for i, r in enumerate(self.rounds):
                w.writerow([f"round{i}"] + [repr(r[k]) for k in METRICS] + [repr(r[extra])])
