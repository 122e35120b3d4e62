"""Classification report: per-class precision/recall/F1, weighted averages,
accuracy, and the confusion matrix (rows = gold, columns = predicted).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClassificationReport:
    classes: tuple[str, ...]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float
    confusion: np.ndarray
    # Classes whose precision denominator was zero (never predicted); their
    # precision is defined as 0.
    zero_division: tuple[bool, ...]

    def per_class(self, cls: str) -> dict:
        i = self.classes.index(cls)
        return {
            "precision": float(self.precision[i]),
            "recall": float(self.recall[i]),
            "f1": float(self.f1[i]),
            "support": int(self.support[i]),
        }


def report(gold, pred, classes) -> ClassificationReport:
    """Standard single-label multi-class metrics over a fixed class list."""
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    if not gold:
        raise ValueError("cannot report on an empty label set")
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    bad = [l for l in gold + pred if l not in index]
    if bad:
        raise ValueError(f"labels outside the class list: {sorted(set(map(str, bad)))}")

    k = len(classes)
    confusion = np.zeros((k, k), dtype=int)
    for g, p in zip(gold, pred):
        confusion[index[g], index[p]] += 1

    tp = np.diag(confusion).astype(float)
    support = confusion.sum(axis=1).astype(float)
    predicted = confusion.sum(axis=0).astype(float)

    zero_division = predicted == 0
    precision = np.divide(tp, predicted, out=np.zeros(k), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(k), where=support > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(k), where=pr > 0)

    n = float(len(gold))
    weights = support / n
    return ClassificationReport(
        classes=classes,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support.astype(int),
        weighted_precision=float(weights @ precision),
        weighted_recall=float(weights @ recall),
        weighted_f1=float(weights @ f1),
        accuracy=float(tp.sum() / n),
        confusion=confusion,
        zero_division=tuple(bool(z) for z in zero_division),
    )


def report_to_dict(rep: ClassificationReport) -> dict:
    return {
        "classes": list(rep.classes),
        "per_class": {
            c: rep.per_class(c) for c in rep.classes
        },
        "weighted_precision": rep.weighted_precision,
        "weighted_recall": rep.weighted_recall,
        "weighted_f1": rep.weighted_f1,
        "accuracy": rep.accuracy,
        "confusion": rep.confusion.tolist(),
        "zero_division": list(rep.zero_division),
    }
