from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import MisinfoClass

NUM_CLASSES = 3


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    """Accuracy, per-class and macro precision/recall/F1, confusion matrix.

    ``confusion[g, p]`` counts examples with gold class ``g`` predicted as ``p``.
    Headline precision/recall/F1 are macro averages over the three classes.
    """

    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    confusion: tuple[tuple[int, ...], ...]

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(sum(row)) for row in self.confusion)

    @property
    def n(self) -> int:
        return int(sum(sum(row) for row in self.confusion))

    def rows(self) -> list[tuple[str, float]]:
        out = [("accuracy", self.accuracy), ("macro_precision", self.macro_precision),
               ("macro_recall", self.macro_recall), ("macro_f1", self.macro_f1)]
        for c in MisinfoClass:
            tag = c.name.lower()
            out += [(f"precision_{tag}", self.precision[c]), (f"recall_{tag}", self.recall[c]),
                    (f"f1_{tag}", self.f1[c]), (f"support_{tag}", self.support[c])]
        for g in MisinfoClass:
            for p in MisinfoClass:
                out.append((f"confusion_{g.name.lower()}_as_{p.name.lower()}", self.confusion[g][p]))
        return out

    def to_dict(self) -> dict:
        return {k: v for k, v in self.rows()}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for k, v in self.rows():
                w.writerow([k, repr(float(v)) if isinstance(v, float) else v])


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def compute_metrics(preds: Sequence[int], golds: Sequence[int], num_classes: int = NUM_CLASSES) -> Metrics:
    preds = np.asarray([int(p) for p in preds], dtype=np.int64)
    golds = np.asarray([int(g) for g in golds], dtype=np.int64)
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} gold labels")
    if len(preds) == 0:
        raise LengthMismatch("need at least one example")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (golds, preds), 1)
    tp = np.diag(cm)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    precision = tuple(_safe_div(float(tp[c]), float(col[c])) for c in range(num_classes))
    recall = tuple(_safe_div(float(tp[c]), float(row[c])) for c in range(num_classes))
    f1 = tuple(_safe_div(2 * p * r, p + r) for p, r in zip(precision, recall))
    return Metrics(
        accuracy=float(tp.sum()) / float(cm.sum()),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=tuple(tuple(int(v) for v in r) for r in cm),
    )
