"""Confusion-matrix metrics and the four-column results table.

The positive class is high cognitive load (label 1).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import EmptyTestSet
from .forest import ForestModel
from .mlp import MlpModel, forward

METRICS = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    model_tag: str = ""
    dataset_tag: str = ""

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def degenerate(self):
        """Metrics whose denominator was zero (reported as 0)."""
        out = []
        if self.total == 0:
            out.append("accuracy")
        if self.tp + self.fp == 0:
            out.append("precision")
        if self.tp + self.fn == 0:
            out.append("recall")
        if self.precision + self.recall == 0:
            out.append("f1")
        return tuple(out)

    def as_dict(self):
        d = {"model": self.model_tag, "dataset": self.dataset_tag,
             "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}
        d.update({m: getattr(self, m) for m in METRICS})
        d["degenerate"] = list(self.degenerate)
        return d


def confusion(y_true, y_pred, model_tag="", dataset_tag=""):
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return EvalReport(
        tp=int(np.sum(y_true & y_pred)), fp=int(np.sum(~y_true & y_pred)),
        fn=int(np.sum(y_true & ~y_pred)), tn=int(np.sum(~y_true & ~y_pred)),
        model_tag=model_tag, dataset_tag=dataset_tag,
    )


def predict_labels(model, X, threshold=0.5):
    if isinstance(model, MlpModel):
        return (forward(model, X) >= threshold).astype(np.int64)
    if isinstance(model, ForestModel):
        return model.predict(X)
    # any fitted estimator exposing predict()
    return np.asarray(model.predict(X)).astype(np.int64)


def evaluate(model, test, threshold=0.5, model_tag=None, dataset_tag="test"):
    """Score an MLP (P >= threshold is high) or a forest (majority vote) on a dataset."""
    if len(test) == 0:
        raise EmptyTestSet("cannot evaluate on an empty test set")
    if model_tag is None:
        model_tag = "MLP" if isinstance(model, MlpModel) else "RF"
    pred = predict_labels(model, test.inputs, threshold)
    return confusion(test.labels, pred, model_tag, dataset_tag)


def fmt2(x):
    """Two decimals, halves rounded away from zero (0.845 -> 0.85)."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def report_table(reports):
    """(text table, CSV) with one row per model, two-decimal metrics."""
    header = ["model", *METRICS]
    rows = [[r.model_tag, *(fmt2(getattr(r, m)) for m in METRICS)] for r in reports]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)

    titles = ["Model", "Accuracy", "Precision", "Recall", "F1"]
    widths = [max(len(t), *(len(r[i]) for r in rows)) if rows else len(t)
              for i, t in enumerate(titles)]
    sep = "+" + "+".join("-" * (wd + 2) for wd in widths) + "+"
    lines = [sep, "| " + " | ".join(t.ljust(wd) for t, wd in zip(titles, widths)) + " |", sep]
    for r in rows:
        lines.append("| " + " | ".join(c.ljust(wd) for c, wd in zip(r, widths)) + " |")
        lines.append(sep)
    return "\n".join(lines) + "\n", buf.getvalue()
