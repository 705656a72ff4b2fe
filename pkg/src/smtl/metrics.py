"""Test-set metrics: macro F1, micro F1 and average AUC, in percent.

Labels are predicted by the sign of the score with 0 mapped to +1. AUC is the
rank statistic of the real-valued scores; a tied (positive, negative) pair
counts as half a swap.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import MultiTaskDataset

CSV_COLUMNS = ("dataset", "method", "regularizer", "loss", "lambda",
               "macro_f1", "micro_f1", "avg_auc", "seed")


class SingleClassWarning(UserWarning):
    """A task was left out of the AUC average because its truth has one class."""


@dataclass
class TaskScore:
    task_name: str
    f1: float
    # None when the task's truth has a single class
    auc: float | None
    tp: int
    n_pos: int
    n_pred_pos: int


@dataclass
class EvaluationReport:
    macro_f1: float
    micro_f1: float
    average_auc: float
    per_task: list = field(default_factory=list)
    # names of tasks excluded from average_auc
    auc_excluded: list = field(default_factory=list)

    def to_record(self) -> dict:
        rec = {"macro_f1": self.macro_f1, "micro_f1": self.micro_f1,
               "average_auc": self.average_auc,
               "auc_excluded": list(self.auc_excluded)}
        rec["per_task"] = [
            {"task": t.task_name, "f1": t.f1, "auc": t.auc} for t in self.per_task]
        return rec

    def to_kv(self) -> str:
        """Flat ``key=value`` text, one pair per line."""
        lines = [f"macro_f1={self.macro_f1!r}", f"micro_f1={self.micro_f1!r}",
                 f"average_auc={self.average_auc!r}"]
        for t in self.per_task:
            lines.append(f"task.{t.task_name}.f1={t.f1!r}")
            lines.append(f"task.{t.task_name}.auc={'nan' if t.auc is None else repr(t.auc)}")
        if self.auc_excluded:
            lines.append("auc_excluded=" + ",".join(self.auc_excluded))
        return "\n".join(lines) + "\n"

    def csv_row(self, dataset, method, regularizer, loss, lam, seed) -> dict:
        return {"dataset": dataset, "method": method, "regularizer": regularizer,
                "loss": loss, "lambda": repr(float(lam)), "macro_f1": repr(self.macro_f1),
                "micro_f1": repr(self.micro_f1), "avg_auc": repr(self.average_auc),
                "seed": str(seed)}


def write_csv(rows, fh=None) -> str:
    """Serialize rows (dicts keyed by :data:`CSV_COLUMNS`) with a header."""
    buf = io.StringIO() if fh is None else fh
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue() if fh is None else ""


def predict_labels(scores):
    return np.where(np.asarray(scores, dtype=float) >= 0, 1.0, -1.0)


def f1_from_counts(tp, n_pos, n_pred_pos) -> float:
    """``2 tp / (n_pos + n_pred_pos)``; 0 when there are no true positives."""
    if tp == 0:
        return 0.0
    return 2.0 * tp / (n_pos + n_pred_pos)


def auc_score(scores, truth) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties as 1/2."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(truth).ravel()
    pos = np.sort(s[y > 0])
    neg = s[y < 0]
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("AUC needs both classes")
    below = np.searchsorted(pos, neg, side="left")  # positives strictly below each negative
    tied = np.searchsorted(pos, neg, side="right") - below
    swapped = float(np.sum(below)) + 0.5 * float(np.sum(tied))
    return 1.0 - swapped / (pos.size * neg.size)


def evaluate(W, data: MultiTaskDataset) -> EvaluationReport:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape != (data.feature_dim, data.n_tasks):
        raise ValidationError(
            f"model has shape {W.shape}, data has d={data.feature_dim}, m={data.n_tasks}")
    per_task, excluded = [], []
    tp_all = pos_all = pred_all = 0
    for i, task in enumerate(data.tasks):
        s = task.features @ W[:, i]
        pred = predict_labels(s)
        y = task.labels
        tp = int(np.sum((pred > 0) & (y > 0)))
        n_pos = int(np.sum(y > 0))
        n_pred = int(np.sum(pred > 0))
        auc = None
        if 0 < n_pos < y.shape[0]:
            auc = auc_score(s, y)
        else:
            excluded.append(task.task_name)
            warnings.warn(f"task {task.task_name!r} has a single class; excluded from average AUC",
                          SingleClassWarning, stacklevel=2)
        per_task.append(TaskScore(task.task_name, f1_from_counts(tp, n_pos, n_pred), auc,
                                  tp, n_pos, n_pred))
        tp_all += tp
        pos_all += n_pos
        pred_all += n_pred
    macro = 100.0 * float(np.mean([t.f1 for t in per_task]))
    micro = 100.0 * f1_from_counts(tp_all, pos_all, pred_all)
    aucs = [t.auc for t in per_task if t.auc is not None]
    avg_auc = 100.0 * float(np.mean(aucs)) if aucs else float("nan")
    return EvaluationReport(macro, micro, avg_auc, per_task, excluded)
