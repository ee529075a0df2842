"""Margin-based inference and the continual-learning metrics.

Inference evaluates every seen class's weight row, takes the row with the
widest gap between its top two logits, and predicts that row's argmax
class. Metrics cover final accuracy over all seen test data, average
forgetting, and head/tail breakdowns.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompleteMatrix, NoClasses, SingleTask, TooFewClasses


def decision_margin(logits: np.ndarray) -> float:
    """Gap between the largest and second-largest logit values."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.size < 2:
        raise TooFewClasses("decision margin needs at least two classes")
    top_two = np.partition(arr, -2)[-2:]
    return float(top_two[1] - top_two[0])


def predict_batch(
    features: np.ndarray,
    layer_features: np.ndarray,
    weight_rows: np.ndarray,
    class_ids: list[int],
) -> np.ndarray:
    """Margin-selected predictions for a batch of adapted features.

    For each sample, every class's weight row produces its own logit vector
    (layers x classes dots, weighted by that row); the row with the largest
    top-two margin wins and its argmax class is the prediction. Ties pick
    the smaller class id.
    """
    if not class_ids:
        raise NoClasses("no seen classes to predict over")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    g = np.asarray(layer_features, dtype=np.float64)
    rows = np.asarray(weight_rows, dtype=np.float64)
    if len(class_ids) == 1:
        return np.full(x.shape[0], class_ids[0])

    dots = np.einsum("kcd,nd->nkc", g, x)             # (n, layers, classes)
    logits = np.einsum("rk,nkc->nrc", rows, dots)     # (n, rows, classes)
    part = np.partition(logits, -2, axis=2)
    margins = part[:, :, -1] - part[:, :, -2]         # (n, rows)
    best_row = np.argmax(margins, axis=1)             # first max = smallest id
    chosen = logits[np.arange(x.shape[0]), best_row]  # (n, classes)
    ids = np.asarray(class_ids)
    return ids[np.argmax(chosen, axis=1)]


def margin_disagreement_rate(
    features: np.ndarray,
    layer_features: np.ndarray,
    weight_rows: np.ndarray,
    class_ids: list[int],
) -> float:
    """How often the margin-winning row is not the class finally predicted.

    The decision rule returns the argmax of the winning row's logit vector;
    in consistent cases that argmax is the winning row's own class. This
    diagnostic reports the frequency of the inconsistent cases.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if len(class_ids) < 2:
        return 0.0
    g = np.asarray(layer_features, dtype=np.float64)
    rows = np.asarray(weight_rows, dtype=np.float64)
    dots = np.einsum("kcd,nd->nkc", g, x)
    logits = np.einsum("rk,nkc->nrc", rows, dots)
    part = np.partition(logits, -2, axis=2)
    margins = part[:, :, -1] - part[:, :, -2]
    best_row = np.argmax(margins, axis=1)
    chosen = logits[np.arange(x.shape[0]), best_row]
    predicted = np.argmax(chosen, axis=1)
    return float(np.mean(predicted != best_row))


def zero_shot_predictions(
    features: np.ndarray,
    layer_features: np.ndarray,
    class_ids: list[int],
    fixed_layer: int,
) -> np.ndarray:
    """Nearest-text-cosine classification against one layer's class vectors."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    anchors = np.asarray(layer_features, dtype=np.float64)[fixed_layer]
    norms = np.linalg.norm(anchors, axis=1)
    cosines = (x @ anchors.T) / (
        np.maximum(np.linalg.norm(x, axis=1), 1e-300)[:, None]
        * np.maximum(norms, 1e-300)[None, :]
    )
    ids = np.asarray(class_ids)
    return ids[np.argmax(cosines, axis=1)]


@dataclass
class AccuracyMatrix:
    """Per-task accuracy after each training stage, lower-triangular."""

    task_count: int
    correct: np.ndarray = field(default=None)
    totals: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.correct is None:
            self.correct = np.full((self.task_count, self.task_count), -1, dtype=np.int64)
        if self.totals is None:
            self.totals = np.zeros(self.task_count, dtype=np.int64)

    def record(self, after_task: int, eval_task: int, correct: int, total: int) -> None:
        if eval_task > after_task:
            raise IncompleteMatrix("cannot evaluate a task before training it")
        self.correct[after_task, eval_task] = correct
        if self.totals[eval_task] == 0:
            self.totals[eval_task] = total
        elif self.totals[eval_task] != total:
            raise IncompleteMatrix(
                f"test split size for task {eval_task} changed between stages"
            )

    def accuracy(self, after_task: int, eval_task: int) -> float:
        if self.correct[after_task, eval_task] < 0:
            raise IncompleteMatrix(f"no entry for ({after_task}, {eval_task})")
        return float(self.correct[after_task, eval_task] / self.totals[eval_task])

    def table(self) -> list[list[float | None]]:
        out: list[list[float | None]] = []
        for t in range(self.task_count):
            row: list[float | None] = []
            for i in range(self.task_count):
                row.append(self.accuracy(t, i) if self.correct[t, i] >= 0 else None)
            out.append(row)
        return out


def a_last(matrix: AccuracyMatrix) -> float:
    """Micro-averaged accuracy over every seen test sample after the last task."""
    final = matrix.task_count - 1
    if np.any(matrix.correct[final] < 0):
        raise IncompleteMatrix("final row of the accuracy matrix is incomplete")
    return float(matrix.correct[final].sum() / matrix.totals.sum())


def f_avg(matrix: AccuracyMatrix) -> float:
    """Mean over earlier tasks of (best earlier accuracy - final accuracy), >= 0.

    Standard average-forgetting definition, clamped at zero per task.
    """
    t_count = matrix.task_count
    if t_count < 2:
        raise SingleTask("forgetting needs at least two tasks")
    drops = []
    for i in range(t_count - 1):
        history = [matrix.accuracy(t, i) for t in range(i, t_count - 1)]
        drops.append(max(0.0, max(history) - matrix.accuracy(t_count - 1, i)))
    return float(np.mean(drops))


def per_class_accuracy(
    predictions: np.ndarray, truths: np.ndarray
) -> dict[int, float]:
    out: dict[int, float] = {}
    for cid in np.unique(truths):
        mask = truths == cid
        out[int(cid)] = float(np.mean(predictions[mask] == cid))
    return out


@dataclass
class HeadTailBreakdown:
    head_accuracy: float | None
    tail_accuracy: float | None
    deltas: dict[int, float]
    tail_ids: set[int]


def head_tail_breakdown(
    class_accuracy: dict[int, float],
    train_counts: dict[int, int],
    tail_threshold: int,
    baseline_accuracy: dict[int, float] | None = None,
) -> HeadTailBreakdown:
    """Split by train-count threshold; deltas are against a baseline run."""
    tail_ids = {cid for cid, n in train_counts.items() if n < tail_threshold}
    head = [acc for cid, acc in class_accuracy.items() if cid not in tail_ids]
    tail = [acc for cid, acc in class_accuracy.items() if cid in tail_ids]
    deltas = {}
    if baseline_accuracy is not None:
        deltas = {
            cid: class_accuracy[cid] - baseline_accuracy.get(cid, 0.0)
            for cid in sorted(class_accuracy)
        }
    return HeadTailBreakdown(
        head_accuracy=float(np.mean(head)) if head else None,
        tail_accuracy=float(np.mean(tail)) if tail else None,
        deltas=deltas,
        tail_ids=tail_ids,
    )


def write_per_class_csv(
    path: str | Path,
    records: list[dict],
) -> None:
    """Fixed schema: id,label,count,is_tail,acc,delta (delta may be blank)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "count", "is_tail", "acc", "delta"])
        for rec in records:
            delta = rec.get("delta")
            writer.writerow(
                [
                    rec["id"],
                    rec["label"],
                    rec["count"],
                    int(rec["is_tail"]),
                    repr(float(rec["acc"])),
                    "" if delta is None else repr(float(delta)),
                ]
            )


def read_per_class_csv(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "id": int(row["id"]),
                    "label": row["label"],
                    "count": int(row["count"]),
                    "is_tail": bool(int(row["is_tail"])),
                    "acc": float(row["acc"]),
                    "delta": float(row["delta"]) if row["delta"] else None,
                }
            )
    return out


def write_weight_centers_csv(path: str | Path, centers: dict[int, float]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "center"])
        for cid in sorted(centers):
            writer.writerow([cid, repr(float(centers[cid]))])


def write_text_similarity_csv(
    path: str | Path, class_ids: list[int], matrix: np.ndarray
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + [str(c) for c in class_ids])
        for i, cid in enumerate(class_ids):
            writer.writerow([cid] + [repr(float(v)) for v in matrix[i]])


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.asarray([[float(v) for v in row[1:]] for row in rows[1:]])
