import csv
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from polysearch.errors import ArgumentError, UndefinedClassError


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[t][p] = number of samples of true class t predicted as p."""

    counts: npt.NDArray[np.int64]
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ArgumentError(f"Confusion matrix must be square, got {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer) or np.any(counts < 0):
            raise ArgumentError("Confusion counts must be non-negative integers")
        if len(self.class_names) != counts.shape[0]:
            raise ArgumentError(
                f"{len(self.class_names)} class names for {counts.shape[0]} classes"
            )
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_counts(
        cls, counts: Sequence[Sequence[int]] | npt.ArrayLike,
        class_names: Sequence[str] | None = None,
    ) -> "ConfusionMatrix":
        array = np.asarray(counts, dtype=np.int64)
        names = class_names or [str(index) for index in range(array.shape[0])]
        return cls(array, tuple(names))


def confusion_from_predictions(
    true_labels: npt.ArrayLike,
    predicted_labels: npt.ArrayLike,
    class_names: Sequence[str],
) -> ConfusionMatrix:
    truth = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted_labels, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise ArgumentError("True and predicted label arrays differ in length")
    num_classes = len(class_names)
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    return ConfusionMatrix(counts, tuple(class_names))


def _row_sums(cm: ConfusionMatrix) -> npt.NDArray[np.int64]:
    sums = cm.counts.sum(axis=1)
    for index, total in enumerate(sums):
        if total == 0:
            raise UndefinedClassError(index, cm.class_names[index])
    return sums


def per_class_accuracy(cm: ConfusionMatrix) -> npt.NDArray[np.float64]:
    """Recall of every class: diagonal over row sum."""
    return np.diagonal(cm.counts) / _row_sums(cm)


def mpca(cm: ConfusionMatrix) -> float:
    """Mean-per-class accuracy, the unweighted mean of per-class recalls."""
    return float(np.mean(per_class_accuracy(cm)))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ArgumentError("Overall accuracy of an empty confusion matrix")
    return int(np.trace(cm.counts)) / total


def sensitivity_specificity(cm: ConfusionMatrix) -> tuple[float, float]:
    """Macro one-vs-rest sensitivity and specificity."""
    counts = cm.counts
    row_sums = _row_sums(cm)
    true_pos = np.diagonal(counts)
    false_neg = row_sums - true_pos
    false_pos = counts.sum(axis=0) - true_pos
    true_neg = cm.total - true_pos - false_neg - false_pos
    negatives = true_neg + false_pos
    for index, total in enumerate(negatives):
        if total == 0:
            raise UndefinedClassError(index, cm.class_names[index])
    sensitivity = true_pos / (true_pos + false_neg)
    specificity = true_neg / negatives
    return float(np.mean(sensitivity)), float(np.mean(specificity))


def write_confusion_csv(cm: ConfusionMatrix, path: Path) -> Path:
    """CSV with class names heading both rows (true) and columns (predicted)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["true\\predicted", *cm.class_names])
        for name, row in zip(cm.class_names, cm.counts):
            writer.writerow([name, *row.tolist()])
    return path


def read_confusion_csv(path: Path) -> ConfusionMatrix:
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    names = rows[0][1:]
    counts = [[int(value) for value in row[1:]] for row in rows[1:]]
    return ConfusionMatrix.from_counts(counts, names)
