import numpy as np
import pytest

from polysearch.errors import ArgumentError, UndefinedClassError
from polysearch.metrics import (
    ConfusionMatrix,
    confusion_from_predictions,
    mpca,
    overall_accuracy,
    per_class_accuracy,
    read_confusion_csv,
    sensitivity_specificity,
    write_confusion_csv,
)


def brute_force(counts: np.ndarray) -> tuple[list[float], float, float, float]:
    """Per-class recall, overall accuracy, macro sensitivity and specificity."""
    size = len(counts)
    total = sum(sum(row) for row in counts)
    recalls, specificities = [], []
    for k in range(size):
        tp = counts[k][k]
        fn = sum(counts[k][j] for j in range(size) if j != k)
        fp = sum(counts[i][k] for i in range(size) if i != k)
        tn = total - tp - fn - fp
        recalls.append(tp / (tp + fn))
        specificities.append(tn / (tn + fp))
    accuracy = sum(counts[k][k] for k in range(size)) / total
    return recalls, accuracy, sum(recalls) / size, sum(specificities) / size


class TestConfusionMatrix:
    def test_rejects_non_square(self) -> None:
        with pytest.raises(ArgumentError):
            ConfusionMatrix.from_counts([[1, 2, 3], [4, 5, 6]])

    def test_rejects_negative(self) -> None:
        with pytest.raises(ArgumentError):
            ConfusionMatrix.from_counts([[1, -1], [0, 1]])

    def test_from_predictions(self) -> None:
        cm = confusion_from_predictions([0, 0, 1, 2], [0, 1, 1, 0], ["a", "b", "c"])
        np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])
        assert cm.total == 4


class TestMetrics:
    def test_known_two_class_value(self) -> None:
        cm = ConfusionMatrix.from_counts([[8, 2], [4, 6]])
        assert mpca(cm) == 0.7
        np.testing.assert_array_equal(per_class_accuracy(cm), [0.8, 0.6])
        assert overall_accuracy(cm) == 0.7

    def test_matches_brute_force(self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(1000):
            size = int(rng.integers(2, 8))
            counts = rng.integers(0, 50, size=(size, size))
            counts[np.arange(size), np.arange(size)] += 1
            cm = ConfusionMatrix.from_counts(counts)
            recalls, accuracy, sensitivity, specificity = brute_force(counts.tolist())
            np.testing.assert_allclose(per_class_accuracy(cm), recalls, rtol=0, atol=1e-12)
            assert mpca(cm) == pytest.approx(np.mean(recalls), abs=1e-12)
            assert overall_accuracy(cm) == pytest.approx(accuracy, abs=1e-12)
            sens, spec = sensitivity_specificity(cm)
            assert sens == pytest.approx(sensitivity, abs=1e-12)
            assert spec == pytest.approx(specificity, abs=1e-12)

    def test_mpca_is_mean_of_per_class_accuracy(self) -> None:
        rng = np.random.default_rng(1)
        for _ in range(500):
            size = int(rng.integers(2, 10))
            counts = rng.integers(0, 100, size=(size, size))
            counts[np.arange(size), np.arange(size)] += 1
            cm = ConfusionMatrix.from_counts(counts)
            assert mpca(cm) == float(np.mean(per_class_accuracy(cm)))

    def test_scaling_counts_is_exact(self) -> None:
        cm = ConfusionMatrix.from_counts([[3, 1, 0], [2, 5, 1], [0, 4, 4]])
        scaled = ConfusionMatrix.from_counts(cm.counts * 7)
        assert mpca(scaled) == mpca(cm)
        assert overall_accuracy(scaled) == overall_accuracy(cm)
        np.testing.assert_array_equal(per_class_accuracy(scaled), per_class_accuracy(cm))
        assert sensitivity_specificity(scaled) == sensitivity_specificity(cm)

    def test_class_permutation_invariance(self) -> None:
        rng = np.random.default_rng(2)
        for _ in range(200):
            size = int(rng.integers(2, 7))
            counts = rng.integers(0, 30, size=(size, size)) + np.eye(size, dtype=np.int64)
            order = rng.permutation(size)
            cm = ConfusionMatrix.from_counts(counts)
            permuted = ConfusionMatrix.from_counts(counts[np.ix_(order, order)])
            assert mpca(permuted) == pytest.approx(mpca(cm), abs=1e-12)
            assert overall_accuracy(permuted) == overall_accuracy(cm)
            assert sensitivity_specificity(permuted) == pytest.approx(
                sensitivity_specificity(cm), abs=1e-12
            )
            np.testing.assert_array_equal(
                per_class_accuracy(permuted), per_class_accuracy(cm)[order]
            )

    def test_two_class_sensitivity_equals_specificity(self) -> None:
        rng = np.random.default_rng(3)
        for _ in range(200):
            counts = rng.integers(1, 60, size=(2, 2))
            sens, spec = sensitivity_specificity(ConfusionMatrix.from_counts(counts))
            assert sens == spec
        cm = ConfusionMatrix.from_counts([[8, 2], [4, 6]])
        assert sensitivity_specificity(cm) == (0.7, 0.7)

    def test_balanced_classes_match_overall(self) -> None:
        rng = np.random.default_rng(4)
        for _ in range(200):
            size = int(rng.integers(2, 7))
            per_class = int(rng.integers(5, 40))
            counts = np.zeros((size, size), dtype=np.int64)
            for row in range(size):
                counts[row] = rng.multinomial(per_class, np.full(size, 1 / size))
            cm = ConfusionMatrix.from_counts(counts)
            assert mpca(cm) == pytest.approx(overall_accuracy(cm), abs=1e-12)

    def test_values_within_unit_interval(self) -> None:
        rng = np.random.default_rng(5)
        for _ in range(300):
            size = int(rng.integers(2, 8))
            counts = rng.integers(0, 20, size=(size, size)) + np.eye(size, dtype=np.int64)
            cm = ConfusionMatrix.from_counts(counts)
            values = [mpca(cm), overall_accuracy(cm), *sensitivity_specificity(cm)]
            values.extend(per_class_accuracy(cm).tolist())
            assert all(0.0 <= value <= 1.0 for value in values)

    def test_empty_class_is_undefined(self) -> None:
        cm = ConfusionMatrix.from_counts([[5, 0], [0, 0]], ["x", "y"])
        with pytest.raises(UndefinedClassError) as info:
            mpca(cm)
        assert info.value.class_index == 1
        assert info.value.class_name == "y"

    def test_empty_matrix_overall(self) -> None:
        with pytest.raises(ArgumentError):
            overall_accuracy(ConfusionMatrix.from_counts([[0, 0], [0, 0]]))

    def test_perfect_classifier(self) -> None:
        cm = ConfusionMatrix.from_counts(np.diag([3, 4, 5]))
        assert mpca(cm) == 1.0
        assert sensitivity_specificity(cm) == (1.0, 1.0)


class TestConfusionCsv:
    def test_round_trip(self, tmp_path) -> None:
        cm = ConfusionMatrix.from_counts([[8, 2], [4, 6]], ["healthy", "blight"])
        path = write_confusion_csv(cm, tmp_path / "cm.csv")
        loaded = read_confusion_csv(path)
        np.testing.assert_array_equal(loaded.counts, cm.counts)
        assert loaded.class_names == cm.class_names

    def test_header(self, tmp_path) -> None:
        cm = ConfusionMatrix.from_counts([[1, 0], [0, 1]], ["a", "b"])
        path = write_confusion_csv(cm, tmp_path / "cm.csv")
        assert path.read_text().splitlines()[0] == "true\\predicted,a,b"
