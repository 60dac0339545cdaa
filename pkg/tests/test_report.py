import csv

import numpy as np
import pytest

from polysearch.augment import pool_names
from polysearch.errors import ArgumentError
from polysearch.metrics import ConfusionMatrix
from polysearch.model import GenerationRecord, OrderResult
from polysearch.policy import PolicyMatrix
from polysearch.report import (
    category_summary,
    ranked_transforms,
    read_history_csv,
    render_search_report,
    worst_class,
    write_history_csv,
    write_order_csv,
    write_policy_heatmap,
)


def history(generations: int) -> list[GenerationRecord]:
    return [
        GenerationRecord(
            generation=index + 1,
            best_fitness=0.5 + 0.01 * index,
            mean_fitness=0.4,
            evaluations=10,
            elapsed_seconds=0.25 * index,
        )
        for index in range(generations)
    ]


class TestCategorySummary:
    def test_uniform_policy(self) -> None:
        (summary,) = category_summary(PolicyMatrix(np.full((1, 15), 0.5), 0.1), ["a"])
        assert (summary.geometry, summary.color, summary.cutout) == (0.5, 0.5, 0.5)
        assert summary.ranking == pool_names()

    def test_cutout_only(self) -> None:
        probs = np.zeros((2, 15))
        probs[1, -1] = 1.0
        first, second = category_summary(PolicyMatrix(probs, 0.1), ["a", "b"])
        assert (second.geometry, second.color, second.cutout) == (0.0, 0.0, 1.0)
        assert second.ranking[0] == "Cutout"
        assert first.cutout == 0.0

    def test_category_means(self) -> None:
        probs = np.zeros((1, 15))
        probs[0, :5] = [0.1, 0.2, 0.3, 0.4, 0.5]
        (summary,) = category_summary(PolicyMatrix(probs, 0.1), ["a"])
        assert summary.geometry == pytest.approx(0.3)
        assert summary.ranking[:2] == ["Rotate", "TranslateY"]

    def test_name_count_checked(self) -> None:
        with pytest.raises(ArgumentError):
            category_summary(PolicyMatrix.zeros(2, 15), ["a"])

    def test_ranking_ties_keep_pool_order(self) -> None:
        assert ranked_transforms(np.array([0.2, 0.5, 0.5, 0.0])) == [1, 2, 0, 3]


class TestCsvSidecars:
    def test_history_round_trip(self, tmp_path) -> None:
        records = history(3)
        path = write_history_csv(records, tmp_path / "history.csv")
        assert read_history_csv(path) == records

    def test_heatmap(self, tmp_path) -> None:
        path = write_policy_heatmap(
            PolicyMatrix.zeros(2, 15), ["a", "b"], tmp_path / "heatmap.csv"
        )
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["class", *pool_names()]
        assert [row[0] for row in rows[1:]] == ["a", "b"]

    def test_order_csv(self, tmp_path) -> None:
        path = write_order_csv(
            [OrderResult(order="Geometry>Color>Cutout", mpca=0.9, overall_accuracy=0.8)],
            tmp_path / "orders.csv",
        )
        assert path.read_text().splitlines() == [
            "order,mpca,overall_accuracy",
            "Geometry>Color>Cutout,0.9,0.8",
        ]


class TestSearchReport:
    baseline = ConfusionMatrix.from_counts([[9, 1], [4, 6]], ["healthy", "blight"])
    optimized = ConfusionMatrix.from_counts([[9, 1], [2, 8]], ["healthy", "blight"])

    def test_worst_class(self) -> None:
        assert worst_class(self.baseline) == 1
        assert worst_class(ConfusionMatrix.from_counts([[1, 1], [1, 1]])) == 0

    def test_contents(self) -> None:
        text = render_search_report(
            self.baseline,
            self.optimized,
            PolicyMatrix.zeros(2, 15),
            history(4),
            0.8,
        )
        assert "Generations: 4" in text
        assert "| blight (worst baseline class) | 60.00 | 80.00 | +20.00 |" in text
        assert "| baseline | 75.00 | 75.00 |" in text
        assert "| optimized | 85.00 | 85.00 |" in text
        assert "95.09" in text
