"""CSV sidecars and the markdown search report."""

import csv
from collections.abc import Sequence
from pathlib import Path
from typing import TextIO

import numpy as np
from loguru import logger

from polysearch.augment import canonical_pool
from polysearch.errors import ArgumentError
from polysearch.metrics import (
    ConfusionMatrix,
    mpca,
    overall_accuracy,
    per_class_accuracy,
    sensitivity_specificity,
)
from polysearch.model import Category, CategorySummary, GenerationRecord, OrderResult
from polysearch.policy import PolicyMatrix

# Published soybean-scale results, quoted in reports as context only.
REFERENCE_MPCA = (95.09, 97.61)
REFERENCE_WORST_CLASSES = {
    "Bacterial Blight": (83.01, 88.89),
    "Bacterial Pustule": (85.71, 94.05),
}
REFERENCE_ORDER_MPCA = {
    "Geometry>Color>Cutout": 97.6,
    "Geometry>Cutout>Color": 96.7,
    "Color>Geometry>Cutout": 96.5,
    "Cutout>Geometry>Color": 96.4,
    "Color>Cutout>Geometry": 96.4,
    "Cutout>Color>Geometry": 95.9,
}

HISTORY_COLUMNS = [
    "generation",
    "best_fitness",
    "mean_fitness",
    "evaluations",
    "elapsed_seconds",
]


def _writer_for(path: Path) -> TextIO:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", newline="", encoding="utf-8")


def write_history_csv(history: Sequence[GenerationRecord], path: Path) -> Path:
    with _writer_for(path) as handle:
        writer = csv.DictWriter(handle, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for record in history:
            writer.writerow(record.model_dump())
    return path


def read_history_csv(path: Path) -> list[GenerationRecord]:
    with path.open(newline="", encoding="utf-8") as handle:
        return [GenerationRecord.model_validate(row) for row in csv.DictReader(handle)]


def write_policy_heatmap(
    policy: PolicyMatrix, class_names: Sequence[str], path: Path
) -> Path:
    """One row per class, one column per transform."""
    with _writer_for(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["class", *(desc.name for desc in canonical_pool())])
        for name, row in zip(class_names, policy.probs):
            writer.writerow([name, *row.tolist()])
    return path


def ranked_transforms(row: np.ndarray) -> list[int]:
    """Transform indices by descending probability, ties by pool index."""
    return sorted(range(len(row)), key=lambda index: (-row[index], index))


def category_summary(
    policy: PolicyMatrix, class_names: Sequence[str]
) -> list[CategorySummary]:
    pool = canonical_pool()
    if policy.num_augs != len(pool):
        raise ArgumentError(
            f"Policy has {policy.num_augs} transforms, pool has {len(pool)}"
        )
    if len(class_names) != policy.num_classes:
        raise ArgumentError(
            f"{len(class_names)} class names for {policy.num_classes} classes"
        )
    members = {
        category: [index for index, desc in enumerate(pool) if desc.category == category]
        for category in Category
    }
    summaries = []
    for name, row in zip(class_names, policy.probs):
        means = {
            category: float(np.mean(row[indices]))
            for category, indices in members.items()
        }
        summaries.append(
            CategorySummary(
                class_name=name,
                geometry=means[Category.GEOMETRY],
                color=means[Category.COLOR],
                cutout=means[Category.CUTOUT],
                ranking=[pool[index].name for index in ranked_transforms(row)],
            )
        )
    return summaries


def write_category_csv(summaries: Sequence[CategorySummary], path: Path) -> Path:
    with _writer_for(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["class", "geometry", "color", "cutout", "ranking"])
        for summary in summaries:
            writer.writerow(
                [
                    summary.class_name,
                    summary.geometry,
                    summary.color,
                    summary.cutout,
                    " ".join(summary.ranking),
                ]
            )
    return path


def format_category_summary(summaries: Sequence[CategorySummary]) -> str:
    lines = []
    for summary in summaries:
        lines.append(
            f"{summary.class_name}: geometry={summary.geometry:.3f} "
            f"color={summary.color:.3f} cutout={summary.cutout:.3f}"
        )
        lines.append(f"  top: {', '.join(summary.ranking[:3])}")
    return "\n".join(lines)


def write_order_csv(results: Sequence[OrderResult], path: Path) -> Path:
    with _writer_for(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["order", "mpca", "overall_accuracy"])
        for result in results:
            writer.writerow([result.order, result.mpca, result.overall_accuracy])
    return path


def _percent(value: float) -> str:
    return f"{100 * value:.2f}"


def worst_class(cm: ConfusionMatrix) -> int:
    """Index of the class with the lowest recall; ties go to the lower index."""
    return int(np.argmin(per_class_accuracy(cm)))


def render_search_report(
    baseline: ConfusionMatrix,
    optimized: ConfusionMatrix,
    policy: PolicyMatrix,
    history: Sequence[GenerationRecord],
    best_fitness: float,
) -> str:
    names = baseline.class_names
    before, after = per_class_accuracy(baseline), per_class_accuracy(optimized)
    worst = worst_class(baseline)
    lines = [
        "# Policy search report",
        "",
        f"Generations: {len(history)}; best validation MPCA: {_percent(best_fitness)}%",
        "",
        "## Per-class accuracy (test split, %)",
        "",
        "| class | baseline | optimized | change |",
        "|---|---|---|---|",
    ]
    for index, name in enumerate(names):
        marker = " (worst baseline class)" if index == worst else ""
        lines.append(
            f"| {name}{marker} | {_percent(before[index])} | {_percent(after[index])} "
            f"| {100 * (after[index] - before[index]):+.2f} |"
        )

    lines += [
        "",
        "## Summary metrics (test split, %)",
        "",
        "| model | MPCA | overall | sensitivity | specificity |",
        "|---|---|---|---|---|",
    ]
    for label, cm in (("baseline", baseline), ("optimized", optimized)):
        sensitivity, specificity = sensitivity_specificity(cm)
        lines.append(
            f"| {label} | {_percent(mpca(cm))} | {_percent(overall_accuracy(cm))} "
            f"| {_percent(sensitivity)} | {_percent(specificity)} |"
        )

    lines += ["", "## Learned policy by category", ""]
    lines.append(format_category_summary(category_summary(policy, names)))

    lines += [
        "",
        "## Reference",
        "",
        f"Soybean-scale MPCA went from {REFERENCE_MPCA[0]}% to {REFERENCE_MPCA[1]}%; "
        + "; ".join(
            f"{name} {gain[0]}% to {gain[1]}%"
            for name, gain in REFERENCE_WORST_CLASSES.items()
        )
        + ". These figures are context, not targets for this run.",
        "",
    ]
    return "\n".join(lines)


def write_search_report(
    path: Path,
    baseline: ConfusionMatrix,
    optimized: ConfusionMatrix,
    policy: PolicyMatrix,
    history: Sequence[GenerationRecord],
    best_fitness: float,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        render_search_report(baseline, optimized, policy, history, best_fitness),
        encoding="utf-8",
    )
    logger.info(f"Report written to {path}")
    return path
