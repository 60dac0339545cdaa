"""
Subcommand implementations: wiring of data, classifier, GA and reports.

Each cmd_* function takes validated configuration and returns what it
produced; argument parsing and exit codes live in __main__.
"""

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger
from PIL import Image as PILImage
from pydantic import ValidationError

from polysearch.augment import (
    all_orders,
    apply_transform,
    canonical_pool,
    format_order,
    parse_order,
    pool_names,
)
from polysearch.classifier import (
    LinearHead,
    PolicyFitness,
    evaluate_head,
    save_head,
    train_baseline,
    train_head,
)
from polysearch.dataset import (
    LabeledImageDataset,
    export_class_folders,
    load_class_folders,
    load_idx,
    stratified_split,
)
from polysearch.errors import ArgumentError, ConfigError
from polysearch.features import extract_batch
from polysearch.genetic import (
    RASTRIGIN_BOUND,
    GenomeSpec,
    RastriginFitness,
    SearchResult,
    evolve,
)
from polysearch.metrics import mpca, overall_accuracy, write_confusion_csv
from polysearch.model import (
    CategorySummary,
    DatasetSource,
    FeatureExtractor,
    GAConfig,
    OrderResult,
    RastriginSummary,
    RunArtifacts,
    RunConfig,
    SplitTag,
    SynthConfig,
)
from polysearch.policy import PolicyMatrix, flatten, load_policy, save_policy
from polysearch.report import (
    REFERENCE_ORDER_MPCA,
    category_summary,
    format_category_summary,
    ranked_transforms,
    write_category_csv,
    write_history_csv,
    write_order_csv,
    write_policy_heatmap,
    write_search_report,
)
from polysearch.synth import generate_confounder

WORKERS_ENV = "POLYSEARCH_WORKERS"
PREVIEW_PICKS = 3


def build_run_config(
    config_path: Path | None = None,
    *,
    dataset: dict[str, Any] | None = None,
    output_dir: Path | None = None,
    workers: int | None = None,
    seed: int | None = None,
) -> RunConfig:
    """
    Load a JSON run config and apply command-line overrides.

    The worker count comes from the flag, then the file, then the
    POLYSEARCH_WORKERS environment variable.
    """
    document: dict[str, Any] = {}
    if config_path is not None:
        try:
            document = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path} is not valid JSON: {e}") from e
        if not isinstance(document, dict):
            raise ConfigError(f"{config_path} must hold a JSON object")
    if dataset is not None:
        document["dataset"] = dataset
    if output_dir is not None:
        document["output_dir"] = str(output_dir)
    if workers is not None:
        document["workers"] = workers
    elif "workers" not in document and os.environ.get(WORKERS_ENV):
        try:
            document["workers"] = int(os.environ[WORKERS_ENV])
        except ValueError as e:
            raise ConfigError(
                f"{WORKERS_ENV}={os.environ[WORKERS_ENV]!r} is not an integer"
            ) from e
    if seed is not None:
        document.setdefault("ga", {})["master_seed"] = seed
    if "dataset" not in document:
        raise ConfigError("No dataset configured; pass a config file or a data flag")
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e


def load_dataset(source: DatasetSource) -> LabeledImageDataset:
    """Load the configured source without splitting it."""
    if source.folder is not None:
        return load_class_folders(source.folder, source.image_side)
    if source.idx_images is not None and source.idx_labels is not None:
        return load_idx(source.idx_images, source.idx_labels, source.image_side)
    assert source.synthetic is not None
    return generate_confounder(source.synthetic)


@dataclass
class PreparedRun:
    """A split dataset and the baseline head every fine-tune starts from."""

    data: LabeledImageDataset
    baseline: LinearHead
    head_path: Path


def prepare_run(config: RunConfig) -> PreparedRun:
    source = config.dataset
    data = stratified_split(load_dataset(source), source.split, source.split_seed)
    baseline = train_baseline(
        data.subset(SplitTag.TRAIN),
        config.features,
        config.train,
        config.baseline_epochs,
        seed=config.ga.master_seed,
    )
    head_path = save_head(
        baseline,
        config.output_dir / "baseline_head.json",
        data.class_names,
        config.features.kind,
    )
    return PreparedRun(data, baseline, head_path)


def _run_search(
    config: RunConfig,
    fitness: PolicyFitness,
    checkpoint: Path,
    resume: bool,
) -> SearchResult:
    spec = GenomeSpec.from_step(
        fitness.dims[0] * fitness.dims[1], config.grid_step
    )
    seeds = []
    if config.ga.seed_zero_policy:
        seeds.append(flatten(PolicyMatrix.zeros(*fitness.dims, config.grid_step)))
    return evolve(
        config.ga,
        spec,
        fitness,
        workers=config.workers,
        checkpoint_path=checkpoint,
        resume=resume,
        initial_genomes=seeds,
    )


def cmd_search(
    config: RunConfig, resume: bool = False, prepared: PreparedRun | None = None
) -> RunArtifacts:
    """
    Search a class-specific policy and compare it with the baseline on test.

    The test split is materialised only after the search has finished.
    """
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepared or prepare_run(config)
    data, order = prepared.data, parse_order(config.order)
    fitness = PolicyFitness.from_dataset(
        data, order, config.features, config.train, prepared.baseline, config.grid_step
    )
    logger.info(
        f"Searching {fitness.dims[0]}x{fitness.dims[1]} policy, order {config.order}, "
        f"{config.workers} worker(s)"
    )
    result = _run_search(config, fitness, out / "checkpoint.json", resume)
    best_policy = fitness.policy(result.best.genome)
    policy_path = save_policy(
        best_policy, out / "best_policy.json", data.class_names, pool_names()
    )
    history_path = write_history_csv(result.history, out / "history.csv")

    test = data.subset(SplitTag.TEST)
    baseline_cm = evaluate_head(test, config.features, prepared.baseline)
    tuned = train_head(
        fitness.train_set,
        best_policy,
        order,
        config.features,
        config.train,
        prepared.baseline,
        result.best.eval_seed,
        features=fitness.train_features,
    )
    optimized_cm = evaluate_head(test, config.features, tuned)
    assert result.best.fitness is not None
    artifacts = RunArtifacts(
        best_policy=policy_path,
        history=history_path,
        baseline_confusion=write_confusion_csv(
            baseline_cm, out / "confusion_baseline.csv"
        ),
        optimized_confusion=write_confusion_csv(
            optimized_cm, out / "confusion_optimized.csv"
        ),
        policy_heatmap=write_policy_heatmap(
            best_policy, data.class_names, out / "policy_heatmap.csv"
        ),
        report=write_search_report(
            out / "report.md",
            baseline_cm,
            optimized_cm,
            best_policy,
            result.history,
            result.best.fitness,
        ),
        best_fitness=result.best.fitness,
        baseline_mpca=mpca(baseline_cm),
        optimized_mpca=mpca(optimized_cm),
        optimized_overall_accuracy=overall_accuracy(optimized_cm),
    )
    logger.success(
        f"Test MPCA {artifacts.baseline_mpca:.4f} -> {artifacts.optimized_mpca:.4f}"
    )
    return artifacts


def cmd_order_experiment(config: RunConfig) -> tuple[list[OrderResult], Path]:
    """One full search per category order, sharing data and baseline."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    prepared = prepare_run(config)
    results = []
    for order in all_orders():
        label = format_order(order)
        artifacts = cmd_search(
            config.model_copy(
                update={
                    "order": label,
                    "output_dir": config.output_dir / label.replace(">", "-"),
                }
            ),
            prepared=prepared,
        )
        results.append(
            OrderResult(
                order=label,
                mpca=artifacts.optimized_mpca,
                overall_accuracy=artifacts.optimized_overall_accuracy,
            )
        )
    path = write_order_csv(results, config.output_dir / "order_experiment.csv")
    for result in results:
        logger.info(
            f"{result.order}: MPCA {100 * result.mpca:.2f}% "
            f"(published {REFERENCE_ORDER_MPCA[result.order]}%)"
        )
    logger.info(f"Order experiment written to {path}")
    return results, path


def preview_picks(policy: PolicyMatrix, class_id: int) -> tuple[list[int], list[int]]:
    """The three most and three least likely transforms of one class."""
    row = policy.probs[class_id]
    top = ranked_transforms(row)[:PREVIEW_PICKS]
    bottom = sorted(range(len(row)), key=lambda index: (row[index], index))
    return top, bottom[:PREVIEW_PICKS]


def cmd_preview(
    policy_file: Path,
    data: LabeledImageDataset,
    n: int,
    out: Path,
    seed: int = 0,
) -> list[Path]:
    """
    Write one PNG grid per class.

    Each row is a sample: the original, then the three most likely and the
    three least likely transforms of its class, each applied alone.
    """
    if n < 1:
        raise ArgumentError(f"Preview needs at least one sample per class, got {n}")
    policy, _ = load_policy(policy_file, pool_names())
    if policy.num_classes != data.num_classes:
        raise ArgumentError(
            f"Policy has {policy.num_classes} classes, dataset has {data.num_classes}"
        )
    pool = canonical_pool()
    rng = np.random.default_rng(seed)
    height, width = data.image_shape
    columns = 1 + 2 * PREVIEW_PICKS
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for class_id, name in enumerate(data.class_names):
        members = np.flatnonzero(data.labels == class_id)
        if members.size == 0:
            raise ArgumentError(f"Class {name} has no samples to preview")
        chosen = np.sort(rng.choice(members, size=min(n, members.size), replace=False))
        top, bottom = preview_picks(policy, class_id)
        grid = PILImage.new("RGB", (columns * width, len(chosen) * height))
        for row, index in enumerate(chosen):
            img = data.images[index]
            tiles = [img] + [apply_transform(pool[t], img, rng) for t in top + bottom]
            for column, tile in enumerate(tiles):
                grid.paste(PILImage.fromarray(tile), (column * width, row * height))
        path = out / f"preview_{name}.png"
        grid.save(path)
        paths.append(path)
    logger.info(f"{len(paths)} preview grids written to {out}")
    return paths


def cmd_rastrigin_check(
    dims: int,
    config: GAConfig,
    grid_step: float = 0.001,
    workers: int = 1,
) -> RastriginSummary:
    """Minimise Rastrigin over [-5.12, 5.12]^dims with the policy-search GA."""
    if dims < 1:
        raise ArgumentError(f"Rastrigin check needs dims >= 1, got {dims}")
    result = evolve(
        config,
        GenomeSpec.from_step(dims, grid_step),
        RastriginFitness(RASTRIGIN_BOUND),
        workers=workers,
    )
    assert result.best.fitness is not None
    initial = -result.history[0].best_fitness
    best = -result.best.fitness
    summary = RastriginSummary(
        dims=dims,
        best_value=best,
        initial_best=initial,
        generations=len(result.history),
        improvement_ratio=best / initial if initial > 0 else 0.0,
        termination_reason=result.termination_reason,
    )
    logger.info(
        f"Rastrigin dims={dims}: best {summary.best_value:.4f} after "
        f"{summary.generations} generations (initial {summary.initial_best:.4f}, "
        f"ratio {summary.improvement_ratio:.3f}, {summary.termination_reason})"
    )
    return summary


def cmd_analyze_policy(
    policy_file: Path, out: Path | None = None
) -> list[CategorySummary]:
    """Per-class category means and transform ranking, as CSV and text."""
    policy, document = load_policy(policy_file, pool_names())
    summaries = category_summary(policy, document.classes)
    path = out or policy_file.with_name(policy_file.stem + "_categories.csv")
    write_category_csv(summaries, path)
    logger.info("\n" + format_category_summary(summaries))
    logger.info(f"Category summary written to {path}")
    return summaries


def cmd_synth_data(cfg: SynthConfig, root: Path) -> Path:
    return export_class_folders(generate_confounder(cfg), root)


def cmd_feature_pca(
    data: LabeledImageDataset, fe: FeatureExtractor, out: Path
) -> tuple[Path, tuple[float, float]]:
    """
    Project features onto their first two principal components.

    Returns:
        The CSV path and the variance fractions of the two components.
    """
    features = extract_batch(data.images, fe)
    if features.shape[0] < 2 or features.shape[1] < 2:
        raise ArgumentError(f"PCA needs at least 2x2 features, got {features.shape}")
    centered = features - features.mean(axis=0)
    _, singular, components = np.linalg.svd(centered, full_matrices=False)
    projected = centered @ components[:2].T
    variance = singular**2
    total = float(variance.sum())
    explained = (
        (float(variance[0] / total), float(variance[1] / total))
        if total > 0
        else (0.0, 0.0)
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["label", "class", "pc1", "pc2"])
        for label, (pc1, pc2) in zip(data.labels, projected):
            writer.writerow([int(label), data.class_names[label], pc1, pc2])
    logger.info(
        f"PCA of {features.shape[0]} {fe.kind} vectors: explained variance "
        f"{explained[0]:.3f}, {explained[1]:.3f}"
    )
    return out, explained
