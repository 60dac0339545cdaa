import csv
import json
import statistics
from pathlib import Path

import numpy as np
import pytest
from PIL import Image as PILImage

from polysearch.augment import pool_names
from polysearch.commands import (
    WORKERS_ENV,
    build_run_config,
    cmd_analyze_policy,
    cmd_feature_pca,
    cmd_order_experiment,
    cmd_preview,
    cmd_rastrigin_check,
    cmd_search,
    cmd_synth_data,
    prepare_run,
    preview_picks,
)
from polysearch.dataset import load_class_folders
from polysearch.errors import ArgumentError, ConfigError
from polysearch.model import (
    DatasetSource,
    FeatureExtractor,
    FeatureKind,
    GAConfig,
    RunConfig,
    SplitTag,
    SynthConfig,
    TerminationReason,
    TrainConfig,
)
from polysearch.policy import PolicyMatrix, load_policy, save_policy
from polysearch.report import category_summary
from polysearch.synth import generate_confounder

SYNTH_DOCUMENT = {
    "synthetic": SynthConfig.confounder(images_per_class=12, image_side=16, seed=3).model_dump(
        mode="json"
    ),
    "image_side": 16,
}


@pytest.fixture
def run_config(tmp_path) -> RunConfig:
    """A search small enough to finish in seconds."""
    return RunConfig(
        dataset=DatasetSource.model_validate(SYNTH_DOCUMENT),
        features=FeatureExtractor(kind=FeatureKind.HOG),
        train=TrainConfig(epochs=1, batch_size=16, learning_rate=0.05),
        ga=GAConfig(
            population_size=4,
            max_generations=2,
            stagnation_limit=5,
            num_parents_kept=2,
            elite_count=1,
            master_seed=1,
        ),
        baseline_epochs=3,
        output_dir=tmp_path / "run",
    )


@pytest.fixture
def policy_file(tmp_path) -> Path:
    probs = np.zeros((4, 15))
    probs[:, -1] = 1.0
    probs[0, :3] = [0.9, 0.8, 0.7]
    path = save_policy(
        PolicyMatrix(probs, 0.1),
        tmp_path / "policy.json",
        ["0-hue", "1-shape", "2-texture", "3-confound"],
        pool_names(),
    )
    return path


class TestBuildRunConfig:
    def test_file_and_overrides(self, tmp_path) -> None:
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"dataset": SYNTH_DOCUMENT, "workers": 3}))
        config = build_run_config(path, output_dir=tmp_path / "out", seed=9)
        assert config.workers == 3
        assert config.output_dir == tmp_path / "out"
        assert config.ga.master_seed == 9

    def test_workers_from_environment(self, monkeypatch) -> None:
        monkeypatch.setenv(WORKERS_ENV, "4")
        assert build_run_config(dataset=SYNTH_DOCUMENT).workers == 4
        assert build_run_config(dataset=SYNTH_DOCUMENT, workers=2).workers == 2

    def test_bad_environment_value(self, monkeypatch) -> None:
        monkeypatch.setenv(WORKERS_ENV, "many")
        with pytest.raises(ConfigError):
            build_run_config(dataset=SYNTH_DOCUMENT)

    def test_needs_dataset(self) -> None:
        with pytest.raises(ConfigError):
            build_run_config()

    def test_invalid_json(self, tmp_path) -> None:
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            build_run_config(path)

    def test_invalid_dataset(self) -> None:
        with pytest.raises(ConfigError):
            build_run_config(dataset=SYNTH_DOCUMENT | {"split_seed": -1})


class TestSearch:
    def test_artifacts(self, run_config) -> None:
        prepared = prepare_run(run_config)
        assert prepared.data.access_counts[SplitTag.TEST] == 0
        artifacts = cmd_search(run_config, prepared=prepared)
        assert prepared.data.access_counts[SplitTag.TEST] == 1
        out = run_config.output_dir
        for name in (
            "best_policy.json",
            "history.csv",
            "checkpoint.json",
            "baseline_head.json",
            "confusion_baseline.csv",
            "confusion_optimized.csv",
            "policy_heatmap.csv",
            "report.md",
        ):
            assert (out / name).is_file(), name
        assert 0.0 <= artifacts.best_fitness <= 1.0
        policy, document = load_policy(artifacts.best_policy, pool_names())
        assert policy.dims == (4, 15)
        assert document.classes == list(prepared.data.class_names)

    def test_rerun_is_bit_identical(self, run_config, tmp_path) -> None:
        first = cmd_search(run_config)
        second = cmd_search(run_config.model_copy(update={"output_dir": tmp_path / "again"}))
        assert first.best_policy.read_bytes() == second.best_policy.read_bytes()
        assert first.optimized_mpca == second.optimized_mpca

    def test_resume_finished_search(self, run_config) -> None:
        first = cmd_search(run_config)
        resumed = cmd_search(run_config, resume=True)
        assert resumed.best_policy.read_bytes() == first.best_policy.read_bytes()

    def test_order_experiment(self, run_config) -> None:
        results, path = cmd_order_experiment(run_config)
        assert len(results) == 6
        assert len({result.order for result in results}) == 6
        assert len(path.read_text().splitlines()) == 7
        assert path.read_text().splitlines()[0] == "order,mpca,overall_accuracy"
        assert (run_config.output_dir / "Geometry-Color-Cutout" / "report.md").is_file()


class TestPreview:
    def test_one_grid_per_class(self, policy_file, tmp_path) -> None:
        data = generate_confounder(SynthConfig.confounder(images_per_class=3, image_side=16))
        paths = cmd_preview(policy_file, data, 2, tmp_path / "preview")
        assert [path.name for path in paths] == [
            f"preview_{name}.png" for name in data.class_names
        ]
        with PILImage.open(paths[0]) as grid:
            assert grid.size == (7 * 16, 2 * 16)

    def test_picks(self) -> None:
        probs = np.zeros((1, 15))
        probs[0, [4, 9, 2]] = [0.9, 0.5, 0.3]
        top, bottom = preview_picks(PolicyMatrix(probs, 0.1), 0)
        assert top == [4, 9, 2]
        assert bottom == [0, 1, 3]

    def test_class_count_mismatch(self, policy_file, tmp_path) -> None:
        cfg = SynthConfig.confounder(images_per_class=2, image_side=16)
        data = generate_confounder(
            cfg.model_copy(update={"recipes": cfg.recipes[:3], "confounded_pair": None})
        )
        with pytest.raises(ArgumentError):
            cmd_preview(policy_file, data, 1, tmp_path / "preview")


class TestAnalyzePolicy:
    def test_default_csv(self, policy_file) -> None:
        summaries = cmd_analyze_policy(policy_file)
        assert summaries[1].cutout == 1.0
        assert summaries[1].geometry == 0.0
        assert summaries[0].ranking[:2] == ["Cutout", "ShearX"]
        csv_path = policy_file.with_name("policy_categories.csv")
        assert len(csv_path.read_text().splitlines()) == 5


class TestRastriginCheck:
    def test_small_run(self) -> None:
        config = GAConfig(
            population_size=20,
            max_generations=15,
            num_parents_kept=6,
            elite_count=2,
            master_seed=2,
        )
        summary = cmd_rastrigin_check(2, config)
        assert summary.best_value <= summary.initial_best
        assert summary.improvement_ratio <= 1.0
        assert 1 <= summary.generations <= 15
        assert summary.termination_reason in set(TerminationReason)

    def test_dims_checked(self) -> None:
        with pytest.raises(ArgumentError):
            cmd_rastrigin_check(0, GAConfig())


class TestDataCommands:
    def test_synth_data_round_trip(self, tmp_path) -> None:
        cfg = SynthConfig.confounder(images_per_class=3, image_side=16, seed=5)
        root = cmd_synth_data(cfg, tmp_path / "corpus")
        loaded = load_class_folders(root, side=16)
        np.testing.assert_array_equal(loaded.images, generate_confounder(cfg).images)

    def test_feature_pca(self, tiny_dataset, hog_features, tmp_path) -> None:
        path, (first, second) = cmd_feature_pca(
            tiny_dataset, hog_features, tmp_path / "pca.csv"
        )
        assert first >= second >= 0.0
        assert first + second <= 1.0 + 1e-12
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["label", "class", "pc1", "pc2"]
        assert len(rows) == len(tiny_dataset) + 1


def desk_scale_config(tmp_path, seed: int) -> RunConfig:
    return RunConfig(
        dataset=DatasetSource(
            synthetic=SynthConfig.confounder(images_per_class=200, image_side=64),
        ),
        features=FeatureExtractor(kind=FeatureKind.RAW_PIXELS),
        ga=GAConfig(
            population_size=20,
            max_generations=25,
            num_parents_kept=6,
            elite_count=2,
            master_seed=seed,
        ),
        output_dir=tmp_path / f"seed-{seed}",
        workers=8,
    )


@pytest.mark.slow
class TestDeskScaleSearch:
    def test_policy_beats_baseline_and_is_class_specific(self, tmp_path) -> None:
        gains, specific = [], 0
        for seed in range(3):
            artifacts = cmd_search(desk_scale_config(tmp_path, seed))
            gains.append(artifacts.optimized_mpca - artifacts.baseline_mpca)
            policy, document = load_policy(artifacts.best_policy, pool_names())
            hue, shape = category_summary(policy, document.classes)[:2]
            specific += hue.color < shape.color
        assert statistics.median(gains) >= 0.02
        assert specific >= 2

    def test_order_experiment_reduced(self, tmp_path) -> None:
        config = desk_scale_config(tmp_path, 0).model_copy(
            update={"ga": GAConfig(population_size=10, max_generations=5, num_parents_kept=4)}
        )
        results, _ = cmd_order_experiment(config)
        assert len(results) == 6
