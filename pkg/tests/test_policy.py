import numpy as np
import pytest

from polysearch.augment import pool_names
from polysearch.errors import ArgumentError, FormatError
from polysearch.policy import (
    PolicyMatrix,
    flatten,
    grid_values,
    load_policy,
    quantize,
    random_policy,
    save_policy,
    unflatten,
)


class TestQuantize:
    def test_rounds_to_nearest_step(self) -> None:
        assert quantize(0.37, 0.1) == 0.4
        assert quantize(0.34, 0.1) == 0.3

    def test_ties_round_up(self) -> None:
        assert quantize(0.25, 0.1) == 0.3
        assert quantize(0.05, 0.1) == 0.1

    def test_clamps_to_unit_interval(self) -> None:
        assert quantize(-0.4, 0.1) == 0.0
        assert quantize(1.7, 0.1) == 1.0

    def test_rejects_bad_step(self) -> None:
        with pytest.raises(ArgumentError):
            quantize(0.5, 0.0)
        with pytest.raises(ArgumentError):
            quantize(0.5, 1.5)

    def test_rejects_non_finite_value(self) -> None:
        with pytest.raises(ArgumentError):
            quantize(float("nan"), 0.1)

    def test_is_idempotent_on_grid(self) -> None:
        for value in grid_values(0.1):
            assert quantize(float(value), 0.1) == value


class TestGridValues:
    def test_decimal_grid(self) -> None:
        grid = grid_values(0.1)
        assert grid.size == 11
        assert grid[0] == 0.0
        assert grid[-1] == 1.0
        assert grid[3] == 0.3

    def test_step_not_dividing_one(self) -> None:
        """Points stop at the last multiple not exceeding 1."""
        np.testing.assert_array_equal(grid_values(0.3), [0.0, 0.3, 0.6, 0.9])


class TestPolicyMatrix:
    def test_zeros(self) -> None:
        policy = PolicyMatrix.zeros(3, 15)
        assert policy.dims == (3, 15)
        assert not np.any(policy.probs)

    def test_probabilities_are_read_only(self) -> None:
        policy = PolicyMatrix.zeros(2, 15)
        with pytest.raises(ValueError):
            policy.probs[0, 0] = 0.5

    def test_rejects_off_grid_values(self) -> None:
        with pytest.raises(ArgumentError):
            PolicyMatrix(np.full((2, 3), 0.35), 0.1)

    def test_rejects_out_of_range(self) -> None:
        with pytest.raises(ArgumentError):
            PolicyMatrix(np.full((2, 3), 1.1), 0.1)

    def test_rejects_empty(self) -> None:
        with pytest.raises(ArgumentError):
            PolicyMatrix(np.zeros((0, 15)), 0.1)

    def test_equality_and_hash(self) -> None:
        a = random_policy(4, 15, 0.1, seed=7)
        b = random_policy(4, 15, 0.1, seed=7)
        assert a == b
        assert hash(a) == hash(b)
        assert a != random_policy(4, 15, 0.1, seed=8)


class TestFlatten:
    def test_row_major_layout(self) -> None:
        policy = random_policy(3, 15, 0.1, seed=1)
        genes = flatten(policy)
        assert genes.shape == (45,)
        assert genes[1 * 15 + 4] == policy.probs[1, 4]

    def test_unflatten_restores_policy(self) -> None:
        policy = random_policy(9, 15, 0.1, seed=2)
        assert unflatten(flatten(policy), (9, 15), 0.1) == policy

    def test_unflatten_rejects_wrong_length(self) -> None:
        with pytest.raises(ArgumentError):
            unflatten(np.zeros(44), (3, 15))

    def test_random_policy_stays_on_grid(self) -> None:
        policy = random_policy(5, 15, 0.1, seed=3)
        assert set(np.unique(policy.probs)) <= set(grid_values(0.1))


class TestRandomPolicy:
    def test_shape_range_and_grid_over_seeds(self) -> None:
        grid = set(grid_values(0.1))
        for seed in range(1000):
            policy = random_policy(4, 15, 0.1, seed=seed)
            assert policy.probs.shape == (4, 15)
            assert np.all((policy.probs >= 0.0) & (policy.probs <= 1.0))
            assert set(np.unique(policy.probs)) <= grid

    def test_same_seed_same_policy(self) -> None:
        for seed in range(20):
            np.testing.assert_array_equal(
                random_policy(3, 15, 0.05, seed).probs,
                random_policy(3, 15, 0.05, seed).probs,
            )

    def test_different_seeds_differ(self) -> None:
        policies = {random_policy(4, 15, 0.1, seed=seed) for seed in range(50)}
        assert len(policies) == 50

    def test_every_grid_value_drawn(self) -> None:
        probs = np.concatenate(
            [random_policy(4, 15, 0.1, seed=seed).probs.ravel() for seed in range(100)]
        )
        np.testing.assert_array_equal(np.unique(probs), grid_values(0.1))
        counts = np.unique(probs, return_counts=True)[1]
        assert counts.min() > 0.7 * len(probs) / 11

    def test_rejects_empty_dimensions(self) -> None:
        with pytest.raises(ArgumentError):
            random_policy(0, 15, 0.1, seed=0)


class TestPolicyFile:
    def test_save_load_save_is_byte_identical(self, tmp_path) -> None:
        policy = random_policy(4, 15, 0.1, seed=11)
        names = ["a", "b", "c", "d"]
        first = save_policy(policy, tmp_path / "one.json", names, pool_names())
        loaded, document = load_policy(first, pool_names())
        second = save_policy(loaded, tmp_path / "two.json", document.classes, pool_names())
        assert loaded == policy
        assert first.read_bytes() == second.read_bytes()

    def test_unknown_transform(self, tmp_path) -> None:
        policy = PolicyMatrix.zeros(2, 15)
        names = pool_names()
        names[3] = "Warp"
        path = save_policy(policy, tmp_path / "p.json", ["x", "y"], names)
        with pytest.raises(FormatError):
            load_policy(path, pool_names())

    def test_wrong_row_length(self, tmp_path) -> None:
        path = tmp_path / "p.json"
        path.write_text(
            '{"classes": ["x"], "augmentations": ["A", "B"], "grid_step": 0.1,'
            ' "probabilities": [[0.1]]}'
        )
        with pytest.raises(FormatError):
            load_policy(path)

    def test_off_grid_probability(self, tmp_path) -> None:
        path = tmp_path / "p.json"
        path.write_text(
            '{"classes": ["x"], "augmentations": ["A"], "grid_step": 0.1,'
            ' "probabilities": [[0.15]]}'
        )
        with pytest.raises(FormatError):
            load_policy(path)

    def test_not_json(self, tmp_path) -> None:
        path = tmp_path / "p.json"
        path.write_text("not json")
        with pytest.raises(FormatError):
            load_policy(path)

    def test_name_count_mismatch(self, tmp_path) -> None:
        with pytest.raises(ArgumentError):
            save_policy(PolicyMatrix.zeros(2, 15), tmp_path / "p.json", ["x"], pool_names())
