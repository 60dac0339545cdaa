"""Policy genome: a class x augmentation matrix of grid-quantized probabilities."""

import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from loguru import logger
from pydantic import ValidationError

from polysearch.errors import ArgumentError, FormatError
from polysearch.model import PolicyFile

type GeneVector = npt.NDArray[np.float64]

GRID_TOLERANCE = 1e-9


def _check_grid_step(grid_step: float) -> None:
    if not (math.isfinite(grid_step) and 0.0 < grid_step <= 1.0):
        raise ArgumentError(f"grid_step must lie in (0, 1], got {grid_step}")


def quantize(value: float, grid_step: float) -> float:
    """Snap a value to the nearest grid multiple (ties up), clamped to [0, 1]."""
    _check_grid_step(grid_step)
    if not math.isfinite(value):
        raise ArgumentError(f"Cannot quantize non-finite value {value}")
    top = math.floor(1.0 / grid_step + GRID_TOLERANCE)
    steps = math.floor(value / grid_step + 0.5 + GRID_TOLERANCE)
    return round(min(max(steps, 0), top) * grid_step, 10)


def grid_values(grid_step: float) -> GeneVector:
    """All grid points 0, step, 2*step, ... not exceeding 1."""
    _check_grid_step(grid_step)
    top = math.floor(1.0 / grid_step + GRID_TOLERANCE)
    return np.array(
        [round(k * grid_step, 10) for k in range(top + 1)], dtype=np.float64
    )


def _on_grid(probs: npt.NDArray[np.float64], grid_step: float) -> bool:
    steps = probs / grid_step
    return bool(np.all(np.abs(steps - np.round(steps)) <= GRID_TOLERANCE / grid_step))


@dataclass(frozen=True)
class PolicyMatrix:
    """Probability of applying augmentation j to a training sample of class i."""

    probs: npt.NDArray[np.float64]
    grid_step: float

    def __post_init__(self) -> None:
        _check_grid_step(self.grid_step)
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
            raise ArgumentError(
                f"Policy must be a non-empty 2-D matrix, got shape {probs.shape}"
            )
        if not np.all(np.isfinite(probs)) or np.any((probs < 0) | (probs > 1)):
            raise ArgumentError("Policy probabilities must lie in [0, 1]")
        if not _on_grid(probs, self.grid_step):
            raise ArgumentError(
                f"Policy probabilities are not multiples of {self.grid_step}"
            )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @property
    def num_augs(self) -> int:
        return self.probs.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return self.num_classes, self.num_augs

    @classmethod
    def zeros(
        cls, num_classes: int, num_augs: int, grid_step: float = 0.1
    ) -> "PolicyMatrix":
        """The policy that never augments."""
        _check_dims(num_classes, num_augs)
        return cls(np.zeros((num_classes, num_augs)), grid_step)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyMatrix):
            return NotImplemented
        return self.grid_step == other.grid_step and np.array_equal(
            self.probs, other.probs
        )

    def __hash__(self) -> int:
        return hash((self.grid_step, self.probs.tobytes()))


def _check_dims(num_classes: int, num_augs: int) -> None:
    if num_classes < 1 or num_augs < 1:
        raise ArgumentError(
            f"Policy dimensions must be positive, got {num_classes}x{num_augs}"
        )


def random_policy(
    num_classes: int, num_augs: int, grid_step: float, seed: int
) -> PolicyMatrix:
    """Draw every gene uniformly from the probability grid."""
    _check_dims(num_classes, num_augs)
    grid = grid_values(grid_step)
    rng = np.random.default_rng(seed)
    return PolicyMatrix(rng.choice(grid, size=(num_classes, num_augs)), grid_step)


def flatten(policy: PolicyMatrix) -> GeneVector:
    """Row-major gene vector; gene (i, j) sits at index i * num_augs + j."""
    return policy.probs.reshape(-1).copy()


def unflatten(
    genes: Sequence[float] | GeneVector,
    dims: tuple[int, int],
    grid_step: float = 0.1,
) -> PolicyMatrix:
    num_classes, num_augs = dims
    _check_dims(num_classes, num_augs)
    vector = np.asarray(genes, dtype=np.float64)
    if vector.ndim != 1 or vector.size != num_classes * num_augs:
        raise ArgumentError(
            f"Gene vector of length {vector.size} does not fit "
            f"{num_classes}x{num_augs}"
        )
    return PolicyMatrix(vector.reshape(num_classes, num_augs), grid_step)


def save_policy(
    policy: PolicyMatrix,
    path: Path,
    class_names: Sequence[str],
    augmentation_names: Sequence[str],
) -> Path:
    """Write a policy as JSON."""
    if len(class_names) != policy.num_classes:
        raise ArgumentError(
            f"{len(class_names)} class names for {policy.num_classes} classes"
        )
    if len(augmentation_names) != policy.num_augs:
        raise ArgumentError(
            f"{len(augmentation_names)} augmentation names for "
            f"{policy.num_augs} augmentations"
        )
    document = PolicyFile(
        classes=list(class_names),
        augmentations=list(augmentation_names),
        grid_step=policy.grid_step,
        probabilities=policy.probs.tolist(),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug(f"Policy {policy.num_classes}x{policy.num_augs} written to {path}")
    return path


def load_policy(
    path: Path, augmentation_names: Sequence[str] | None = None
) -> tuple[PolicyMatrix, PolicyFile]:
    """
    Read a policy JSON file.

    If augmentation_names is given, the file's transform list must match it
    exactly, in order.

    Returns:
        The validated matrix and the raw document (for its class names).
    """
    try:
        document = PolicyFile.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise FormatError(f"Invalid policy file {path}: {e}", "document") from e
    if augmentation_names is not None:
        unknown = [
            name for name in document.augmentations if name not in augmentation_names
        ]
        if unknown:
            raise FormatError(f"Unknown transforms {unknown}", "augmentations")
        if list(document.augmentations) != list(augmentation_names):
            raise FormatError(
                "Transforms are not in canonical order", "augmentations"
            )
    rows = document.probabilities
    if len(rows) != len(document.classes) or any(
        len(row) != len(document.augmentations) for row in rows
    ):
        raise FormatError(
            f"Probability matrix does not match {len(document.classes)} classes "
            f"x {len(document.augmentations)} transforms",
            "probabilities",
        )
    try:
        policy = PolicyMatrix(np.array(rows, dtype=np.float64), document.grid_step)
    except ArgumentError as e:
        raise FormatError(str(e), "probabilities") from e
    return policy, document
