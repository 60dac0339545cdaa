"""
Linear softmax head over frozen features, and the short fine-tune that turns
an augmentation policy into a fitness score.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
from loguru import logger
from pydantic import ValidationError

from polysearch.augment import (
    DEFAULT_ORDER,
    CategoryOrder,
    apply_policy,
    canonical_pool,
)
from polysearch.dataset import LabeledImageDataset
from polysearch.errors import ArgumentError, EvaluationError, FormatError
from polysearch.features import extract_batch, extract_features
from polysearch.metrics import ConfusionMatrix, confusion_from_predictions, mpca
from polysearch.model import (
    FeatureExtractor,
    FeatureKind,
    HeadCheckpoint,
    SplitTag,
    TrainConfig,
)
from polysearch.policy import GeneVector, PolicyMatrix, unflatten

type Matrix = npt.NDArray[np.float64]
type Vector = npt.NDArray[np.float64]


@dataclass(frozen=True)
class LinearHead:
    """
    scores = (x - feature_mean) @ weights + bias

    weights is (input_dim, num_classes); feature_mean defaults to zeros.
    """

    weights: Matrix
    bias: Vector
    feature_mean: Vector | None = None

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ArgumentError(
                f"Head weights {weights.shape} and bias {bias.shape} disagree"
            )
        mean = (
            np.zeros(weights.shape[0])
            if self.feature_mean is None
            else np.array(self.feature_mean, dtype=np.float64)
        )
        if mean.shape != (weights.shape[0],):
            raise ArgumentError(
                f"Feature mean {mean.shape} does not match input dim {weights.shape[0]}"
            )
        if not (
            np.all(np.isfinite(weights))
            and np.all(np.isfinite(bias))
            and np.all(np.isfinite(mean))
        ):
            raise ArgumentError("Head parameters must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "feature_mean", mean)

    @property
    def input_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(
        cls, input_dim: int, num_classes: int, feature_mean: Vector | None = None
    ) -> "LinearHead":
        return cls(np.zeros((input_dim, num_classes)), np.zeros(num_classes), feature_mean)


def softmax(scores: Matrix) -> Matrix:
    """Row-wise softmax with max subtraction."""
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def _scores(head: LinearHead, features: Matrix) -> Matrix:
    if features.shape[-1] != head.input_dim:
        raise ArgumentError(
            f"Features of length {features.shape[-1]} for a head expecting "
            f"{head.input_dim}"
        )
    return (features - head.feature_mean) @ head.weights + head.bias


def predict(features: Vector | Matrix, head: LinearHead) -> Vector | Matrix:
    """Class distribution for one feature vector or a batch of them."""
    return softmax(_scores(head, np.asarray(features, dtype=np.float64)))


def predict_labels(features: Matrix, head: LinearHead) -> npt.NDArray[np.int64]:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(_scores(head, features), axis=-1)


def _loss_and_gradients(
    weights: Matrix, bias: Vector, centered: Matrix, labels: npt.NDArray[np.int64]
) -> tuple[float, Matrix, Vector]:
    scores = centered @ weights + bias
    shifted = scores - np.max(scores, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(len(labels))
    loss = -float(np.mean(log_probs[rows, labels]))
    delta = np.exp(log_probs)
    delta[rows, labels] -= 1.0
    delta /= len(labels)
    return loss, centered.T @ delta, np.sum(delta, axis=0)


def loss_and_gradients(
    head: LinearHead, features: Matrix, labels: npt.ArrayLike
) -> tuple[float, Matrix, Vector]:
    """Mean categorical cross-entropy and its gradients for weights and bias."""
    centered = np.asarray(features, dtype=np.float64) - head.feature_mean
    return _loss_and_gradients(
        head.weights, head.bias, centered, np.asarray(labels, dtype=np.int64)
    )


def cross_entropy(head: LinearHead, features: Matrix, labels: npt.ArrayLike) -> float:
    return loss_and_gradients(head, features, labels)[0]


def _check_training_data(train_set: LabeledImageDataset, policy: PolicyMatrix) -> None:
    if len(train_set) == 0:
        raise ArgumentError("Training set is empty")
    for index, count in enumerate(train_set.class_counts()):
        if count == 0:
            raise ArgumentError(
                f"Class {train_set.class_names[index]} has no training samples"
            )
    if policy.num_classes != train_set.num_classes:
        raise ArgumentError(
            f"Policy has {policy.num_classes} classes, data has "
            f"{train_set.num_classes}"
        )


def _augmented_features(
    train_set: LabeledImageDataset,
    base: Matrix,
    policy: PolicyMatrix,
    order: CategoryOrder,
    fe: FeatureExtractor,
    rng: np.random.Generator,
) -> Matrix:
    if not np.any(policy.probs):
        return base
    out = base.copy()
    for index, (img, label) in enumerate(zip(train_set.images, train_set.labels)):
        augmented = apply_policy(img, int(label), policy, order, rng)
        if augmented is not img:
            out[index] = extract_features(augmented, fe)
    return out


def train_head(
    train_set: LabeledImageDataset,
    policy: PolicyMatrix,
    order: CategoryOrder,
    fe: FeatureExtractor,
    cfg: TrainConfig,
    init: LinearHead,
    seed: int,
    *,
    features: Matrix | None = None,
) -> LinearHead:
    """
    Fine-tune a linear head on policy-augmented training data.

    Every epoch draws a fresh augmentation of every sample, then runs
    shuffled mini-batches of momentum gradient descent with decoupled weight
    decay. The last partial batch is used.

    Args:
        features: Precomputed un-augmented features of train_set; samples
            the policy leaves untouched reuse them.

    Raises:
        ArgumentError: empty data, a class without samples or a policy of
            the wrong shape.
        EvaluationError: the loss became non-finite.
    """
    _check_training_data(train_set, policy)
    base = extract_batch(train_set.images, fe) if features is None else features
    if base.shape[1] != init.input_dim:
        raise ArgumentError(
            f"Features of length {base.shape[1]} for a head expecting {init.input_dim}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.shuffle_seed, seed]))
    labels = train_set.labels
    weights, bias = init.weights.copy(), init.bias.copy()
    velocity_w, velocity_b = np.zeros_like(weights), np.zeros_like(bias)

    for epoch in range(cfg.epochs):
        centered = (
            _augmented_features(train_set, base, policy, order, fe, rng)
            - init.feature_mean
        )
        permutation = rng.permutation(len(labels))
        for start in range(0, len(labels), cfg.batch_size):
            batch = permutation[start : start + cfg.batch_size]
            loss, grad_w, grad_b = _loss_and_gradients(
                weights, bias, centered[batch], labels[batch]
            )
            if not np.isfinite(loss):
                raise EvaluationError(f"Non-finite loss in epoch {epoch + 1}")
            velocity_w = cfg.momentum * velocity_w + grad_w
            velocity_b = cfg.momentum * velocity_b + grad_b
            weights -= cfg.learning_rate * (velocity_w + cfg.weight_decay * weights)
            bias -= cfg.learning_rate * velocity_b
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise EvaluationError("Fine-tuning produced non-finite head parameters")
    return LinearHead(weights, bias, init.feature_mean)


def train_baseline(
    train_set: LabeledImageDataset,
    fe: FeatureExtractor,
    cfg: TrainConfig,
    epochs: int = 20,
    seed: int = 0,
    *,
    features: Matrix | None = None,
) -> LinearHead:
    """Train a head from zeros on un-augmented data; it warm-starts every fine-tune."""
    base = extract_batch(train_set.images, fe) if features is None else features
    init = LinearHead.zeros(base.shape[1], train_set.num_classes, base.mean(axis=0))
    policy = PolicyMatrix.zeros(train_set.num_classes, len(canonical_pool()))
    logger.info(f"Training baseline head for {epochs} epochs on {len(train_set)} samples")
    return train_head(
        train_set,
        policy,
        DEFAULT_ORDER,
        fe,
        cfg.model_copy(update={"epochs": epochs}),
        init,
        seed,
        features=base,
    )


def evaluate_head(
    dataset: LabeledImageDataset,
    fe: FeatureExtractor,
    head: LinearHead,
    *,
    features: Matrix | None = None,
) -> ConfusionMatrix:
    """Confusion matrix of the head on un-augmented samples."""
    matrix = extract_batch(dataset.images, fe) if features is None else features
    return confusion_from_predictions(
        dataset.labels, predict_labels(matrix, head), dataset.class_names
    )


@dataclass
class PolicyFitness:
    """
    Picklable fitness function for the GA: genome -> validation MPCA.

    Holds only the train and validation splits, so worker processes never
    see test data.
    """

    train_set: LabeledImageDataset
    eval_set: LabeledImageDataset
    order: CategoryOrder
    fe: FeatureExtractor
    cfg: TrainConfig
    baseline: LinearHead
    grid_step: float = 0.1
    train_features: Matrix = field(init=False, repr=False)
    eval_features: Matrix = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.train_features = extract_batch(self.train_set.images, self.fe)
        self.eval_features = extract_batch(self.eval_set.images, self.fe)

    @classmethod
    def from_dataset(
        cls,
        data: LabeledImageDataset,
        order: CategoryOrder,
        fe: FeatureExtractor,
        cfg: TrainConfig,
        baseline: LinearHead,
        grid_step: float = 0.1,
    ) -> "PolicyFitness":
        return cls(
            train_set=data.subset(SplitTag.TRAIN),
            eval_set=data.subset(SplitTag.VAL),
            order=order,
            fe=fe,
            cfg=cfg,
            baseline=baseline,
            grid_step=grid_step,
        )

    @property
    def dims(self) -> tuple[int, int]:
        return self.train_set.num_classes, len(canonical_pool())

    def policy(self, genome: GeneVector) -> PolicyMatrix:
        return unflatten(genome, self.dims, self.grid_step)

    def score(self, policy: PolicyMatrix, seed: int) -> float:
        head = train_head(
            self.train_set,
            policy,
            self.order,
            self.fe,
            self.cfg,
            self.baseline,
            seed,
            features=self.train_features,
        )
        return mpca(
            evaluate_head(self.eval_set, self.fe, head, features=self.eval_features)
        )

    def __call__(self, genome: GeneVector, eval_seed: int) -> float:
        return self.score(self.policy(genome), eval_seed)


def fitness_of_policy(
    policy: PolicyMatrix,
    order: CategoryOrder,
    data: LabeledImageDataset,
    fe: FeatureExtractor,
    cfg: TrainConfig,
    baseline_head: LinearHead,
    seed: int,
) -> float:
    """Fine-tune on the train split with the policy; MPCA on the val split."""
    fitness = PolicyFitness.from_dataset(
        data, order, fe, cfg, baseline_head, policy.grid_step
    )
    return fitness.score(policy, seed)


def save_head(
    head: LinearHead, path: Path, class_names: Sequence[str], kind: FeatureKind
) -> Path:
    checkpoint = HeadCheckpoint(
        classes=list(class_names),
        feature_kind=kind,
        input_dim=head.input_dim,
        num_classes=head.num_classes,
        weights=head.weights.tolist(),
        bias=head.bias.tolist(),
        feature_mean=head.feature_mean.tolist(),  # type: ignore[union-attr]
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(checkpoint.model_dump_json(), encoding="utf-8")
    logger.debug(f"Head {head.input_dim}x{head.num_classes} written to {path}")
    return path


def load_head(path: Path) -> tuple[LinearHead, HeadCheckpoint]:
    try:
        checkpoint = HeadCheckpoint.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise FormatError(f"Invalid head checkpoint {path}: {e}", "document") from e
    head = LinearHead(
        np.array(checkpoint.weights),
        np.array(checkpoint.bias),
        np.array(checkpoint.feature_mean),
    )
    return head, checkpoint
