from enum import StrEnum
from pathlib import Path
from typing import Any, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Category(StrEnum):
    """Augmentation category; policies are applied one category at a time."""

    GEOMETRY = "Geometry"
    COLOR = "Color"
    CUTOUT = "Cutout"


class FeatureKind(StrEnum):
    RAW_PIXELS = "RawPixels"
    HOG = "HOG"


class SplitTag(StrEnum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class TerminationReason(StrEnum):
    MAX_GENERATIONS = "max_generations"
    STAGNATION = "stagnation"


class RecipeKind(StrEnum):
    """Which visual cue carries a synthetic class's identity."""

    HUE = "hue"
    SHAPE = "shape"
    TEXTURE = "texture"


class BlobShape(StrEnum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"


class GAConfig(BaseModel):
    """Genetic algorithm settings."""

    model_config = ConfigDict(extra="forbid")

    population_size: int = Field(100, ge=2)
    max_generations: int = Field(100, ge=1)
    stagnation_limit: int = Field(10, ge=1)
    num_parents_kept: int = Field(20, ge=1)
    elite_count: int = Field(2, ge=1)
    mutation_rate: float = Field(0.05, ge=0.0, le=1.0)
    seed_zero_policy: bool = True
    master_seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_counts(self) -> Self:
        if not (
            self.elite_count <= self.num_parents_kept <= self.population_size
        ):
            raise ValueError(
                "Expected elite_count <= num_parents_kept <= population_size, "
                f"got {self.elite_count}, {self.num_parents_kept}, "
                f"{self.population_size}"
            )
        return self

    @property
    def offspring_count(self) -> int:
        """Children bred per generation; they replace the worst members."""
        return self.population_size - self.num_parents_kept


class TrainConfig(BaseModel):
    """Linear-head fine-tuning settings."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(5, ge=1)
    batch_size: int = Field(256, ge=1)
    learning_rate: float = Field(0.01, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0001, ge=0.0)
    shuffle_seed: int = Field(0, ge=0)


class FeatureExtractor(BaseModel):
    """Frozen feature extractor settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: FeatureKind = FeatureKind.RAW_PIXELS
    cell_size: int = Field(8, ge=2)
    orientation_bins: int = Field(9, ge=1)
    block_size: int = Field(2, ge=1)
    epsilon: float = Field(1e-6, gt=0.0)

    def output_dim(self, height: int, width: int) -> int:
        """Length of the feature vector for an image of the given size."""
        if self.kind == FeatureKind.RAW_PIXELS:
            return height * width * 3
        cells_y, cells_x = height // self.cell_size, width // self.cell_size
        blocks_y = cells_y - self.block_size + 1
        blocks_x = cells_x - self.block_size + 1
        if blocks_y < 1 or blocks_x < 1:
            return 0
        return blocks_y * blocks_x * self.block_size**2 * self.orientation_bins


class ClassRecipe(BaseModel):
    """How one synthetic class is rendered."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    kind: RecipeKind
    color: tuple[int, int, int]
    shape: BlobShape = BlobShape.CIRCLE
    texture_period: int = Field(0, ge=0)
    texture_amplitude: int = Field(0, ge=0, le=127)

    @model_validator(mode="after")
    def check_recipe(self) -> Self:
        if any(not 0 <= channel <= 255 for channel in self.color):
            raise ValueError(f"Color {self.color} is not 8-bit RGB")
        striped = self.texture_period > 0 and self.texture_amplitude > 0
        if self.kind == RecipeKind.TEXTURE and not striped:
            raise ValueError(
                f"Texture class {self.name} needs a texture period and amplitude"
            )
        if self.kind != RecipeKind.TEXTURE and (
            self.texture_period or self.texture_amplitude
        ):
            raise ValueError(
                f"Only texture classes carry stripes, {self.name} is {self.kind}"
            )
        return self


# Luminance-matched pair: 0.299*dR + 0.587*dG + 0.114*dB is below 0.1 grey
# levels, so a grayscale conversion makes the two colors indistinguishable.
HUE_COLOR = (178, 98, 151)
BASE_COLOR = (78, 158, 105)


class SynthConfig(BaseModel):
    """Synthetic confounding-class corpus settings."""

    model_config = ConfigDict(extra="forbid")

    recipes: list[ClassRecipe] = Field(..., min_length=2)
    images_per_class: int = Field(200, ge=1)
    image_side: int = Field(64, ge=16)
    noise_level: float = Field(0.08, ge=0.0, le=1.0)
    background: int = Field(96, ge=0, le=255)
    confounded_pair: tuple[int, int] | None = None
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_recipes(self) -> Self:
        kinds = {recipe.kind for recipe in self.recipes}
        if RecipeKind.HUE not in kinds or RecipeKind.SHAPE not in kinds:
            raise ValueError(
                "At least one hue-defined and one shape-defined class required"
            )
        names = [recipe.name for recipe in self.recipes]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate class names in {names}")
        if self.confounded_pair is not None:
            first, second = self.confounded_pair
            if first == second:
                raise ValueError("Confounded pair indices must be distinct")
            if not (
                0 <= first < len(self.recipes)
                and 0 <= second < len(self.recipes)
            ):
                raise ValueError(
                    f"Confounded pair {self.confounded_pair} out of range"
                )
        return self

    @property
    def num_classes(self) -> int:
        return len(self.recipes)

    @classmethod
    def confounder(
        cls, images_per_class: int = 200, image_side: int = 64, seed: int = 0
    ) -> Self:
        """Four classes: hue-, shape- and texture-defined plus a confounded partner."""
        return cls(
            recipes=[
                ClassRecipe(name="0-hue", kind=RecipeKind.HUE, color=HUE_COLOR),
                ClassRecipe(
                    name="1-shape",
                    kind=RecipeKind.SHAPE,
                    color=BASE_COLOR,
                    shape=BlobShape.SQUARE,
                ),
                ClassRecipe(
                    name="2-texture",
                    kind=RecipeKind.TEXTURE,
                    color=BASE_COLOR,
                    texture_period=4,
                    texture_amplitude=40,
                ),
                ClassRecipe(
                    name="3-confound",
                    kind=RecipeKind.TEXTURE,
                    color=BASE_COLOR,
                    texture_period=6,
                    texture_amplitude=30,
                ),
            ],
            images_per_class=images_per_class,
            image_side=image_side,
            confounded_pair=(2, 3),
            seed=seed,
        )


class DatasetSource(BaseModel):
    """Exactly one of a class-folder tree, an IDX pair or a synthetic corpus."""

    model_config = ConfigDict(extra="forbid")

    folder: Path | None = None
    idx_images: Path | None = None
    idx_labels: Path | None = None
    synthetic: SynthConfig | None = None
    image_side: int = Field(64, ge=1)
    split: tuple[float, float, float] = (0.80, 0.09, 0.11)
    split_seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_single_source(self) -> Self:
        if (self.idx_images is None) != (self.idx_labels is None):
            raise ValueError("IDX sources need both images and labels paths")
        sources = [
            self.folder is not None,
            self.idx_images is not None,
            self.synthetic is not None,
        ]
        if sum(sources) != 1:
            raise ValueError("Exactly one dataset source must be configured")
        return self


class RunConfig(BaseModel):
    """Everything a search run needs; loaded from one JSON document."""

    model_config = ConfigDict(extra="forbid")

    dataset: DatasetSource
    features: FeatureExtractor = FeatureExtractor()
    train: TrainConfig = TrainConfig()
    ga: GAConfig = GAConfig()
    order: str = "Geometry>Color>Cutout"
    baseline_epochs: int = Field(20, ge=1)
    grid_step: float = Field(0.1, gt=0.0, le=1.0)
    output_dir: Path = Path("runs")
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_order(self) -> Self:
        parts = self.order.split(">")
        if sorted(parts) != sorted(category.value for category in Category):
            raise ValueError(
                f"Order {self.order!r} must name each of "
                f"{', '.join(Category)} exactly once"
            )
        return self


class RunArtifacts(BaseModel):
    best_policy: Path
    history: Path
    baseline_confusion: Path
    optimized_confusion: Path
    policy_heatmap: Path
    report: Path
    best_fitness: float
    baseline_mpca: float
    optimized_mpca: float
    optimized_overall_accuracy: float


class GenerationRecord(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    generation: int
    best_fitness: float
    mean_fitness: float
    evaluations: int
    elapsed_seconds: float


class PolicyFile(BaseModel):
    """On-disk policy matrix."""

    model_config = ConfigDict(extra="forbid")

    classes: list[str] = Field(..., min_length=1)
    augmentations: list[str] = Field(..., min_length=1)
    grid_step: float
    probabilities: list[list[float]]


class HeadCheckpoint(BaseModel):
    """On-disk linear head."""

    model_config = ConfigDict(extra="forbid")

    classes: list[str]
    feature_kind: FeatureKind
    input_dim: int = Field(..., ge=1)
    num_classes: int = Field(..., ge=1)
    weights: list[list[float]]
    bias: list[float]
    feature_mean: list[float]

    @model_validator(mode="after")
    def check_dims(self) -> Self:
        if len(self.weights) != self.input_dim or any(
            len(row) != self.num_classes for row in self.weights
        ):
            raise ValueError("weights do not match input_dim x num_classes")
        if len(self.bias) != self.num_classes:
            raise ValueError("bias does not match num_classes")
        if len(self.feature_mean) != self.input_dim:
            raise ValueError("feature_mean does not match input_dim")
        return self


class IndividualState(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    genome: list[float]
    fitness: float | None
    eval_seed: int


class GACheckpoint(BaseModel):
    """Search state written after every generation."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    master_seed: int
    population: list[IndividualState]
    history: list[GenerationRecord]
    cache: dict[str, tuple[float, int]]
    rng_state: dict[str, Any]
    evaluations: int


class OrderResult(BaseModel):
    order: str
    mpca: float
    overall_accuracy: float


class RastriginSummary(BaseModel):
    dims: int
    best_value: float
    initial_best: float
    generations: int
    improvement_ratio: float
    termination_reason: TerminationReason


class CategorySummary(BaseModel):
    """Per-class mean probability by category plus the ranked transforms."""

    class_name: str
    geometry: float
    color: float
    cutout: float
    ranking: list[str]
