import numpy as np
import pytest

from polysearch.dataset import LabeledImageDataset, stratified_split
from polysearch.model import FeatureExtractor, FeatureKind, SynthConfig, TrainConfig
from polysearch.synth import generate_confounder


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def image(rng: np.random.Generator) -> np.ndarray:
    """A 24x20 RGB image with every channel spanning several levels."""
    return rng.integers(0, 256, size=(24, 20, 3), dtype=np.uint8)


@pytest.fixture
def synth_config() -> SynthConfig:
    return SynthConfig.confounder(images_per_class=12, image_side=16, seed=3)


@pytest.fixture
def tiny_dataset(synth_config: SynthConfig) -> LabeledImageDataset:
    """48 synthetic 16px images in four classes, already split."""
    return stratified_split(generate_confounder(synth_config), seed=0)


@pytest.fixture
def raw_features() -> FeatureExtractor:
    return FeatureExtractor(kind=FeatureKind.RAW_PIXELS)


@pytest.fixture
def hog_features() -> FeatureExtractor:
    return FeatureExtractor(kind=FeatureKind.HOG)


@pytest.fixture
def fast_train() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=16, learning_rate=0.05)
