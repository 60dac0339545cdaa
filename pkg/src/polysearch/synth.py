"""
Synthetic corpus with classes that are told apart by hue, by contour or by
a texture cue, for desk-scale policy search.

Every image is a single blob on a grey background with per-pixel Gaussian
noise. Layout (centre, size, stripe phase) is drawn from a generator seeded
by (seed, class, index), so the corpus is bit-reproducible.
"""

import numpy as np
import numpy.typing as npt
from loguru import logger

from polysearch.augment import Image
from polysearch.dataset import LabeledImageDataset
from polysearch.model import BlobShape, ClassRecipe, SynthConfig

type Mask = npt.NDArray[np.bool_]


def _blob_mask(
    shape: BlobShape,
    side: int,
    centre: tuple[float, float],
    radius: float,
) -> Mask:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cy, cx = centre
    match shape:
        case BlobShape.CIRCLE:
            return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        case BlobShape.SQUARE:
            # Same area as the circle of this radius.
            half = radius * np.sqrt(np.pi) / 2
            return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
        case BlobShape.TRIANGLE:
            top, height = cy - radius, 1.5 * radius
            half_width = (yy - top) / height * (np.sqrt(3) / 2 * radius)
            return (yy >= top) & (yy <= top + height) & (np.abs(xx - cx) <= half_width)


def _stripes(
    side: int, period: int, amplitude: int, phase: float
) -> npt.NDArray[np.float64]:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    wave = np.sin(2 * np.pi * (xx + yy) / period + phase)
    return amplitude * np.sign(wave)


def render(
    recipe: ClassRecipe, cfg: SynthConfig, rng: np.random.Generator
) -> Image:
    side = cfg.image_side
    radius = side * rng.uniform(0.22, 0.30)
    centre = (
        side / 2 + side * rng.uniform(-0.12, 0.12),
        side / 2 + side * rng.uniform(-0.12, 0.12),
    )
    phase = rng.uniform(0, 2 * np.pi)
    mask = _blob_mask(recipe.shape, side, centre, radius)

    canvas = np.full((side, side, 3), float(cfg.background))
    blob = np.broadcast_to(np.array(recipe.color, dtype=np.float64), canvas.shape)
    if recipe.texture_period > 0 and recipe.texture_amplitude > 0:
        stripes = _stripes(side, recipe.texture_period, recipe.texture_amplitude, phase)
        blob = blob + stripes[..., None]
    canvas[mask] = blob[mask]
    canvas += rng.normal(0.0, cfg.noise_level * 255.0, size=canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def generate_confounder(cfg: SynthConfig) -> LabeledImageDataset:
    """Render images_per_class images for every recipe, class by class."""
    count = cfg.num_classes * cfg.images_per_class
    images = np.empty((count, cfg.image_side, cfg.image_side, 3), dtype=np.uint8)
    labels = np.repeat(np.arange(cfg.num_classes), cfg.images_per_class)
    for label, recipe in enumerate(cfg.recipes):
        for index in range(cfg.images_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, label, index]))
            images[label * cfg.images_per_class + index] = render(recipe, cfg, rng)
    logger.info(
        f"Rendered {count} synthetic images: "
        + ", ".join(f"{recipe.name} ({recipe.kind})" for recipe in cfg.recipes)
    )
    return LabeledImageDataset(
        images=images,
        labels=labels,
        class_names=tuple(recipe.name for recipe in cfg.recipes),
    )
