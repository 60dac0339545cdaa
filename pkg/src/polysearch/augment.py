"""
The fifteen-transform augmentation pool and the class-conditional applicator.

Images are HxWx3 uint8 arrays. Every transform returns a new array of the
same shape; randomness (signs, cutout position) comes only from the
generator passed in.
"""

import itertools
from collections.abc import Callable
from dataclasses import dataclass
from functools import cache

import numpy as np
import numpy.typing as npt
from PIL import Image as PILImage
from PIL import ImageEnhance

from polysearch.errors import ArgumentError
from polysearch.model import Category
from polysearch.policy import PolicyMatrix

type Image = npt.NDArray[np.uint8]
type CategoryOrder = tuple[Category, Category, Category]
type TransformOp = Callable[[Image, float, np.random.Generator], Image]

FILL = (128, 128, 128)
DEFAULT_ORDER: CategoryOrder = (Category.GEOMETRY, Category.COLOR, Category.CUTOUT)

_transform_calls = 0


@dataclass(frozen=True)
class AugmentationDescriptor:
    name: str
    category: Category
    magnitude: float


def check_image(img: Image) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ArgumentError(
            f"Expected an HxWx3 uint8 image, got {img.dtype} {img.shape}"
        )
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ArgumentError("Image has zero area")


def _signed(magnitude: float, rng: np.random.Generator) -> float:
    return -magnitude if rng.random() < 0.5 else magnitude


def _to_pil(img: Image) -> PILImage.Image:
    return PILImage.fromarray(np.ascontiguousarray(img))


def _affine(img: Image, coefficients: tuple[float, ...]) -> Image:
    pil = _to_pil(img)
    out = pil.transform(
        pil.size,
        PILImage.Transform.AFFINE,
        coefficients,
        resample=PILImage.Resampling.NEAREST,
        fillcolor=FILL,
    )
    return np.asarray(out, dtype=np.uint8).copy()


def shear_x(img: Image, factor: float) -> Image:
    return _affine(img, (1, factor, 0, 0, 1, 0))


def shear_y(img: Image, factor: float) -> Image:
    return _affine(img, (1, 0, 0, factor, 1, 0))


def translate_x(img: Image, pixels: float) -> Image:
    return _affine(img, (1, 0, pixels, 0, 1, 0))


def translate_y(img: Image, pixels: float) -> Image:
    return _affine(img, (1, 0, 0, 0, 1, pixels))


def rotate(img: Image, degrees: float) -> Image:
    pil = _to_pil(img)
    out = pil.rotate(degrees, resample=PILImage.Resampling.NEAREST, fillcolor=FILL)
    return np.asarray(out, dtype=np.uint8).copy()


def invert(img: Image) -> Image:
    return 255 - img


def solarize(img: Image, threshold: float) -> Image:
    """Invert every value at or above the threshold."""
    return np.where(img >= threshold, 255 - img, img).astype(np.uint8)


def posterize(img: Image, bits: int) -> Image:
    """Keep the `bits` most significant bits of every channel."""
    if not 0 <= bits <= 8:
        raise ArgumentError(f"Posterize keeps 0-8 bits, got {bits}")
    mask = np.uint8(~(2 ** (8 - bits) - 1) & 0xFF)
    return img & mask


def _stretch_lut(low: int, high: int) -> npt.NDArray[np.uint8]:
    levels = np.arange(256, dtype=np.int64)
    span = high - low
    lut = ((levels - low) * 510 + span) // (2 * span)
    return np.clip(lut, 0, 255).astype(np.uint8)


def auto_contrast(img: Image) -> Image:
    """Stretch each channel so its minimum maps to 0 and maximum to 255."""
    out = img.copy()
    for channel in range(3):
        plane = img[..., channel]
        low, high = int(plane.min()), int(plane.max())
        if high > low:
            out[..., channel] = _stretch_lut(low, high)[plane]
    return out


def _equalize_step(hist: npt.NDArray[np.int64]) -> npt.NDArray[np.int64] | None:
    cdf = np.cumsum(hist)
    total = int(cdf[-1])
    cdf_min = int(hist[np.flatnonzero(hist)[0]])
    span = total - cdf_min
    if span == 0:
        return None
    lut = ((cdf - cdf_min) * 510 + span) // (2 * span)
    return np.clip(lut, 0, 255)


def _equalize_lut(plane: Image) -> npt.NDArray[np.uint8]:
    hist = np.bincount(plane.ravel(), minlength=256).astype(np.int64)
    lut = np.arange(256, dtype=np.int64)
    # The cumulative remap is repeated until it fixes every occupied level.
    for _ in range(256):
        step = _equalize_step(hist)
        occupied = np.flatnonzero(hist)
        if step is None or np.array_equal(step[occupied], occupied):
            break
        lut = step[lut]
        hist = np.bincount(step, weights=hist, minlength=256).astype(np.int64)
    return lut.astype(np.uint8)


def equalize(img: Image) -> Image:
    """Per-channel histogram equalization; a constant channel is left alone."""
    out = img.copy()
    for channel in range(3):
        plane = img[..., channel]
        out[..., channel] = _equalize_lut(plane)[plane]
    return out


def _enhance(
    enhancer: type[ImageEnhance._Enhance], img: Image, factor: float
) -> Image:
    out = enhancer(_to_pil(img)).enhance(factor)
    return np.asarray(out, dtype=np.uint8).copy()


def contrast(img: Image, factor: float) -> Image:
    return _enhance(ImageEnhance.Contrast, img, factor)


def color(img: Image, factor: float) -> Image:
    return _enhance(ImageEnhance.Color, img, factor)


def brightness(img: Image, factor: float) -> Image:
    return _enhance(ImageEnhance.Brightness, img, factor)


def sharpness(img: Image, factor: float) -> Image:
    return _enhance(ImageEnhance.Sharpness, img, factor)


def cutout_side(height: int, width: int, fraction: float = 0.2) -> int:
    return int(fraction * min(height, width))


def cutout(img: Image, fraction: float, rng: np.random.Generator) -> Image:
    """Fill one square patch, centred at a random pixel and clipped, with grey."""
    height, width = img.shape[:2]
    side = cutout_side(height, width, fraction)
    centre_y = int(rng.integers(height))
    centre_x = int(rng.integers(width))
    out = img.copy()
    if side == 0:
        return out
    top, left = centre_y - side // 2, centre_x - side // 2
    out[max(top, 0) : max(top + side, 0), max(left, 0) : max(left + side, 0)] = FILL
    return out


NAME_TO_OP: dict[str, TransformOp] = {
    "ShearX": lambda img, m, rng: shear_x(img, _signed(m, rng)),
    "ShearY": lambda img, m, rng: shear_y(img, _signed(m, rng)),
    "TranslateX": lambda img, m, rng: translate_x(
        img, _signed(m * img.shape[1], rng)
    ),
    "TranslateY": lambda img, m, rng: translate_y(
        img, _signed(m * img.shape[0], rng)
    ),
    "Rotate": lambda img, m, rng: rotate(img, _signed(m, rng)),
    "AutoContrast": lambda img, m, rng: auto_contrast(img),
    "Invert": lambda img, m, rng: invert(img),
    "Equalize": lambda img, m, rng: equalize(img),
    "Solarize": lambda img, m, rng: solarize(img, m),
    "Posterize": lambda img, m, rng: posterize(img, int(m)),
    "Contrast": lambda img, m, rng: contrast(img, 1.0 + _signed(m, rng)),
    "Color": lambda img, m, rng: color(img, 1.0 + _signed(m, rng)),
    "Brightness": lambda img, m, rng: brightness(img, 1.0 + _signed(m, rng)),
    "Sharpness": lambda img, m, rng: sharpness(img, 1.0 + _signed(m, rng)),
    "Cutout": lambda img, m, rng: cutout(img, m, rng),
}


@cache
def canonical_pool() -> tuple[AugmentationDescriptor, ...]:
    """
    The fifteen transforms in genome order.

    Magnitudes are the means of the usual search ranges: shear 0.15,
    translate 0.225 of the image side, rotate 15 degrees, solarize 128,
    posterize 4 bits, enhancement factor 1 +/- 0.45, cutout 0.2 of the
    shorter side.
    """
    geometry, color_, cut = Category.GEOMETRY, Category.COLOR, Category.CUTOUT
    return (
        AugmentationDescriptor("ShearX", geometry, 0.15),
        AugmentationDescriptor("ShearY", geometry, 0.15),
        AugmentationDescriptor("TranslateX", geometry, 0.225),
        AugmentationDescriptor("TranslateY", geometry, 0.225),
        AugmentationDescriptor("Rotate", geometry, 15.0),
        AugmentationDescriptor("AutoContrast", color_, 0.0),
        AugmentationDescriptor("Invert", color_, 0.0),
        AugmentationDescriptor("Equalize", color_, 0.0),
        AugmentationDescriptor("Solarize", color_, 128.0),
        AugmentationDescriptor("Posterize", color_, 4.0),
        AugmentationDescriptor("Contrast", color_, 0.45),
        AugmentationDescriptor("Color", color_, 0.45),
        AugmentationDescriptor("Brightness", color_, 0.45),
        AugmentationDescriptor("Sharpness", color_, 0.45),
        AugmentationDescriptor("Cutout", cut, 0.2),
    )


def pool_names() -> list[str]:
    return [desc.name for desc in canonical_pool()]


def transform_calls() -> int:
    """Number of transforms applied in this process."""
    return _transform_calls


def reset_transform_calls() -> None:
    global _transform_calls
    _transform_calls = 0


def apply_transform(
    desc: AugmentationDescriptor, img: Image, rng: np.random.Generator
) -> Image:
    global _transform_calls
    check_image(img)
    try:
        op = NAME_TO_OP[desc.name]
    except KeyError as e:
        raise ArgumentError(f"Unknown transform {desc.name}") from e
    _transform_calls += 1
    return op(img, desc.magnitude, rng)


def parse_order(text: str) -> CategoryOrder:
    """Parse 'Geometry>Color>Cutout' into a category order."""
    try:
        parts = tuple(Category(part.strip()) for part in text.split(">"))
    except ValueError as e:
        raise ArgumentError(f"Unknown category in order {text!r}") from e
    if len(parts) != 3 or set(parts) != set(Category):
        raise ArgumentError(
            f"Order {text!r} must name each category exactly once"
        )
    return parts  # type: ignore[return-value]


def format_order(order: CategoryOrder) -> str:
    return ">".join(category.value for category in order)


def all_orders() -> list[CategoryOrder]:
    """The six category permutations, default order first."""
    return list(itertools.permutations(DEFAULT_ORDER))  # type: ignore[arg-type]


def apply_policy(
    img: Image,
    class_id: int,
    policy: PolicyMatrix,
    order: CategoryOrder,
    rng: np.random.Generator,
) -> Image:
    """
    Apply a class's policy row to one image.

    Categories run in `order`; inside a category transforms run in pool
    order. Each transform fires independently with its row probability.
    One uniform draw is consumed per transform whether or not it fires.
    When nothing fires the input array itself is returned.
    """
    pool = canonical_pool()
    if policy.num_augs != len(pool):
        raise ArgumentError(
            f"Policy has {policy.num_augs} augmentations, pool has {len(pool)}"
        )
    if not 0 <= class_id < policy.num_classes:
        raise ArgumentError(
            f"Class {class_id} outside policy with {policy.num_classes} classes"
        )
    check_image(img)
    row = policy.probs[class_id]
    out = img
    for category in order:
        for index, desc in enumerate(pool):
            if desc.category != category:
                continue
            if rng.random() < row[index]:
                out = apply_transform(desc, out, rng)
    return out
