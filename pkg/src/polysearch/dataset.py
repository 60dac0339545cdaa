import gzip
import struct
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np
import numpy.typing as npt
from loguru import logger
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from polysearch.errors import ArgumentError, FormatError
from polysearch.model import SplitTag

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledImageDataset:
    """
    Images as an (N, H, W, 3) uint8 array with integer labels.

    `tags` holds the split of every sample once stratified_split has run.
    `access_counts` records how often each split was materialised.
    """

    images: npt.NDArray[np.uint8]
    labels: npt.NDArray[np.int64]
    class_names: tuple[str, ...]
    tags: npt.NDArray[np.str_] | None = None
    access_counts: Counter[SplitTag] = field(default_factory=Counter)

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise ArgumentError(
                f"Expected (N, H, W, 3) images, got {self.images.shape}"
            )
        if self.images.dtype != np.uint8:
            raise ArgumentError(f"Expected uint8 images, got {self.images.dtype}")
        if len(self.labels) != len(self.images):
            raise ArgumentError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ArgumentError(
                f"Labels must lie in [0, {self.num_classes}), "
                f"got [{self.labels.min()}, {self.labels.max()}]"
            )
        if self.tags is not None and len(self.tags) != len(self.labels):
            raise ArgumentError(
                f"{len(self.tags)} split tags for {len(self.labels)} samples"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def class_counts(self) -> npt.NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, tag: SplitTag) -> "LabeledImageDataset":
        """The samples of one split, in dataset order."""
        if self.tags is None:
            raise ArgumentError("Dataset has not been split")
        self.access_counts[tag] += 1
        mask = self.tags == tag.value
        return LabeledImageDataset(
            images=self.images[mask],
            labels=self.labels[mask],
            class_names=self.class_names,
        )


def _decode(path: Path, side: int | None) -> npt.NDArray[np.uint8]:
    with PILImage.open(path) as pil:
        rgb = pil.convert("RGB")
        if side is not None and rgb.size != (side, side):
            rgb = rgb.resize((side, side), PILImage.Resampling.NEAREST)
        return np.asarray(rgb, dtype=np.uint8).copy()


def load_class_folders(root: Path, side: int = 64) -> LabeledImageDataset:
    """
    Load root/<class_name>/*.png|jpg into a dataset.

    Class indices follow sorted directory names; files load in sorted order.
    Grayscale and palette images are promoted to RGB; everything is resized
    to side x side with nearest-neighbour sampling. Files that fail to decode
    are skipped with a warning.
    """
    if not root.is_dir():
        raise ArgumentError(f"{root} is not a directory")
    class_dirs = sorted(path for path in root.iterdir() if path.is_dir())
    if len(class_dirs) < 2:
        raise ArgumentError(f"{root} needs at least two class directories")

    images: list[npt.NDArray[np.uint8]] = []
    labels: list[int] = []
    skipped = 0
    for index, class_dir in enumerate(class_dirs):
        files = sorted(
            path
            for path in class_dir.iterdir()
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
        )
        loaded = 0
        for path in files:
            try:
                images.append(_decode(path, side))
            except (UnidentifiedImageError, OSError) as e:
                logger.warning(f"Skipping undecodable file {path}: {e}")
                skipped += 1
                continue
            labels.append(index)
            loaded += 1
        if loaded == 0:
            raise ArgumentError(f"Class directory {class_dir} has no readable images")

    logger.info(
        f"Loaded {len(labels)} images in {len(class_dirs)} classes from {root}"
        f" ({skipped} skipped)"
    )
    return LabeledImageDataset(
        images=np.stack(images),
        labels=np.array(labels, dtype=np.int64),
        class_names=tuple(path.name for path in class_dirs),
    )


def export_class_folders(dataset: LabeledImageDataset, root: Path) -> Path:
    """Write every sample as root/<class_name>/<index>.png."""
    for name in dataset.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    for index, (img, label) in enumerate(zip(dataset.images, dataset.labels)):
        path = root / dataset.class_names[label] / f"{index:06d}.png"
        PILImage.fromarray(img).save(path)
    logger.info(f"{len(dataset)} images written to {root}")
    return root


def _open(path: Path) -> BinaryIO:
    if path.suffix == ".gz":
        return gzip.open(path, "rb")  # type: ignore[return-value]
    return path.open("rb")


def _read_header(
    handle: BinaryIO, path: Path, magic: int, dims: int
) -> tuple[int, ...]:
    size = 4 * (dims + 1)
    header = handle.read(size)
    if len(header) < size:
        raise FormatError(f"Truncated IDX header in {path}", len(header))
    found, *shape = struct.unpack(f">{dims + 1}I", header)
    if found != magic:
        raise FormatError(
            f"Bad IDX magic 0x{found:08X} in {path}, expected 0x{magic:08X}", 0
        )
    return tuple(shape)


def load_idx(
    images_path: Path, labels_path: Path, side: int | None = None
) -> LabeledImageDataset:
    """
    Load a big-endian IDX image/label pair (optionally gzip-compressed).

    Grayscale pixels are replicated into three channels; labels are kept
    verbatim and class names are their decimal strings.

    Raises:
        FormatError: the pair is malformed or holds no images.
    """
    with _open(images_path) as handle:
        count, rows, cols = _read_header(handle, images_path, IDX_IMAGES_MAGIC, 3)
        if count == 0:
            raise FormatError(f"{images_path} holds no images", 4)
        expected = count * rows * cols
        payload = handle.read(expected)
    if len(payload) < expected:
        raise FormatError(
            f"Truncated image payload in {images_path}: "
            f"{len(payload)} of {expected} bytes",
            16 + len(payload),
        )
    with _open(labels_path) as handle:
        (label_count,) = _read_header(handle, labels_path, IDX_LABELS_MAGIC, 1)
        label_bytes = handle.read(label_count)
    if len(label_bytes) < label_count:
        raise FormatError(
            f"Truncated label payload in {labels_path}: "
            f"{len(label_bytes)} of {label_count} bytes",
            8 + len(label_bytes),
        )
    if label_count != count:
        raise FormatError(
            f"{count} images but {label_count} labels", 4
        )

    gray = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    images = np.repeat(gray[..., None], 3, axis=3)
    if side is not None and (rows, cols) != (side, side):
        images = np.stack(
            [
                np.asarray(
                    PILImage.fromarray(img).resize(
                        (side, side), PILImage.Resampling.NEAREST
                    )
                )
                for img in images
            ]
        )
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1
    logger.info(f"Loaded {count} IDX images of {rows}x{cols} from {images_path}")
    return LabeledImageDataset(
        images=np.ascontiguousarray(images),
        labels=labels,
        class_names=tuple(str(index) for index in range(num_classes)),
    )


def _largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    quotas = [total * fraction for fraction in fractions]
    counts = [int(quota) for quota in quotas]
    remainders = sorted(
        range(len(quotas)),
        key=lambda index: (-(quotas[index] - counts[index]), index),
    )
    for index in remainders[: total - sum(counts)]:
        counts[index] += 1
    # Every split keeps at least one sample, borrowed from the largest.
    for index, count in enumerate(counts):
        if count == 0:
            largest = max(range(len(counts)), key=lambda i: (counts[i], -i))
            counts[largest] -= 1
            counts[index] = 1
    return counts


def stratified_split(
    dataset: LabeledImageDataset,
    fractions: tuple[float, float, float] = (0.80, 0.09, 0.11),
    seed: int = 0,
) -> LabeledImageDataset:
    """
    Tag every sample train/val/test, class by class.

    Each class is shuffled with the seed and cut by largest-remainder
    rounding of its quotas, so every split holds every class.
    """
    if len(fractions) != 3 or any(fraction <= 0 for fraction in fractions):
        raise ArgumentError(f"Split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ArgumentError(f"Split fractions must sum to 1, got {sum(fractions)}")
    counts = dataset.class_counts()
    for index, count in enumerate(counts):
        if count < 3:
            raise ArgumentError(
                f"Class {dataset.class_names[index]} has {count} samples; "
                "a split needs at least 3"
            )

    rng = np.random.default_rng(seed)
    splits = (SplitTag.TRAIN.value, SplitTag.VAL.value, SplitTag.TEST.value)
    tags = np.empty(len(dataset), dtype="<U5")
    for label in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(dataset.labels == label))
        start = 0
        for tag, size in zip(splits, _largest_remainder(len(members), fractions)):
            tags[members[start : start + size]] = tag
            start += size
    logger.debug(
        "Split sizes: "
        + ", ".join(f"{tag}={int(np.sum(tags == tag))}" for tag in splits)
    )
    return LabeledImageDataset(
        images=dataset.images,
        labels=dataset.labels,
        class_names=dataset.class_names,
        tags=tags,
    )
