"""
Frozen feature extractors for the linear head.

RawPixels flattens the image scaled to [0, 1]. HOG follows the Dalal-Triggs
layout: unsigned gradient orientations over 0-180 degrees, magnitude-weighted
histograms per cell, overlapping blocks of cells L2-normalised with an
epsilon guard so flat regions stay at zero.
"""

import numpy as np
import numpy.typing as npt

from polysearch.augment import Image, check_image
from polysearch.errors import ArgumentError
from polysearch.model import FeatureExtractor, FeatureKind

type FeatureVector = npt.NDArray[np.float64]

LUMA = np.array([0.299, 0.587, 0.114])


def _gradients(gray: npt.NDArray[np.float64]) -> tuple[
    npt.NDArray[np.float64], npt.NDArray[np.float64]
]:
    grad_x = np.zeros_like(gray)
    grad_y = np.zeros_like(gray)
    grad_x[:, 1:-1] = gray[:, 2:] - gray[:, :-2]
    grad_y[1:-1, :] = gray[2:, :] - gray[:-2, :]
    return grad_x, grad_y


def _cell_histograms(
    gray: npt.NDArray[np.float64], fe: FeatureExtractor
) -> npt.NDArray[np.float64]:
    cell, bins = fe.cell_size, fe.orientation_bins
    cells_y, cells_x = gray.shape[0] // cell, gray.shape[1] // cell
    grad_x, grad_y = _gradients(gray)
    magnitude = np.hypot(grad_x, grad_y)[: cells_y * cell, : cells_x * cell]
    angle = np.rad2deg(np.arctan2(grad_y, grad_x)) % 180.0
    angle = angle[: cells_y * cell, : cells_x * cell]
    bin_index = np.minimum((angle / (180.0 / bins)).astype(np.int64), bins - 1)

    rows = np.arange(cells_y * cell) // cell
    cols = np.arange(cells_x * cell) // cell
    cell_index = rows[:, None] * cells_x + cols[None, :]
    flat = (cell_index * bins + bin_index).ravel()
    hist = np.bincount(
        flat, weights=magnitude.ravel(), minlength=cells_y * cells_x * bins
    )
    return hist.reshape(cells_y, cells_x, bins)


def hog(img: Image, fe: FeatureExtractor) -> FeatureVector:
    height, width = img.shape[:2]
    if fe.output_dim(height, width) == 0:
        raise ArgumentError(
            f"Image {height}x{width} is too small for "
            f"{fe.block_size}x{fe.block_size} blocks of {fe.cell_size}px cells"
        )
    gray = img.astype(np.float64) @ LUMA / 255.0
    hist = _cell_histograms(gray, fe)
    size = fe.block_size
    blocks_y = hist.shape[0] - size + 1
    blocks_x = hist.shape[1] - size + 1
    blocks = np.empty((blocks_y, blocks_x, size * size * fe.orientation_bins))
    for y in range(blocks_y):
        for x in range(blocks_x):
            block = hist[y : y + size, x : x + size].ravel()
            blocks[y, x] = block / np.sqrt(np.sum(block**2) + fe.epsilon**2)
    return blocks.ravel()


def extract_features(img: Image, fe: FeatureExtractor) -> FeatureVector:
    """Feature vector of one image; length is fe.output_dim(height, width)."""
    check_image(img)
    if fe.kind == FeatureKind.RAW_PIXELS:
        return img.reshape(-1).astype(np.float64) / 255.0
    return hog(img, fe)


def extract_batch(
    images: npt.NDArray[np.uint8], fe: FeatureExtractor
) -> npt.NDArray[np.float64]:
    """Stack the features of an (N, H, W, 3) image array into (N, D)."""
    if images.ndim != 4:
        raise ArgumentError(f"Expected (N, H, W, 3) images, got {images.shape}")
    if fe.kind == FeatureKind.RAW_PIXELS:
        return images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    dim = fe.output_dim(images.shape[1], images.shape[2])
    out = np.empty((images.shape[0], dim))
    for index, img in enumerate(images):
        out[index] = hog(img, fe)
    return out
