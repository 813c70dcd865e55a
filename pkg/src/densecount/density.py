"""Ground-truth density maps from dot annotations.

Each annotated point is rendered as a Gaussian kernel whose spread adapts to
local geometry: the standard deviation is ``beta`` times the mean distance to
the point's nearest neighbours, floored at ``sigma_floor``. Kernels are
truncated to the image, then renormalized so every point contributes exactly
unit mass; the map therefore integrates to the annotation count.
"""

import math
from dataclasses import dataclass

import numpy as np

from .validation import as_points, check_points_in_bounds

__all__ = [
    "KernelConfig",
    "DotAnnotatedImage",
    "knn_mean_distance",
    "render_density",
    "downsample_blocksum",
]

# Kernel support is cut at this many standard deviations. The discarded
# tail mass (< 1e-4) is folded back by renormalization.
TRUNCATION_RADIUS = 4.0


@dataclass
class KernelConfig:
    """Geometry-adaptive kernel parameters.

    ``sigma_default`` is the spread used when an image has too few points
    for a neighbour estimate (a single annotation).
    """

    beta: float = 0.3
    neighbors: int = 3
    sigma_floor: float = 1.0
    sigma_default: float = 4.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.neighbors < 1:
            raise ValueError(f"neighbors must be >= 1, got {self.neighbors}")
        if self.sigma_floor <= 0:
            raise ValueError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.sigma_default <= 0:
            raise ValueError(f"sigma_default must be positive, got {self.sigma_default}")


@dataclass
class DotAnnotatedImage:
    """A grayscale scene plus the (row, col) coordinates of its objects."""

    pixels: np.ndarray
    points: np.ndarray
    id: str = ""

    @property
    def count(self):
        return len(self.points)


def knn_mean_distance(points, k, lone_point_distance):
    """Mean Euclidean distance from each point to its k nearest other points.

    Points with fewer than k neighbours average over the neighbours that
    exist; a lone point gets ``lone_point_distance``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pts = as_points(points)
    n = len(pts)
    if n == 0:
        return np.zeros(0)
    if n == 1:
        return np.full(1, float(lone_point_distance))
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    dist.sort(axis=1)
    take = min(k, n - 1)
    return dist[:, :take].mean(axis=1)


def render_density(image_shape, points, config=None):
    """Render annotations into a density map that sums to the point count."""
    config = config if config is not None else KernelConfig()
    h, w = image_shape
    pts = as_points(points)
    check_points_in_bounds(pts, (h, w))
    out = np.zeros((h, w))
    if len(pts) == 0:
        return out
    mean_dist = knn_mean_distance(pts, config.neighbors, config.sigma_default / config.beta)
    sigmas = np.maximum(config.beta * mean_dist, config.sigma_floor)
    for (r, c), sigma in zip(pts, sigmas):
        radius = TRUNCATION_RADIUS * sigma
        r0, r1 = max(0, math.floor(r - radius)), min(h, math.floor(r + radius) + 1)
        c0, c1 = max(0, math.floor(c - radius)), min(w, math.floor(c + radius) + 1)
        rows = np.arange(r0, r1, dtype=np.float64) - r
        cols = np.arange(c0, c1, dtype=np.float64) - c
        kernel = np.exp(-(rows[:, None] ** 2 + cols[None, :] ** 2) / (2.0 * sigma * sigma))
        out[r0:r1, c0:c1] += kernel / kernel.sum()
    return out


def downsample_blocksum(values, factor):
    """Sum-pool by an integer factor; the total mass is preserved."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"density map must be 2-D, got shape {arr.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    h, w = arr.shape
    if h % factor or w % factor:
        raise ValueError(f"shape {h}x{w} is not divisible by factor {factor}")
    return arr.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
