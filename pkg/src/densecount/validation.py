"""Input validation helpers shared by the library, estimators and CLI."""

import numpy as np

__all__ = ["as_image", "as_points", "check_points_in_bounds", "check_same_length"]


def as_image(pixels):
    """Coerce to a 2-D float64 array of finite values."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite pixels")
    return arr


def as_points(points):
    """Coerce to an (N, 2) float64 array of (row, col) coordinates."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected points of shape (N, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain non-finite coordinates")
    return arr


def check_points_in_bounds(points, shape):
    h, w = shape
    if len(points) and (
        np.any(points[:, 0] < 0)
        or np.any(points[:, 0] >= h)
        or np.any(points[:, 1] < 0)
        or np.any(points[:, 1] >= w)
    ):
        raise ValueError(f"points fall outside the {h}x{w} image bounds")


def check_same_length(a, b, what="inputs"):
    if len(a) != len(b):
        raise ValueError(f"{what} have mismatched lengths {len(a)} and {len(b)}")
    if len(a) == 0:
        raise ValueError(f"{what} are empty")
