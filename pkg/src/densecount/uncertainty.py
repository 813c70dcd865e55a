"""Test-time uncertainty: decomposition, count intervals, adaptive tiling.

At prediction time every head runs over the shared trunk. The per-pixel
head disagreement (population variance across heads) is the model-knowledge
term; it shrinks as training data grows. The per-pixel exponentiated
log-variance output is the observation-noise term; it is irreducible.
Summing both maps gives the variance of the predicted count under an
independent-pixel assumption.
"""

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .network import forward_all
from .recalibration import invert_quantile

__all__ = [
    "PredictiveSummary",
    "TileReport",
    "PartitionReport",
    "summarize_heads",
    "decompose",
    "count_interval",
    "adaptive_partition",
]


@dataclass
class PredictiveSummary:
    """Per-pixel maps plus aggregated count statistics for one image."""

    mean_map: np.ndarray
    epistemic_map: np.ndarray
    aleatoric_map: np.ndarray
    count_mean: float
    count_variance: float
    count_std: float


@dataclass
class TileReport:
    row: int
    col: int
    height: int
    width: int
    zoom: int
    count_mean: float
    count_std: float
    interval: tuple


@dataclass
class PartitionReport:
    tiles: list
    total_count: float
    total_std: float
    total_interval: tuple


def summarize_heads(head_densities, log_variance):
    """Decompose stacked per-head density maps (K,H,W) plus a log-variance
    map into a :class:`PredictiveSummary`.

    mean = (1/K) sum_k d_k;  disagreement = (1/K) sum_k d_k^2 - mean^2
    (clamped at zero against round-off);  noise = exp(log_variance).
    """
    stack = np.asarray(head_densities, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError(f"expected stacked maps of shape (K,H,W), got {stack.shape}")
    mean_map = stack.mean(axis=0)
    epistemic = np.maximum(np.mean(stack * stack, axis=0) - mean_map * mean_map, 0.0)
    aleatoric = np.exp(np.asarray(log_variance, dtype=np.float64))
    if aleatoric.shape != mean_map.shape:
        raise ValueError(
            f"log-variance shape {aleatoric.shape} does not match maps {mean_map.shape}"
        )
    count_variance = float(np.sum(epistemic) + np.sum(aleatoric))
    return PredictiveSummary(
        mean_map=mean_map,
        epistemic_map=epistemic,
        aleatoric_map=aleatoric,
        count_mean=float(np.sum(mean_map)),
        count_variance=count_variance,
        count_std=math.sqrt(count_variance),
    )


def decompose(params, image):
    """Run all heads over ``image`` and decompose the predictive uncertainty."""
    densities, log_variance = forward_all(params, image)
    return summarize_heads([d.data[0] for d in densities], log_variance.data[0])


def _interval(count_mean, count_std, recal, coverage):
    if not 0.0 < coverage < 1.0:
        raise ValueError(f"coverage must lie in (0, 1), got {coverage}")
    lo_q, hi_q = (1.0 - coverage) / 2.0, (1.0 + coverage) / 2.0
    if recal is None:
        gauss = NormalDist()
        z_lo, z_hi = gauss.inv_cdf(lo_q), gauss.inv_cdf(hi_q)
    else:
        z_lo, z_hi = invert_quantile(recal, lo_q), invert_quantile(recal, hi_q)
    return (count_mean + count_std * z_lo, count_mean + count_std * z_hi)


def count_interval(summary, recal=None, coverage=0.9):
    """Two-sided count interval at the given coverage level.

    With a recalibration map the residual multiples come from its fitted
    quantile inverse; without one they fall back to Gaussian quantiles.
    """
    return _interval(summary.count_mean, summary.count_std, recal, coverage)


def _block_mean(region, factor):
    if factor == 1:
        return region
    h, w = region.shape
    return region.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def _check_levels(levels):
    levels = tuple(int(f) for f in levels)
    if not levels or any(f < 1 for f in levels):
        raise ValueError(f"zoom levels must be positive integers, got {levels}")
    if any(b != 2 * a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"zoom levels must double at each step, got {levels}")
    return levels


def _partition(evaluate, shape, threshold, levels, base_size, recal, coverage):
    """Quadtree refinement over an ``evaluate(row, col, level) -> summary``
    callback. Splits a tile into quadrants only when every quadrant still
    meets the count threshold and the quadrants together carry less
    predictive variance than the parent; root tiles always stay."""
    h, w = shape
    root = base_size * levels[-1]
    if h % root or w % root:
        raise ValueError(f"image {h}x{w} is not divisible into {root}x{root} root tiles")

    def make_tile(r0, c0, level, summary):
        side = base_size * level
        return TileReport(
            row=r0,
            col=c0,
            height=side,
            width=side,
            zoom=level,
            count_mean=summary.count_mean,
            count_std=summary.count_std,
            interval=_interval(summary.count_mean, summary.count_std, recal, coverage),
        ), summary

    def refine(r0, c0, level_idx, summary):
        if level_idx == 0:
            return [make_tile(r0, c0, levels[0], summary)]
        child_level = levels[level_idx - 1]
        half = base_size * levels[level_idx] // 2
        quadrants = [(r0, c0), (r0, c0 + half), (r0 + half, c0), (r0 + half, c0 + half)]
        children = [(qr, qc, evaluate(qr, qc, child_level)) for qr, qc in quadrants]
        meets_threshold = all(s.count_mean >= threshold for _, _, s in children)
        child_variance = sum(s.count_variance for _, _, s in children)
        if meets_threshold and child_variance < summary.count_variance:
            tiles = []
            for qr, qc, s in children:
                tiles.extend(refine(qr, qc, level_idx - 1, s))
            return tiles
        return [make_tile(r0, c0, levels[level_idx], summary)]

    tiles = []
    for r0 in range(0, h, root):
        for c0 in range(0, w, root):
            tiles.extend(refine(r0, c0, len(levels) - 1, evaluate(r0, c0, levels[-1])))

    reports = [t for t, _ in tiles]
    total_count = float(sum(t.count_mean for t in reports))
    total_std = math.sqrt(float(sum(s.count_variance for _, s in tiles)))
    return PartitionReport(
        tiles=reports,
        total_count=total_count,
        total_std=total_std,
        total_interval=_interval(total_count, total_std, recal, coverage),
    )


def adaptive_partition(
    params,
    image,
    threshold=20.0,
    levels=(1, 2, 4),
    base_size=64,
    recal=None,
    coverage=0.9,
):
    """Tile a large scene adaptively and report per-tile counts.

    A tile at zoom level f covers a (base_size*f)^2 region, which is
    block-mean reduced to base_size^2 before prediction (so coarser levels
    trade resolution for context, mimicking zooming out). Refinement starts
    from the coarsest level; see :func:`_partition` for the split rule. The
    resulting tiles partition the image exactly.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    levels = _check_levels(levels)
    if base_size % params.arch.downsample_factor:
        raise ValueError(
            f"base tile size {base_size} must be divisible by the trunk's "
            f"downsample factor {params.arch.downsample_factor}"
        )

    def evaluate(r0, c0, level):
        side = base_size * level
        region = arr[r0:r0 + side, c0:c0 + side]
        return decompose(params, _block_mean(region, level))

    return _partition(evaluate, arr.shape, threshold, levels, base_size, recal, coverage)
