"""Post-hoc recalibration of count intervals.

Predicted count distributions are rarely calibrated out of the box: a
nominal 90% interval may cover the truth far more or less than 90% of the
time. The fix fitted here is a monotone remapping of standardized residuals
z = (true - predicted) / predicted_std to empirical quantiles, learned on
held-out data: compute each validation image's z, pair it with the fraction
of residuals at or below it, and fit a non-decreasing step curve by
least squares (pool-adjacent-violators). Inverting that curve turns a
requested quantile into the residual multiple to use in an interval.
"""

import csv
import io
import warnings
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .fileio import FileFormatError

__all__ = [
    "SIGMA_FLOOR",
    "RecalibrationMap",
    "standardized_residuals",
    "empirical_cdf",
    "fit_isotonic",
    "invert_quantile",
    "fit_recalibration",
    "save_recalibration",
    "load_recalibration",
    "write_calibration_svg",
]

SIGMA_FLOOR = 1e-6


@dataclass
class RecalibrationMap:
    """Monotone map from standardized residual to quantile.

    ``knots`` is a list of (z, fitted quantile) pairs with strictly
    increasing z and non-decreasing quantiles. Between knots the map is
    linear; beyond them it is clamped.
    """

    knots: list

    def __post_init__(self):
        zs = [z for z, _ in self.knots]
        qs = [q for _, q in self.knots]
        if any(a >= b for a, b in zip(zs, zs[1:])):
            raise ValueError("knot z values must be strictly increasing")
        if any(a > b for a, b in zip(qs, qs[1:])):
            raise ValueError("fitted quantiles must be non-decreasing")
        self._z = np.asarray(zs, dtype=np.float64)
        self._q = np.asarray(qs, dtype=np.float64)

    def evaluate(self, z):
        """Quantile assigned to residual ``z`` (piecewise linear, clamped)."""
        return float(np.interp(z, self._z, self._q))


def standardized_residuals(records):
    """z_n = (C_n - predicted_n) / std_n for (true, predicted, std) triples.

    Stds below ``SIGMA_FLOOR`` are floored (with a warning); negative stds
    are rejected.
    """
    arr = np.asarray(list(records), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no residual records given")
    arr = arr.reshape(-1, 3)
    std = arr[:, 2]
    if np.any(std < 0):
        raise ValueError("predicted stds must be non-negative")
    if np.any(std < SIGMA_FLOOR):
        warnings.warn(
            f"flooring {int(np.sum(std < SIGMA_FLOOR))} predicted stds at {SIGMA_FLOOR}",
            stacklevel=2,
        )
        std = np.maximum(std, SIGMA_FLOOR)
    return (arr[:, 0] - arr[:, 1]) / std


def empirical_cdf(z_values):
    """Sorted (z, fraction of residuals <= z) pairs; ties share a value."""
    z = np.asarray(z_values, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empirical_cdf needs at least one residual")
    z = np.sort(z)
    p = np.searchsorted(z, z, side="right") / z.size
    return list(zip(z.tolist(), p.tolist()))


def _pava(targets, weights):
    """Weighted least-squares fit constrained to be non-decreasing."""
    means, wsum, counts = [], [], []
    for y, w in zip(targets, weights):
        means.append(y)
        wsum.append(w)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), wsum.pop(), counts.pop()
            m1, w1, c1 = means.pop(), wsum.pop(), counts.pop()
            means.append((m1 * w1 + m2 * w2) / (w1 + w2))
            wsum.append(w1 + w2)
            counts.append(c1 + c2)
    out = []
    for m, c in zip(means, counts):
        out.extend([m] * c)
    return out


def fit_isotonic(pairs):
    """Fit a :class:`RecalibrationMap` to (z, target) pairs sorted by z.

    Pairs sharing a z are averaged (with weight equal to their multiplicity)
    before the monotone fit, so the resulting knots have distinct z.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("fit_isotonic needs at least one pair")
    zs = [z for z, _ in pairs]
    if any(a > b for a, b in zip(zs, zs[1:])):
        raise ValueError("pairs must be sorted by z")
    grouped_z, grouped_t, grouped_w = [], [], []
    for z, target in pairs:
        if grouped_z and z == grouped_z[-1]:
            grouped_w[-1] += 1.0
            grouped_t[-1] += (target - grouped_t[-1]) / grouped_w[-1]
        else:
            grouped_z.append(z)
            grouped_t.append(float(target))
            grouped_w.append(1.0)
    fitted = _pava(grouped_t, grouped_w)
    return RecalibrationMap(knots=list(zip(grouped_z, fitted)))


def invert_quantile(recal_map, p):
    """The residual z at which the fitted map reaches quantile ``p``.

    Linear interpolation between bracketing knots; requests beyond the
    fitted range clamp to the extreme knot.
    """
    zs, qs = recal_map._z, recal_map._q
    if len(zs) < 2:
        raise ValueError("inversion needs at least two knots")
    if p <= qs[0]:
        return float(zs[0])
    if p > qs[-1]:
        return float(zs[-1])
    i = int(np.searchsorted(qs, p, side="left"))
    if qs[i] == p:
        return float(zs[i])
    z0, z1, q0, q1 = zs[i - 1], zs[i], qs[i - 1], qs[i]
    return float(z0 + (p - q0) * (z1 - z0) / (q1 - q0))


def fit_recalibration(records):
    """Full pipeline: residuals, empirical quantile targets, monotone fit."""
    return fit_isotonic(empirical_cdf(standardized_residuals(records)))


def save_recalibration(recal_map, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["z", "quantile"])
    for z, q in recal_map.knots:
        writer.writerow([repr(float(z)), repr(float(q))])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def load_recalibration(path):
    knots = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["z", "quantile"]:
            raise FileFormatError(f"bad recalibration header {header}")
        for rec in reader:
            if len(rec) != 2:
                raise FileFormatError(f"malformed recalibration row {rec}")
            knots.append((float(rec[0]), float(rec[1])))
    try:
        return RecalibrationMap(knots=knots)
    except ValueError as exc:
        raise FileFormatError(f"invalid recalibration map: {exc}") from exc


def write_calibration_svg(recal_map, path, size=360, margin=45):
    """Expected-vs-observed quantile curve as a small standalone SVG."""
    plot = size - 2 * margin
    gauss = NormalDist()

    def sx(p):
        return margin + p * plot

    def sy(p):
        return size - margin - p * plot

    curve = " ".join(
        f"{sx(gauss.cdf(z)):.2f},{sy(q):.2f}" for z, q in recal_map.knots
    )
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(1):.2f}" y2="{sy(0):.2f}" '
        'stroke="black" stroke-width="1"/>',
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(0):.2f}" y2="{sy(1):.2f}" '
        'stroke="black" stroke-width="1"/>',
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(1):.2f}" y2="{sy(1):.2f}" '
        'stroke="#999999" stroke-width="1" stroke-dasharray="4 3"/>',
        f'<polyline points="{curve}" fill="none" stroke="#1f6fb2" stroke-width="2"/>',
        f'<text x="{size / 2:.0f}" y="{size - 10}" font-size="12" text-anchor="middle" '
        'font-family="sans-serif">expected quantile</text>',
        f'<text x="14" y="{size / 2:.0f}" font-size="12" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 14 {size / 2:.0f})">'
        "observed quantile</text>",
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
