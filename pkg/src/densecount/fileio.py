"""On-disk formats: PGM images, raw density maps, annotation/split CSVs.

All writers are byte-deterministic: no timestamps, stable float formatting
(``repr``, shortest round-trip), '\\n' line endings.
"""

import csv
import io
import struct

import numpy as np

__all__ = [
    "FileFormatError",
    "read_pgm",
    "write_pgm",
    "read_density",
    "write_density",
    "read_annotations",
    "write_annotations",
    "read_split",
    "write_split",
    "write_heatmap",
]

DENSITY_MAGIC = b"DMAP"
DENSITY_VERSION = 1


class FileFormatError(ValueError):
    """A file does not conform to its declared format."""


# -- PGM (binary P5, 8-bit) ----------------------------------------------------


def write_pgm(path, image):
    """Write a [0,1] grayscale array as binary 8-bit PGM."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM image must be 2-D, got shape {arr.shape}")
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_pgm_tokens(fh, count):
    tokens = []
    while len(tokens) < count:
        line = fh.readline()
        if not line:
            raise FileFormatError("truncated PGM header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens


def read_pgm(path):
    """Read a binary 8-bit PGM into a float array scaled to [0,1]."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise FileFormatError(f"not a binary PGM file: magic {magic!r}")
        w, h, maxval = (int(t) for t in _read_pgm_tokens(fh, 3))
        if maxval != 255:
            raise FileFormatError(f"only 8-bit PGM supported, maxval was {maxval}")
        raw = fh.read(w * h)
    if len(raw) != w * h:
        raise FileFormatError("truncated PGM pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


# -- raw density maps ------------------------------------------------------------


def write_density(path, values):
    """Write a density map as little-endian float32 with a 16-byte header."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"density map must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", DENSITY_MAGIC, DENSITY_VERSION, h, w))
        fh.write(arr.astype("<f4").tobytes())


def read_density(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise FileFormatError("truncated density header")
        magic, version, h, w = struct.unpack("<4sIII", header)
        if magic != DENSITY_MAGIC:
            raise FileFormatError(f"bad density magic {magic!r}")
        if version != DENSITY_VERSION:
            raise FileFormatError(f"unsupported density version {version}")
        raw = fh.read(4 * h * w)
    if len(raw) != 4 * h * w:
        raise FileFormatError("truncated density data")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)


# -- annotation and split tables ---------------------------------------------------


def write_annotations(path, annotations):
    """Write ``{image_id: (N,2) points}`` as CSV with header id,row,col."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "row", "col"])
    for image_id, points in annotations.items():
        for row, col in np.asarray(points, dtype=np.float64).reshape(-1, 2):
            writer.writerow([image_id, repr(float(row)), repr(float(col))])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_annotations(path):
    """Read an annotation CSV back into ``{image_id: (N,2) array}``."""
    result = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "row", "col"]:
            raise FileFormatError(f"bad annotation header {header}")
        for rec in reader:
            if len(rec) != 3:
                raise FileFormatError(f"malformed annotation row {rec}")
            result.setdefault(rec[0], []).append((float(rec[1]), float(rec[2])))
    return {k: np.asarray(v, dtype=np.float64) for k, v in result.items()}


def write_split(path, assignment):
    """Write ``{image_id: split_name}`` as CSV with header id,split."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "split"])
    for image_id, split in assignment.items():
        writer.writerow([image_id, split])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_split(path):
    result = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "split"]:
            raise FileFormatError(f"bad split header {header}")
        for rec in reader:
            if len(rec) != 2:
                raise FileFormatError(f"malformed split row {rec}")
            result[rec[0]] = rec[1]
    return result


# -- heatmaps --------------------------------------------------------------------


def write_heatmap(path, values):
    """Write an arbitrary-range map as a PGM, recording the affine scale.

    The sidecar ``<path>.scale.txt`` holds the original min/max so the 0-255
    image can be mapped back to physical units.
    """
    arr = np.asarray(values, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    write_pgm(path, scaled)
    with open(f"{path}.scale.txt", "w") as fh:
        fh.write(f"min {lo!r}\nmax {hi!r}\n")
