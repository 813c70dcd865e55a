"""The counting network: shared convolutional trunk, multiple density heads,
one log-variance head.

The trunk is a small front-end of 3x3 conv + ReLU + 2x2 max-pool stages
followed by a dilated 3x3 back-end that grows the receptive field without
further pooling. Every head is a 1x1 convolution over the final shared
feature map: cheap to evaluate, so running all heads costs barely more than
running one. Density outputs pass through softplus (a density is
non-negative); the log-variance output is clamped to a numerically safe band.

Checkpoint format (little-endian):
    magic ``DUBN`` | u32 version=1 | architecture block | tensor block
The architecture block is field-tagged: u32 field count, then per field a
u32 tag and payload (tag 1 front channels, 2 back channels: u32 count +
u32 values; tag 3 dilation, 4 head count: u32; tag 5 init std: f64).
Tensors follow as u32 rank, u32 dims, f64 row-major data, ordered:
front (weight, bias) pairs, back pairs, head pairs 0..K-1, log-variance pair.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .fileio import FileFormatError
from .tensor import Tensor, conv2d, maxpool2

__all__ = [
    "ArchConfig",
    "ModelParams",
    "HeadOutput",
    "init_params",
    "forward_head",
    "forward_all",
    "save_checkpoint",
    "load_checkpoint",
]

KERNEL_SIZE = 3
LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

CHECKPOINT_MAGIC = b"DUBN"
CHECKPOINT_VERSION = 1


@dataclass
class ArchConfig:
    """Shape of the trunk and its prediction heads."""

    front_channels: tuple = (8, 16)
    back_channels: tuple = (16, 16)
    dilation: int = 2
    num_heads: int = 10
    init_std: float = 0.01

    def __post_init__(self):
        self.front_channels = tuple(int(c) for c in self.front_channels)
        self.back_channels = tuple(int(c) for c in self.back_channels)
        if not self.front_channels or not self.back_channels:
            raise ValueError("front_channels and back_channels must be non-empty")
        if any(c < 1 for c in self.front_channels + self.back_channels):
            raise ValueError("channel counts must be positive")
        if self.num_heads < 1:
            raise ValueError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.init_std <= 0:
            raise ValueError(f"init_std must be positive, got {self.init_std}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def downsample_factor(self):
        """Input pixels per output pixel along each axis (one pool per front stage)."""
        return 2 ** len(self.front_channels)


@dataclass
class ModelParams:
    """All trainable tensors, grouped by role."""

    front: list
    back: list
    heads: list
    log_var: tuple
    arch: ArchConfig

    def trunk_tensors(self):
        return [t for w, b in self.front + self.back for t in (w, b)]

    def head_tensors(self, head):
        w, b = self.heads[head]
        return [w, b]

    def logvar_tensors(self):
        return list(self.log_var)

    def all_tensors(self):
        out = self.trunk_tensors()
        for w, b in self.heads:
            out.extend((w, b))
        out.extend(self.log_var)
        return out


@dataclass
class HeadOutput:
    """One head's density map and the shared log-variance map, both (1,H',W')."""

    density: Tensor
    log_variance: Tensor


def _conv_pair(rng, out_c, in_c, k, std):
    weight = Tensor(rng.normal(0.0, std, size=(out_c, in_c, k, k)), requires_grad=True)
    bias = Tensor(np.zeros(out_c), requires_grad=True)
    return weight, bias


def init_params(arch, seed=0):
    """Gaussian-initialised parameters: weights N(0, init_std^2), zero biases."""
    rng = np.random.default_rng(seed)
    front, back, heads = [], [], []
    in_c = 1
    for out_c in arch.front_channels:
        front.append(_conv_pair(rng, out_c, in_c, KERNEL_SIZE, arch.init_std))
        in_c = out_c
    for out_c in arch.back_channels:
        back.append(_conv_pair(rng, out_c, in_c, KERNEL_SIZE, arch.init_std))
        in_c = out_c
    for _ in range(arch.num_heads):
        heads.append(_conv_pair(rng, 1, in_c, 1, arch.init_std))
    log_var = _conv_pair(rng, 1, in_c, 1, arch.init_std)
    return ModelParams(front=front, back=back, heads=heads, log_var=log_var, arch=arch)


def _as_input(image, arch):
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise ValueError(f"expected a single-channel image, got shape {arr.shape}")
    factor = arch.downsample_factor
    if arr.shape[1] % factor or arr.shape[2] % factor:
        raise ValueError(
            f"image dims {arr.shape[1]}x{arr.shape[2]} must be divisible by {factor}"
        )
    return Tensor(arr)


def _trunk_features(params, x):
    h = x
    for w, b in params.front:
        h = maxpool2(conv2d(h, w, bias=b).relu())
    for w, b in params.back:
        h = conv2d(h, w, bias=b, dilation=params.arch.dilation).relu()
    return h


def _density_from(features, head_pair):
    w, b = head_pair
    return conv2d(features, w, bias=b).softplus()


def _logvar_from(params, features):
    w, b = params.log_var
    return conv2d(features, w, bias=b).clamp(LOGVAR_MIN, LOGVAR_MAX)


def forward_head(params, image, head):
    """Run the trunk plus one density head (0-based index) and the shared
    log-variance head."""
    if not 0 <= head < params.arch.num_heads:
        raise ValueError(f"head index {head} out of range [0, {params.arch.num_heads})")
    features = _trunk_features(params, _as_input(image, params.arch))
    return HeadOutput(
        density=_density_from(features, params.heads[head]),
        log_variance=_logvar_from(params, features),
    )


def forward_all(params, image):
    """Run the trunk once and every head over it.

    Returns (list of density tensors, log-variance tensor); entry k is
    bitwise identical to ``forward_head(params, image, k).density``.
    """
    features = _trunk_features(params, _as_input(image, params.arch))
    densities = [_density_from(features, pair) for pair in params.heads]
    return densities, _logvar_from(params, features)


# -- checkpoints -----------------------------------------------------------------


def _write_tensor(fh, tensor):
    arr = tensor.data
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n, what):
    raw = fh.read(n)
    if len(raw) != n:
        raise FileFormatError(f"truncated checkpoint while reading {what}")
    return raw


def _read_tensor(fh):
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
    if rank > 8:
        raise FileFormatError(f"implausible tensor rank {rank}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "tensor dims"))
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    raw = _read_exact(fh, 8 * count, "tensor data")
    data = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return Tensor(data.copy(), requires_grad=True)


def save_checkpoint(params, path):
    arch = params.arch
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", 5))
        for tag, channels in ((1, arch.front_channels), (2, arch.back_channels)):
            fh.write(struct.pack(f"<II{len(channels)}I", tag, len(channels), *channels))
        fh.write(struct.pack("<II", 3, arch.dilation))
        fh.write(struct.pack("<II", 4, arch.num_heads))
        fh.write(struct.pack("<Id", 5, arch.init_std))
        for pair in params.front + params.back + params.heads + [params.log_var]:
            for tensor in pair:
                _write_tensor(fh, tensor)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FileFormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise FileFormatError(f"unsupported checkpoint version {version}")
        (n_fields,) = struct.unpack("<I", _read_exact(fh, 4, "field count"))
        fields = {}
        for _ in range(n_fields):
            (tag,) = struct.unpack("<I", _read_exact(fh, 4, "field tag"))
            if tag in (1, 2):
                (count,) = struct.unpack("<I", _read_exact(fh, 4, "channel count"))
                fields[tag] = struct.unpack(f"<{count}I", _read_exact(fh, 4 * count, "channels"))
            elif tag in (3, 4):
                (fields[tag],) = struct.unpack("<I", _read_exact(fh, 4, "field value"))
            elif tag == 5:
                (fields[tag],) = struct.unpack("<d", _read_exact(fh, 8, "field value"))
            else:
                raise FileFormatError(f"unknown architecture field tag {tag}")
        missing = {1, 2, 3, 4, 5} - set(fields)
        if missing:
            raise FileFormatError(f"checkpoint missing architecture fields {sorted(missing)}")
        arch = ArchConfig(
            front_channels=fields[1],
            back_channels=fields[2],
            dilation=fields[3],
            num_heads=fields[4],
            init_std=fields[5],
        )
        front = [(_read_tensor(fh), _read_tensor(fh)) for _ in arch.front_channels]
        back = [(_read_tensor(fh), _read_tensor(fh)) for _ in arch.back_channels]
        heads = [(_read_tensor(fh), _read_tensor(fh)) for _ in range(arch.num_heads)]
        log_var = (_read_tensor(fh), _read_tensor(fh))
        if fh.read(1):
            raise FileFormatError("trailing bytes after checkpoint payload")
    params = ModelParams(front=front, back=back, heads=heads, log_var=log_var, arch=arch)
    _check_shapes(params)
    return params


def _check_shapes(params):
    arch = params.arch
    in_c = 1
    stages = list(zip(params.front, arch.front_channels)) + list(
        zip(params.back, arch.back_channels)
    )
    for (w, b), out_c in stages:
        if w.shape != (out_c, in_c, KERNEL_SIZE, KERNEL_SIZE) or b.shape != (out_c,):
            raise FileFormatError(
                f"trunk tensor shapes {w.shape}/{b.shape} inconsistent with architecture"
            )
        in_c = out_c
    for w, b in params.heads + [params.log_var]:
        if w.shape != (1, in_c, 1, 1) or b.shape != (1,):
            raise FileFormatError(
                f"head tensor shapes {w.shape}/{b.shape} inconsistent with architecture"
            )
