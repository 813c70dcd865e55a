"""Losses and the single-image training loop.

Each step draws one prediction head uniformly at random, runs the trunk plus
that head, and updates the trunk, the drawn head and (when the loss uses it)
the log-variance head. Over many steps every head sees a different random
subsample of the data, which is what makes the heads disagree on inputs the
data does not pin down.

Loss variants:
  * ``base``            plain MSE, single head
  * ``aleatoric_only``  per-pixel noise-weighted loss, single head
  * ``epistemic_only``  fixed-noise Gaussian likelihood, all heads
  * ``combined``        per-pixel noise-weighted loss, all heads
"""

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .density import downsample_blocksum, render_density
from .network import forward_head, init_params
from .optim import Adam, zero_grads
from .tensor import Tensor

__all__ = [
    "VARIANTS",
    "TrainConfig",
    "LossRecord",
    "loss_mse",
    "loss_homoscedastic",
    "loss_heteroscedastic",
    "build_targets",
    "train",
    "write_loss_log",
]

VARIANTS = ("base", "aleatoric_only", "epistemic_only", "combined")


@dataclass
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 1e-3
    seed: int = 0
    variant: str = "combined"
    fixed_sigma2: float = 1.0
    # Classic bootstrap: train each head on its own with-replacement resample
    # of the data instead of drawing one head per image. K times the work per
    # epoch; useful only for ensemble-diversity experiments.
    bootstrap_resample: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.fixed_sigma2 <= 0:
            raise ValueError(f"fixed_sigma2 must be positive, got {self.fixed_sigma2}")


@dataclass
class LossRecord:
    epoch: int
    mean_loss: float
    head_counts: list


def _target_tensor(target, pred):
    arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape != pred.shape:
        raise ValueError(f"target shape {arr.shape} does not match prediction {pred.shape}")
    return Tensor(arr)


def loss_mse(pred_density, target):
    """Mean squared residual over output pixels."""
    r = _target_tensor(target, pred_density) - pred_density
    return (r * r).mean()


def loss_homoscedastic(pred_density, target, sigma2):
    """Gaussian negative log-likelihood with one fixed noise variance.

    (1/D) * sum_i (y_i - yhat_i)^2 / (2 sigma^2) + log(sigma^2) / 2
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    r = _target_tensor(target, pred_density) - pred_density
    return (r * r).mean() * (0.5 / sigma2) + 0.5 * math.log(sigma2)


def loss_heteroscedastic(pred, target):
    """Noise-weighted loss with a per-pixel predicted log variance s.

    (1/D) * sum_i [ exp(-s_i) * (y_i - yhat_i)^2 / 2 + s_i / 2 ]

    Pixels the model flags as noisy (large s) contribute attenuated
    residuals but pay the log-variance penalty.
    """
    if pred.log_variance.shape != pred.density.shape:
        raise ValueError(
            f"log-variance shape {pred.log_variance.shape} does not match "
            f"density {pred.density.shape}"
        )
    s = pred.log_variance
    r = _target_tensor(target, pred.density) - pred.density
    return ((r * r) * (-s).exp() * 0.5 + s * 0.5).mean()


def build_targets(annotated_images, arch, kernel_config=None):
    """Render ground-truth density at image resolution, then sum-pool it to
    the trunk's output resolution. Returns (pixels, target) pairs."""
    pairs = []
    for img in annotated_images:
        dense = render_density(img.pixels.shape, img.points, kernel_config)
        pairs.append((img.pixels, downsample_blocksum(dense, arch.downsample_factor)))
    return pairs


def _step(params, opt, image, target, head, cfg):
    trainable = params.trunk_tensors() + params.head_tensors(head)
    if cfg.variant in ("aleatoric_only", "combined"):
        trainable += params.logvar_tensors()
    zero_grads(params.all_tensors())
    out = forward_head(params, image, head)
    if cfg.variant in ("aleatoric_only", "combined"):
        loss = loss_heteroscedastic(out, target)
    elif cfg.variant == "epistemic_only":
        loss = loss_homoscedastic(out.density, target, cfg.fixed_sigma2)
    else:
        loss = loss_mse(out.density, target)
    loss.backward()
    opt.step(trainable)
    return loss.item()


def train(dataset, arch, cfg):
    """Train on (image, target) pairs; targets must already be at the trunk's
    output resolution (see :func:`build_targets`).

    The single-head variants (``base``, ``aleatoric_only``) force the head
    count to one. Returns the trained parameters and one loss record per
    epoch. Deterministic given ``cfg.seed``.
    """
    data = [
        (img.pixels if hasattr(img, "pixels") else np.asarray(img, dtype=np.float64), target)
        for img, target in dataset
    ]
    if not data:
        raise ValueError("training dataset is empty")
    if cfg.variant in ("base", "aleatoric_only") and arch.num_heads != 1:
        arch = replace(arch, num_heads=1)
    factor = arch.downsample_factor
    for pixels, target in data:
        expected = (pixels.shape[0] // factor, pixels.shape[1] // factor)
        if np.asarray(target).shape != expected:
            raise ValueError(
                f"target shape {np.asarray(target).shape} is not the trunk output "
                f"resolution {expected}"
            )

    init_seed, loop_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init_params(arch, seed=init_seed)
    rng = np.random.default_rng(loop_seed)
    opt = Adam(cfg.learning_rate)
    n = len(data)
    num_heads = arch.num_heads

    resamples = None
    if cfg.bootstrap_resample:
        resamples = [rng.integers(0, n, size=n) for _ in range(num_heads)]

    records = []
    for epoch in range(cfg.epochs):
        head_counts = np.zeros(num_heads, dtype=np.int64)
        total = 0.0
        steps = 0
        if resamples is None:
            for idx in rng.permutation(n):
                head = int(rng.integers(num_heads))
                head_counts[head] += 1
                image, target = data[idx]
                total += _step(params, opt, image, target, head, cfg)
                steps += 1
        else:
            for head in range(num_heads):
                for idx in rng.permutation(resamples[head]):
                    head_counts[head] += 1
                    image, target = data[idx]
                    total += _step(params, opt, image, target, head, cfg)
                    steps += 1
        records.append(LossRecord(epoch=epoch, mean_loss=total / steps, head_counts=head_counts.tolist()))
    return params, records


def write_loss_log(records, path):
    """CSV log: epoch, mean loss, per-head draw counts."""
    num_heads = len(records[0].head_counts) if records else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss"] + [f"head_{k}" for k in range(num_heads)])
    for rec in records:
        writer.writerow([rec.epoch, repr(rec.mean_loss)] + [str(c) for c in rec.head_counts])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
