"""Desk-scale training harness: SGD with momentum, cosine schedule,
crop/flip augmentation, CIFAR-style binary or synthetic datasets.

Single worker, fully deterministic for a fixed seed: one RNG drives
init-independent data order and augmentation draws in a fixed sequence.
"""

import csv
import os
from dataclasses import dataclass
from math import ceil, cos, pi

import numpy as np

from . import ops
from .backbone import save_checkpoint
from .errors import ConfigurationError
from .layers import BatchNorm2d


@dataclass
class TrainConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    crop_pad: int = 0
    hflip: bool = False
    mean: tuple = (0.0, 0.0, 0.0)
    std: tuple = (1.0, 1.0, 1.0)
    bn_weight_decay: bool = True

    def validate(self):
        if self.epochs < 0:
            raise ConfigurationError("train.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("train.batch_size must be >= 1")
        if self.base_lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigurationError(
                "train.base_lr must be positive; momentum and weight_decay "
                "non-negative")
        if self.crop_pad < 0:
            raise ConfigurationError("train.crop_pad must be >= 0")
        if any(s <= 0 for s in self.std):
            raise ConfigurationError("train.std entries must be positive")


@dataclass
class Dataset:
    images: np.ndarray          # (N, 3, H, W) float32
    labels: np.ndarray          # (N,) int64

    def __len__(self):
        return self.images.shape[0]


def cosine_lr(step, total_steps, base_lr):
    if total_steps <= 0:
        raise ConfigurationError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigurationError(
            f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 + cos(pi * step / total_steps)) / 2.0


class SgdMomentum:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v.

    Weight decay is skipped for params whose ``decay`` flag is cleared.
    """

    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        for p, v in zip(self.params, self.velocity):
            g = p.grad
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v


def synthetic_dataset(classes=4, train_samples=256, val_samples=64,
                      image_hw=32, noise=0.25, seed=0):
    """Gaussian class templates plus per-sample noise: linearly separable
    at small noise.  Balanced labels; fully determined by the seed."""
    if classes < 2 or train_samples < 1 or val_samples < 1:
        raise ConfigurationError(
            "synthetic dataset needs >= 2 classes and >= 1 sample per split")
    rng = np.random.default_rng(seed)
    templates = rng.standard_normal(
        (classes, 3, image_hw, image_hw)).astype(np.float32)

    def draw(n):
        labels = (np.arange(n) % classes).astype(np.int64)
        rng.shuffle(labels)
        imgs = templates[labels] + noise * rng.standard_normal(
            (n, 3, image_hw, image_hw)).astype(np.float32)
        return Dataset(imgs.astype(np.float32), labels)

    return draw(train_samples), draw(val_samples)


def load_cifar_binary(path):
    """Read records of 1 label byte + 3072 pixel bytes (3x32x32,
    channel-major), scaling pixels to [0, 1]."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % 3073:
        raise ConfigurationError(
            f"{path}: size {raw.size} is not a whole number of "
            f"3073-byte records")
    raw = raw.reshape(-1, 3073)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images, labels)


def normalize(images, mean, std):
    mean = np.asarray(mean, dtype=images.dtype).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=images.dtype).reshape(1, -1, 1, 1)
    return (images - mean) / std


def augment(rng, images, crop_pad=0, hflip=False):
    """Random shift within +/-crop_pad (zero padding) and horizontal flip.

    Label-preserving by construction; pixel values are only moved, never
    rescaled."""
    n, _, h, w = images.shape
    out = images
    if crop_pad > 0:
        padded = np.pad(out, ((0, 0), (0, 0), (crop_pad, crop_pad),
                              (crop_pad, crop_pad)))
        ys = rng.integers(0, 2 * crop_pad + 1, n)
        xs = rng.integers(0, 2 * crop_pad + 1, n)
        out = np.empty_like(images)
        for i in range(n):
            out[i] = padded[i, :, ys[i]:ys[i] + h, xs[i]:xs[i] + w]
    if hflip:
        flip = rng.random(n) < 0.5
        out = out.copy() if out is images else out
        out[flip] = out[flip, :, :, ::-1]
    return out


def evaluate(model, dataset, batch_size=64, mean=(0, 0, 0), std=(1, 1, 1)):
    """Top-1 accuracy in eval mode.  Ties break to the lowest class id."""
    if len(dataset) == 0:
        raise ConfigurationError("evaluation dataset is empty")
    correct = 0
    for i in range(0, len(dataset), batch_size):
        imgs = normalize(dataset.images[i:i + batch_size], mean, std)
        logits = model.forward(imgs, train=False)
        correct += int((logits.argmax(axis=1)
                        == dataset.labels[i:i + batch_size]).sum())
    return correct / len(dataset)


def write_metrics_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_top1", "lr"])
        for row in history:
            writer.writerow([row[0], f"{row[1]:.10g}", f"{row[2]:.10g}",
                             f"{row[3]:.10g}"])


def train_loop(model, train_set, val_set, cfg, out_dir=None):
    """Run the recipe; returns history rows (epoch, train_loss, val_top1,
    lr).  With an output directory, writes a checkpoint per epoch (and the
    initial one for epochs=0) plus metrics.csv."""
    cfg.validate()
    if len(train_set) == 0:
        raise ConfigurationError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    if not cfg.bn_weight_decay:
        for _, child in model.named_children():
            if isinstance(child, BatchNorm2d):
                child.scale.decay = False
                child.shift.decay = False
    params = [p for _, p in model.named_params()]
    opt = SgdMomentum(params, cfg.momentum, cfg.weight_decay)

    n = len(train_set)
    steps_per_epoch = max(1, ceil(n / cfg.batch_size))
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    history = []
    step = 0

    def ckpt(tag):
        if out_dir is not None:
            save_checkpoint(model, os.path.join(out_dir, f"checkpoint_ep{tag:03d}.ckpt"))

    if cfg.epochs == 0:
        ckpt(0)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        losses = []
        lr = cfg.base_lr
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            imgs = augment(rng, train_set.images[idx], cfg.crop_pad,
                           cfg.hflip)
            imgs = normalize(imgs, cfg.mean, cfg.std)
            labels = train_set.labels[idx]
            model.zero_grad()
            logits = model.forward(imgs, train=True)
            loss, grad = ops.softmax_cross_entropy(logits, labels)
            model.backward(grad)
            lr = cosine_lr(step, total_steps, cfg.base_lr)
            opt.step(lr)
            step += 1
            losses.append(float(loss))
        val_top1 = evaluate(model, val_set, cfg.batch_size, cfg.mean, cfg.std)
        history.append((epoch, float(np.mean(losses)), val_top1, lr))
        ckpt(epoch)
    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), history)
    return history
