"""Datasets: seeded synthetic generators, CIFAR-10 binary batches, splitting."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

CIFAR_RECORD = 1 + 3 * 32 * 32


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (N, H, W, C) or (N, D), float32
    y: np.ndarray  # (N,) int64
    n_classes: int
    tag: str = ""

    def __post_init__(self):
        if len(self.x) == 0:
            raise DataFormatError("dataset is empty")
        if len(self.x) != len(self.y):
            raise DataFormatError(f"{len(self.x)} samples but {len(self.y)} labels")
        if self.y.min() < 0 or self.y.max() >= self.n_classes:
            raise DataFormatError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.x.shape[1:]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.x.shape).encode())
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(self.y.astype("<i8").tobytes())
        return h.hexdigest()

    def subset(self, idx, tag: str | None = None) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.n_classes, self.tag if tag is None else tag)


def gen_synthetic(
    classes: int,
    n: int,
    shape: Sequence[int] = (8, 8, 3),
    noise: float = 0.1,
    seed: int = 0,
    kind: str = "level",
) -> Dataset:
    """Seeded class templates plus Gaussian noise, clipped to [0, 1].

    ``kind="level"``: a per-class level for each channel plus a weaker random
    spatial pattern, so classes stay separable after global pooling.
    ``kind="texture"``: zero-mean oriented sinusoids on distinct integer wave
    vectors; pooled linear features carry no class signal, so accuracy
    depends on the nonlinear local filters an architecture has.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if n % classes:
        raise ValueError(f"n={n} is not divisible by {classes} classes")
    rng = np.random.default_rng(seed)
    shape = tuple(shape)
    templates = _templates(rng, classes, shape, kind)
    y = rng.permutation(np.repeat(np.arange(classes), n // classes))
    x = templates[y] + noise * rng.standard_normal((n, *shape))
    x = np.clip(x, 0.0, 1.0).astype(np.float32)
    return Dataset(x, y.astype(np.int64), classes, "synthetic")


def class_templates(classes: int, shape: Sequence[int], seed: int, kind: str = "level") -> np.ndarray:
    """The noise-free templates :func:`gen_synthetic` draws for ``seed``."""
    return _templates(np.random.default_rng(seed), classes, tuple(shape), kind)


def _templates(rng: np.random.Generator, classes: int, shape: tuple[int, ...], kind: str = "level") -> np.ndarray:
    if kind == "texture":
        return _texture_templates(rng, classes, shape)
    if kind != "level":
        raise ValueError(f"unknown template kind {kind!r}")
    level = rng.uniform(0.2, 0.8, (classes,) + (1,) * (len(shape) - 1) + shape[-1:])
    pattern = rng.uniform(-1.0, 1.0, (classes, *shape))
    return np.clip(level + 0.2 * pattern, 0.0, 1.0)


def _texture_templates(rng: np.random.Generator, classes: int, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) != 3:
        raise ValueError("texture templates need an (H, W, C) shape")
    h, w, c = shape
    # wave vectors in whole cycles per image, so every template averages to 0.5
    waves = [(u, v) for u in range(0, 3) for v in range(-2, 3) if (u, v) > (0, 0)]
    if classes > len(waves):
        raise ValueError(f"texture templates support at most {len(waves)} classes")
    picks = rng.choice(len(waves), classes, replace=False)
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    out = np.empty((classes, h, w, c))
    for i, k in enumerate(picks):
        u, v = waves[k]
        phase = rng.uniform(0, 2 * np.pi, c)
        out[i] = 0.5 + 0.3 * np.sin(2 * np.pi * (u * yy + v * xx)[..., None] + phase)
    return out


def load_cifar10_binary(paths: str | os.PathLike | Sequence[str | os.PathLike]) -> Dataset:
    """Read CIFAR-10 binary batches: ``[label][1024 R][1024 G][1024 B]`` per record.

    Pixels come back as NHWC float32 scaled by 1/255, channels in RGB order.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    xs, ys = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD:
            raise DataFormatError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
        rec = raw.reshape(-1, CIFAR_RECORD)
        labels = rec[:, 0]
        if labels.max() > 9:
            raise DataFormatError(f"{path}: label {labels.max()} out of range 0..9")
        pix = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        xs.append(pix.astype(np.float32) / np.float32(255.0))
        ys.append(labels.astype(np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys), 10, "cifar10")


def split(ds: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffled split into (train, validation)."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    n_train = int(round(len(ds) * ratio))
    if n_train == 0 or n_train == len(ds):
        raise ValueError(f"ratio {ratio} leaves one side of a {len(ds)}-sample split empty")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(np.sort(perm[:n_train]), "train"), ds.subset(np.sort(perm[n_train:]), "val")


def iter_batches(
    ds: Dataset, batch_size: int, rng: np.random.Generator | None = None, start: int = 0, n_batches: int | None = None
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Mini-batches in shuffled order (``rng``) or fixed order starting at batch ``start``."""
    n = len(ds)
    order = rng.permutation(n) if rng is not None else None
    total = -(-n // batch_size)
    count = total if n_batches is None else min(n_batches, total)
    for i in range(count):
        b = (start + i) % total
        sl = slice(b * batch_size, min((b + 1) * batch_size, n))
        if order is None:
            yield ds.x[sl], ds.y[sl]
        else:
            idx = order[sl]
            yield ds.x[idx], ds.y[idx]
