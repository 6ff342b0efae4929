"""Dataset ingestion and generation.

Produces flat grayscale vectors in [0, 1] with binary labels from three
sources: the MNIST IDX files restricted to digits 0/1, a synthetic polyp
generator (bright feathered ellipse on a textured background), and a
manifest of image patches in the CVC-ClinicDB style.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataFormatError
from .matio import load_matrix, save_matrix

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass
class Dataset:
    images: np.ndarray  # (n, d), float64 in [0, 1]
    labels: np.ndarray  # (n,), int64 in {0, 1}
    split: str = "train"
    provenance: str = ""

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2:
            raise ConfigError(f"images must be (n, d), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ConfigError("images and labels disagree on sample count")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ConfigError("pixel values must lie in [0, 1]")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ConfigError("labels must be binary")

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_be_u32(fh, path) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise DataFormatError(f"{path}: truncated header")
    return struct.unpack(">I", raw)[0]


def load_mnist_idx(
    images_path: str | Path,
    labels_path: str | Path,
    keep_digits: tuple[int, ...] = (0, 1),
    max_n: int | None = None,
    split: str = "train",
) -> Dataset:
    """Load MNIST-format IDX files, keeping only the requested digits.

    Pixels are scaled by 1/255 and flattened to 784-vectors. The digit in
    ``keep_digits[0]`` maps to label 0 and ``keep_digits[1]`` to label 1.
    """
    if len(keep_digits) != 2:
        raise ConfigError("keep_digits must name exactly two digits")
    with open(images_path, "rb") as fh:
        magic = _read_be_u32(fh, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad image magic {magic}, expected {IDX_IMAGE_MAGIC}"
            )
        count = _read_be_u32(fh, images_path)
        rows = _read_be_u32(fh, images_path)
        cols = _read_be_u32(fh, images_path)
        payload = fh.read()
        if len(payload) != count * rows * cols:
            raise DataFormatError(
                f"{images_path}: payload is {len(payload)} bytes, "
                f"expected {count * rows * cols}"
            )
        images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    with open(labels_path, "rb") as fh:
        magic = _read_be_u32(fh, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad label magic {magic}, expected {IDX_LABEL_MAGIC}"
            )
        count_l = _read_be_u32(fh, labels_path)
        raw = fh.read()
        if len(raw) != count_l:
            raise DataFormatError(f"{labels_path}: payload is {len(raw)} bytes, expected {count_l}")
        digits = np.frombuffer(raw, dtype=np.uint8)
    if count != count_l:
        raise DataFormatError(
            f"image file has {count} items but label file has {count_l}"
        )
    mask = np.isin(digits, keep_digits)
    images = images[mask]
    digits = digits[mask]
    labels = (digits == keep_digits[1]).astype(np.int64)
    if max_n is not None:
        images = images[:max_n]
        labels = labels[:max_n]
    return Dataset(
        images=images.astype(np.float64) / 255.0,
        labels=labels,
        split=split,
        provenance=f"mnist-idx:{Path(images_path).name}",
    )


def _value_noise(rng: np.random.Generator, grid: int, size: int) -> np.ndarray:
    """Bilinear upsampling of a coarse uniform grid; one octave of texture."""
    coarse = rng.random((grid, grid))
    pos = np.linspace(0.0, grid - 1.0, size)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, grid - 1)
    frac = pos - i0
    rows = coarse[i0][:, i0] * np.outer(1 - frac, 1 - frac)
    rows += coarse[i0][:, i1] * np.outer(1 - frac, frac)
    rows += coarse[i1][:, i0] * np.outer(frac, 1 - frac)
    rows += coarse[i1][:, i1] * np.outer(frac, frac)
    return rows


def generate_synthetic_polyps(n: int, image_size: int = 32, seed: int = 0) -> Dataset:
    """Balanced synthetic polyp images: textured background, optional blob.

    Positives carry one bright, edge-feathered ellipse with random center
    (central 60% of the frame), axes 15-35% of the width and an intensity
    boost of 0.25-0.45 over the background. Everything gets Gaussian pixel
    noise (sigma 0.03) and is clamped to [0, 1]. Labels alternate so any
    prefix is near-balanced; positives count is ceil(n/2).
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    s = image_size
    images = np.empty((n, s * s))
    labels = np.empty(n, dtype=np.int64)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    for i in range(n):
        label = 1 - (i % 2)
        texture = (2.0 / 3.0) * _value_noise(rng, 4, s) + (1.0 / 3.0) * _value_noise(rng, 8, s)
        img = 0.30 + 0.40 * texture
        if label == 1:
            cx = rng.uniform(0.2, 0.8) * s
            cy = rng.uniform(0.2, 0.8) * s
            ax = rng.uniform(0.15, 0.35) * s
            ay = rng.uniform(0.15, 0.35) * s
            theta = rng.uniform(0.0, math.pi)
            boost = rng.uniform(0.25, 0.45)
            dx = xx - cx
            dy = yy - cy
            u = dx * math.cos(theta) + dy * math.sin(theta)
            v = -dx * math.sin(theta) + dy * math.cos(theta)
            r = np.sqrt((u / ax) ** 2 + (v / ay) ** 2)
            w = np.clip((1.0 - r) / 0.3, 0.0, 1.0)
            w = w * w * (3.0 - 2.0 * w)  # smoothstep feathering
            img = img + boost * w
        img = img + rng.normal(0.0, 0.03, size=(s, s))
        images[i] = np.clip(img, 0.0, 1.0).ravel()
        labels[i] = label
    return Dataset(
        images=images,
        labels=labels,
        split="train",
        provenance=f"synthetic-polyps:seed={seed},size={image_size}",
    )


def load_image_patches(
    directory: str | Path, manifest: str | Path, patch_size: int = 32
) -> Dataset:
    """Load (file, label) pairs from a CSV manifest of image patches.

    Images are luma-converted, center-cropped to a square and resampled to
    ``patch_size`` with area (box) resampling, then scaled to [0, 1].
    """
    directory = Path(directory)
    rows: list[tuple[str, int]] = []
    try:
        with open(manifest, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].strip().lower() == "path":
                    continue
                if len(rec) < 2:
                    raise DataFormatError(f"{manifest}: malformed row {rec!r}")
                rows.append((rec[0].strip(), int(rec[1])))
    except FileNotFoundError:
        raise DataFormatError(f"manifest not found: {manifest}")
    if not rows:
        raise DataFormatError(f"{manifest}: no entries")
    images = np.empty((len(rows), patch_size * patch_size))
    labels = np.empty(len(rows), dtype=np.int64)
    for i, (rel, label) in enumerate(rows):
        path = directory / rel
        try:
            with Image.open(path) as im:
                gray = im.convert("L")
                side = min(gray.size)
                left = (gray.width - side) // 2
                top = (gray.height - side) // 2
                gray = gray.crop((left, top, left + side, top + side))
                gray = gray.resize((patch_size, patch_size), Image.Resampling.BOX)
                arr = np.asarray(gray, dtype=np.float64) / 255.0
        except FileNotFoundError:
            raise DataFormatError(f"manifest entry not readable: {path}")
        images[i] = arr.ravel()
        labels[i] = label
    return Dataset(
        images=images,
        labels=labels,
        split="train",
        provenance=f"patches:{Path(manifest).name}",
    )


def split_train_test(
    dataset: Dataset, n_train: int, n_test: int, seed: int
) -> tuple[Dataset, Dataset]:
    """Disjoint, label-stratified, seed-deterministic train/test split."""
    if n_train < 1 or n_test < 1:
        raise ConfigError(f"split sizes must be >= 1, got {n_train}/{n_test}")
    n = len(dataset)
    if n_train + n_test > n:
        raise ConfigError(f"requested {n_train}+{n_test} samples but only {n} available")
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(dataset.labels == 1)
    neg = np.flatnonzero(dataset.labels == 0)
    rng.shuffle(pos)
    rng.shuffle(neg)

    def allocate(size: int, frac: float, pos_avail: int, neg_avail: int) -> tuple[int, int]:
        k_pos = int(round(size * frac))
        k_pos = min(max(k_pos, size - neg_avail), pos_avail)
        k_neg = size - k_pos
        if k_pos < 0 or k_neg < 0 or k_neg > neg_avail:
            raise ConfigError("class counts cannot satisfy the stratified split")
        return k_pos, k_neg

    tr_pos, tr_neg = allocate(n_train, len(pos) / n, len(pos), len(neg))
    # pin the test fraction to the realized train fraction so the splits
    # stay balanced against each other within 1/n_test
    te_pos, te_neg = allocate(n_test, tr_pos / n_train, len(pos) - tr_pos, len(neg) - tr_neg)
    train_idx = np.concatenate([pos[:tr_pos], neg[:tr_neg]])
    test_idx = np.concatenate([pos[tr_pos : tr_pos + te_pos], neg[tr_neg : tr_neg + te_neg]])
    rng.shuffle(train_idx)
    rng.shuffle(test_idx)
    make = lambda idx, tag: Dataset(
        images=dataset.images[idx],
        labels=dataset.labels[idx],
        split=tag,
        provenance=dataset.provenance,
    )
    return make(train_idx, "train"), make(test_idx, "test")


def save_dataset(prefix: str | Path, dataset: Dataset) -> None:
    """Cache a dataset as two matrix containers plus a JSON sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(f"{prefix}.images.bin", dataset.images)
    save_matrix(f"{prefix}.labels.bin", dataset.labels.astype(np.float64).reshape(-1, 1))
    meta = {"split": dataset.split, "provenance": dataset.provenance}
    Path(f"{prefix}.meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_dataset(prefix: str | Path) -> Dataset:
    images = load_matrix(f"{prefix}.images.bin")
    labels = load_matrix(f"{prefix}.labels.bin").ravel().astype(np.int64)
    meta = json.loads(Path(f"{prefix}.meta.json").read_text())
    return Dataset(images=images, labels=labels, split=meta["split"], provenance=meta["provenance"])
