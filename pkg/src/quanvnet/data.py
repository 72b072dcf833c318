"""Dataset ingestion: grayscale decoding, 28x28 resize, manifests.

A dataset is described by an explicit CSV manifest (``path,label,split``)
rather than directory conventions, so the exact image list is auditable.
Labels are ``normal``, ``covid19``, ``pneumonia``; splits are ``train``
and ``test``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import cache
from .errors import IngestError, ManifestError

LABELS = ("normal", "covid19", "pneumonia")
SPLITS = ("train", "test")

# Class vocabulary per dataset id; order fixes the integer label encoding.
DATASET_CLASSES = {
    "D1": ("normal", "covid19"),
    "D2": ("covid19", "pneumonia"),
    "D3": ("normal", "covid19", "pneumonia"),
}

# Positive class that reproduces the published binary tables.
DEFAULT_POSITIVE = {"D1": "covid19", "D2": "pneumonia"}

INPUT_SIZE = 28


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    split: str


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an image file to a uint8 grayscale grid (0-255).

    RGB inputs are collapsed to a single channel by luma.
    """
    path = os.fspath(path)
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            return np.asarray(gray, dtype=np.uint8)
    except FileNotFoundError:
        raise IngestError(f"image file not found: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise IngestError(f"cannot decode image {path}: {exc}") from None


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize to (height, width), sampling at pixel centers.

    Source coordinates are half-pixel aligned, so a same-size resize is the
    identity and a constant image stays constant.
    """
    src = np.asarray(img, dtype=np.float64)
    sh, sw = src.shape
    if sh < 1 or sw < 1:
        raise IngestError("cannot resize an empty image")
    out = np.empty((height, width), dtype=np.float64)

    def _axis_coords(n_dst, n_src):
        coords = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        lo = np.clip(np.floor(coords).astype(int), 0, n_src - 1)
        hi = np.clip(lo + 1, 0, n_src - 1)
        frac = np.clip(coords - lo, 0.0, 1.0)
        return lo, hi, frac

    r_lo, r_hi, r_f = _axis_coords(height, sh)
    c_lo, c_hi, c_f = _axis_coords(width, sw)
    top = src[r_lo][:, c_lo] * (1 - c_f) + src[r_lo][:, c_hi] * c_f
    bot = src[r_hi][:, c_lo] * (1 - c_f) + src[r_hi][:, c_hi] * c_f
    out[:] = top * (1 - r_f)[:, None] + bot * r_f[:, None]
    return out


def normalize(img: np.ndarray, divisor: float = 255.0) -> np.ndarray:
    """Scale pixel values by 1/divisor and clamp into [0, 1]."""
    if divisor <= 0:
        raise ManifestError(f"divisor must be positive, got {divisor}")
    return np.clip(np.asarray(img, dtype=np.float64) / divisor, 0.0, 1.0)


def load_model_input(path: str | os.PathLike, divisor: float = 255.0) -> np.ndarray:
    """Full ingestion path: decode, resize to 28x28, normalize to [0, 1]."""
    return normalize(resize_bilinear(load_image(path), INPUT_SIZE, INPUT_SIZE), divisor)


def parse_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """Read a ``path,label,split`` CSV manifest, validating every row."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["path", "label", "split"]:
            raise ManifestError(
                f"manifest {path} must have header 'path,label,split', got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            entry = ManifestEntry(row["path"].strip(), row["label"].strip(), row["split"].strip())
            if entry.label not in LABELS:
                raise ManifestError(f"{path}:{lineno}: unknown label {entry.label!r}")
            if entry.split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {entry.split!r}")
            if not entry.path:
                raise ManifestError(f"{path}:{lineno}: empty image path")
            entries.append(entry)
    return entries


def assemble_dataset(
    entries: list[ManifestEntry], dataset_id: str
) -> tuple[list[ManifestEntry], list[ManifestEntry], dict]:
    """Split manifest entries into train/test and audit per-class counts.

    Enforces the dataset's class vocabulary and rejects duplicate paths.
    Returns (train, test, counts) with counts keyed by split then label.
    """
    if dataset_id not in DATASET_CLASSES:
        raise ManifestError(f"unknown dataset id {dataset_id!r}")
    classes = DATASET_CLASSES[dataset_id]
    seen: set[str] = set()
    train, test = [], []
    counts = {split: {c: 0 for c in classes} for split in SPLITS}
    for e in entries:
        if e.label not in classes:
            raise ManifestError(
                f"label {e.label!r} not allowed in dataset {dataset_id} (classes: {classes})")
        if e.path in seen:
            raise ManifestError(f"duplicate path in manifest: {e.path}")
        seen.add(e.path)
        (train if e.split == "train" else test).append(e)
        counts[e.split][e.label] += 1
    return train, test, counts


def count_audit(dataset_id: str, counts: dict) -> dict:
    """Count summary keyed by (dataset, split, label), JSON-friendly."""
    return {
        "dataset": dataset_id,
        "counts": counts,
        "total": sum(sum(by_label.values()) for by_label in counts.values()),
    }


def cache_roundtrip(
    records: list[cache.CacheRecord],
    path: str | os.PathLike,
    config_digest: bytes = b"\x00" * 32,
    shape: tuple[int, int, int] = (14, 14, 4),
) -> list[cache.CacheRecord]:
    """Write records to a cache file and read them back (bit-exact)."""
    cache.write_cache(path, records, config_digest, shape)
    read_back, _ = cache.read_cache(path)
    return read_back
