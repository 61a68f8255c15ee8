# SPDX-License-Identifier: Apache-2.0
"""Batch export of image and concept features into cpl bank files."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backbones import Backbone
from .formats import CATEGORIES, DimMismatch, Manifest, Record, write_bank, write_lexicon

CONCEPT_PROMPT = "The photo is {}"


@dataclass
class ImageItem:
    record_id: str
    class_id: int
    split: str  # "train" or "test"
    path: Optional[str] = None
    pixels: Optional[np.ndarray] = None  # H x W x 3 in [0, 1], used when path is None


@dataclass
class ExportJob:
    dataset_name: str
    class_names: list[str]
    images: list[ImageItem]
    out_dir: Path
    shots_per_class: int = 16
    seed: int = 0
    lexicon_words: Sequence[tuple[str, str]] = field(default_factory=list)
    # train images get a seeded random-resized crop; test images a center crop
    crop_scale: tuple[float, float] = (0.5, 1.0)


def load_pixels(item: ImageItem) -> np.ndarray:
    if item.pixels is not None:
        x = np.asarray(item.pixels, dtype=np.float64)
    else:
        from PIL import Image

        with Image.open(item.path) as im:
            x = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"image '{item.record_id}' is not H x W x 3")
    return x


def _resize(x: np.ndarray, size: int) -> np.ndarray:
    h, w = x.shape[:2]
    # bilinear sampling at pixel centers
    ys = np.clip((np.arange(size) + 0.5) * h / size - 0.5, 0, h - 1)
    xs = np.clip((np.arange(size) + 0.5) * w / size - 0.5, 0, w - 1)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = (ys - y0)[:, None, None], (xs - x0)[None, :, None]
    top = x[y0][:, x0] * (1 - fx) + x[y0][:, x1] * fx
    bottom = x[y1][:, x0] * (1 - fx) + x[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def preprocess(x: np.ndarray, size: int, train: bool, rng: np.random.Generator, scale=(0.5, 1.0)) -> np.ndarray:
    h, w = x.shape[:2]
    if train:
        area = rng.uniform(*scale) * h * w
        side = int(round(np.sqrt(area)))
        ch, cw = min(h, max(1, side)), min(w, max(1, side))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
    else:
        ch = cw = min(h, w)
        top, left = (h - ch) // 2, (w - cw) // 2
    return _resize(x[top : top + ch, left : left + cw], size)


def unit_f32(v: np.ndarray, who: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"{who} encodes to a zero or non-finite vector")
    return (v / n).astype(np.float32)


def pool(maps: list[np.ndarray]) -> list[np.ndarray]:
    """Global average pooling of each W x H x C map."""
    return [np.asarray(m, dtype=np.float64).mean(axis=(0, 1)).astype(np.float32) for m in maps]


def _image_rng(seed: int, record_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{record_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def export_features(job: ExportJob, backbone: Backbone) -> dict[str, Path]:
    """Encodes every image (and the lexicon, when given) and writes the files.

    Returns the paths written: "bank", "manifest" and possibly "lexicon".
    """
    info = backbone.info()
    if info.text_dim != info.feature_dim:
        raise DimMismatch("image and text embeddings must share a dimension")
    if len(set(job.class_names)) != len(job.class_names) or len(job.class_names) < 2:
        raise ValueError("need at least two distinct class names")

    records = []
    for item in job.images:
        x = preprocess(load_pixels(item), backbone.input_size, item.split == "train",
                       _image_rng(job.seed, item.record_id), job.crop_scale)
        final, maps = backbone.encode_image(x)
        if np.shape(final) != (info.feature_dim,):
            raise DimMismatch(f"'{item.record_id}': final feature has shape {np.shape(final)}")
        if len(maps) != info.level_count:
            raise DimMismatch(f"'{item.record_id}': {len(maps)} level maps, expected {info.level_count}")
        for q, (m, c) in enumerate(zip(maps, info.channel_dims)):
            if np.ndim(m) != 3 or np.shape(m)[2] != c:
                raise DimMismatch(f"'{item.record_id}': level {q} has shape {np.shape(m)}, expected W x H x {c}")
        records.append(Record(item.record_id, item.class_id, item.split, unit_f32(final, item.record_id), pool(maps)))

    out = Path(job.out_dir)
    manifest = Manifest(
        dataset_name=job.dataset_name,
        class_names=list(job.class_names),
        shots_per_class=job.shots_per_class,
        feature_dim=info.feature_dim,
        text_dim=info.text_dim,
        channel_dims=list(info.channel_dims),
        truncation_policy=backbone.truncation_policy,
    )

    written: dict[str, Path] = {}
    rows = None
    if job.lexicon_words:
        words = [(w, c) for w, c in job.lexicon_words]
        for w, c in words:
            if c not in CATEGORIES:
                raise ValueError(f"word '{w}' has unknown category '{c}'")
        rows = np.stack([unit_f32(backbone.encode_text(CONCEPT_PROMPT.format(w)), w) for w, _ in words])
        manifest.lexicon = f"{job.dataset_name}.lexicon"

    # everything is encoded and checked before the first file is written
    bank_path = out / f"{job.dataset_name}.bank"
    written["manifest"] = write_bank(records, manifest, bank_path)
    written["bank"] = bank_path
    if rows is not None:
        written["lexicon"] = out / manifest.lexicon
        write_lexicon(words, rows, written["lexicon"])
    return written
