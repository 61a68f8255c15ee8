# SPDX-License-Identifier: Apache-2.0
"""Frozen encoders the exporter can drive.

A backbone maps an RGB image (H x W x 3, float in [0, 1]) to a final image
embedding plus one spatial map per selected layer, laid out W x H x C, and
maps text to an embedding in the same space.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np


@dataclass(frozen=True)
class EncoderInfo:
    text_dim: int
    feature_dim: int
    channel_dims: tuple[int, ...]

    @property
    def level_count(self) -> int:
        return len(self.channel_dims)

    def to_json(self) -> dict:
        return {"d_t": self.text_dim, "d_v": self.feature_dim, "Q": self.level_count, "channel_dims": list(self.channel_dims)}


class Backbone(Protocol):
    name: str
    input_size: int
    truncation_policy: str

    def info(self) -> EncoderInfo: ...

    def encode_image(self, image: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]: ...

    def encode_text(self, text: str) -> np.ndarray: ...


_TOKEN = re.compile(r"[a-z0-9'-]+")


def _seeded(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class RandomBackbone:
    """Seeded random convolution stack and bag-of-token text encoder.

    Stands in for a pretrained model in smoke tests: fully deterministic, no
    weights to download.
    """

    def __init__(self, seed: int = 0, dim: int = 32, channel_dims: Sequence[int] = (8, 16, 16, 32),
                 input_size: int = 32, context_length: int = 77):
        if input_size % (2 ** len(channel_dims)) != 0:
            raise ValueError("input_size must be divisible by 2 per level")
        self.name = f"random-{seed}"
        self.seed = seed
        self.dim = dim
        self.channel_dims = tuple(int(c) for c in channel_dims)
        self.input_size = input_size
        self.context_length = context_length
        self.truncation_policy = f"first-{context_length}-tokens"
        rng = _seeded(seed, "vision")
        self._filters = []
        c_in = 3
        for c in self.channel_dims:
            self._filters.append(rng.standard_normal((3, 3, c_in, c)) / np.sqrt(9 * c_in))
            c_in = c
        self._head = rng.standard_normal((c_in, dim)) / np.sqrt(c_in)
        self._token_cache: dict[str, np.ndarray] = {}

    def info(self) -> EncoderInfo:
        return EncoderInfo(self.dim, self.dim, self.channel_dims)

    def encode_image(self, image: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x = np.asarray(image, dtype=np.float64)
        if x.shape != (self.input_size, self.input_size, 3):
            raise ValueError(f"expected a {self.input_size}x{self.input_size}x3 image, got {x.shape}")
        x = x - 0.5
        maps = []
        for f in self._filters:
            padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
            h, w = x.shape[:2]
            y = np.zeros((h, w, f.shape[3]))
            for dy in range(3):
                for dx in range(3):
                    y += padded[dy : dy + h, dx : dx + w, :] @ f[dy, dx]
            y = np.tanh(y)
            x = y.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
            maps.append(np.transpose(x, (1, 0, 2)))  # W x H x C
        final = x.mean(axis=(0, 1)) @ self._head
        return final, maps

    def tokens(self, text: str) -> list[str]:
        return _TOKEN.findall(text.lower())[: self.context_length]

    def _token(self, token: str) -> np.ndarray:
        v = self._token_cache.get(token)
        if v is None:
            v = _seeded(self.seed, "token:" + token).standard_normal(self.dim)
            self._token_cache[token] = v
        return v

    def encode_text(self, text: str) -> np.ndarray:
        toks = self.tokens(text)
        if not toks:
            raise ValueError("text has no tokens")
        out = np.zeros(self.dim)
        for p, t in enumerate(toks):
            out += self._token(t) / (1.0 + 0.05 * p)
        return out


class ClipBackbone:
    """Pretrained CLIP through transformers.

    Level maps are the patch tokens of the selected vision transformer blocks
    (all blocks by default), reshaped to the patch grid.
    """

    def __init__(self, model_name: str = "openai/clip-vit-base-patch16", layers: Sequence[int] | None = None,
                 device: str = "cpu"):
        import torch  # noqa: F401
        from transformers import CLIPModel, CLIPTokenizer

        self.name = model_name
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self.tokenizer = CLIPTokenizer.from_pretrained(model_name)
        self.device = device
        vc = self.model.config.vision_config
        self.input_size = int(vc.image_size)
        self.grid = self.input_size // int(vc.patch_size)
        blocks = int(vc.num_hidden_layers)
        self.layers = list(range(blocks)) if layers is None else [int(l) for l in layers]
        if any(not 0 <= l < blocks for l in self.layers):
            raise ValueError(f"layers must lie in [0, {blocks})")
        self.width = int(vc.hidden_size)
        self.embed_dim = int(self.model.config.projection_dim)
        self.context_length = int(self.model.config.text_config.max_position_embeddings)
        self.truncation_policy = f"clip-tokenizer-first-{self.context_length}-tokens"
        self.mean = np.array([0.48145466, 0.4578275, 0.40821073])
        self.std = np.array([0.26862954, 0.26130258, 0.27577711])

    def info(self) -> EncoderInfo:
        return EncoderInfo(self.embed_dim, self.embed_dim, tuple(self.width for _ in self.layers))

    def encode_image(self, image: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        torch = self._torch
        x = (np.asarray(image, dtype=np.float64) - self.mean) / self.std
        pixels = torch.tensor(np.transpose(x, (2, 0, 1))[None], dtype=torch.float32, device=self.device)
        with torch.no_grad():
            out = self.model.vision_model(pixel_values=pixels, output_hidden_states=True)
            final = self.model.visual_projection(out.pooler_output)[0].double().cpu().numpy()
            maps = []
            for l in self.layers:
                tokens = out.hidden_states[l + 1][0, 1:].double().cpu().numpy()  # drop the class token
                grid = tokens.reshape(self.grid, self.grid, -1)  # rows (H) x cols (W)
                maps.append(np.transpose(grid, (1, 0, 2)))
        return final, maps

    def encode_text(self, text: str) -> np.ndarray:
        torch = self._torch
        batch = self.tokenizer([text], padding=True, truncation=True, max_length=self.context_length,
                               return_tensors="pt").to(self.device)
        with torch.no_grad():
            return self.model.get_text_features(**batch)[0].double().cpu().numpy()


def make_backbone(spec: dict) -> Backbone:
    kind = spec.get("kind", "random")
    if kind == "random":
        return RandomBackbone(seed=int(spec.get("seed", 0)), dim=int(spec.get("dim", 32)),
                              channel_dims=tuple(spec.get("channel_dims", (8, 16, 16, 32))),
                              input_size=int(spec.get("input_size", 32)),
                              context_length=int(spec.get("context_length", 77)))
    if kind == "clip":
        return ClipBackbone(spec.get("name", "openai/clip-vit-base-patch16"), spec.get("layers"),
                            spec.get("device", "cpu"))
    raise ValueError(f"unknown backbone kind '{kind}'")
