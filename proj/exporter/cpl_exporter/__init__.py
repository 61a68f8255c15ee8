# SPDX-License-Identifier: Apache-2.0
"""Export CLIP-style features into cpl bank files and serve text encodings."""

from .backbones import Backbone, EncoderInfo, RandomBackbone
from .export import ExportJob, ImageItem, export_features
from .formats import read_bank, read_lexicon, write_bank, write_lexicon

__all__ = [
    "Backbone",
    "EncoderInfo",
    "ExportJob",
    "ImageItem",
    "RandomBackbone",
    "export_features",
    "read_bank",
    "read_lexicon",
    "write_bank",
    "write_lexicon",
]
