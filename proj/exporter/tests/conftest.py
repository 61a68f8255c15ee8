# SPDX-License-Identifier: Apache-2.0
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from cpl_exporter import ExportJob, ImageItem, RandomBackbone  # noqa: E402


def smoke_images(seed=0, per_class=2, classes=2, size=40):
    rng = np.random.default_rng(seed)
    items = []
    for c in range(classes):
        for i in range(per_class):
            split = "train" if i % 2 == 0 else "test"
            items.append(ImageItem(f"img-{c}-{i}", c, split, pixels=rng.uniform(size=(size, size + 8, 3))))
    return items


@pytest.fixture
def backbone():
    return RandomBackbone(seed=3)


@pytest.fixture
def smoke_job(tmp_path):
    return ExportJob(
        dataset_name="smoke",
        class_names=["cat", "dog"],
        images=smoke_images(),
        out_dir=tmp_path / "out",
        shots_per_class=1,
        lexicon_words=[("red", "color"), ("wooden", "material"), ("tiny", "size"), ("round", "shape")],
    )
