from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def write_image_tree(
    root: Path, class_names: list[str], images_per_class: int = 2, size: int = 8,
    seed: int = 0,
) -> None:
    rng = np.random.default_rng(seed)
    for name in class_names:
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(images_per_class):
            pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            Image.fromarray(pixels, "RGB").save(class_dir / f"img_{i:03d}.png")


def write_manifest(
    path: Path,
    *,
    dataset_root: Path,
    split_file: Path,
    vision: dict,
    text: dict,
    cache_out: Path,
    embeddings_out: Path,
    dataset_name: str = "unit-test",
) -> Path:
    payload = {
        "dataset_name": dataset_name,
        "dataset_root": str(dataset_root),
        "split_file": str(split_file),
        "vision": vision,
        "text": text,
        "outputs": {"cache": str(cache_out), "embeddings": str(embeddings_out)},
    }
    path.write_text(json.dumps(payload, indent=2))
    return path


@pytest.fixture
def tiny_dataset(tmp_path):
    """Three-class dataset with a base/novel split and a manifest skeleton."""
    root = tmp_path / "images"
    names = ["finch", "heron", "wren"]
    write_image_tree(root, names, images_per_class=3, size=8)
    split_file = tmp_path / "splits.json"
    split_file.write_text(json.dumps({"base": ["finch", "heron"], "novel": ["wren"]}))
    return tmp_path, root, split_file, names
