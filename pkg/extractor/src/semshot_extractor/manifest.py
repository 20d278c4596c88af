"""Extraction manifest: what to encode, with which checkpoints, into which files.

The manifest is a JSON file:

    {
      "dataset_name": "mini-imagenet",
      "dataset_root": "path/to/images",          # <root>/<class_name>/*.png
      "split_file": "path/to/splits.json",       # {"base": [names], ...}
      "vision": {"kind": "torchscript", "path": "backbone.pt", "dim": 640,
                 "image_size": 84, "mean": [...], "std": [...]},
      "text":   {"kind": "hashing", "name": "hashing-512", "dim": 512,
                 "sources": ["name", "definition", "paraphrase"]},
      "outputs": {"cache": "cache.sfew", "embeddings": "semantics.json"}
    }

Preprocessing (image size, normalization) is recorded here rather than
hard-coded, since each published checkpoint ships its own eval transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class VisionEncoderSpec:
    kind: str
    dim: int
    path: str | None = None
    seed: int = 0
    image_size: int = 84
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TextEncoderSpec:
    kind: str
    dim: int
    name: str = ""
    path: str | None = None
    seed: int = 0
    sources: tuple[str, ...] = ("name", "definition", "paraphrase")


@dataclass(frozen=True)
class ExtractionManifest:
    dataset_name: str
    dataset_root: Path
    split_file: Path
    vision: VisionEncoderSpec
    text: TextEncoderSpec
    cache_out: Path
    embeddings_out: Path
    base_dir: Path = field(default=Path("."))

    @classmethod
    def load(cls, path: str | Path) -> "ExtractionManifest":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        base = path.parent

        def resolve(p: str) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base / p

        try:
            vision_raw = dict(payload["vision"])
            text_raw = dict(payload["text"])
            outputs = payload["outputs"]
            vision = VisionEncoderSpec(
                kind=str(vision_raw["kind"]),
                dim=int(vision_raw["dim"]),
                path=vision_raw.get("path"),
                seed=int(vision_raw.get("seed", 0)),
                image_size=int(vision_raw.get("image_size", 84)),
                mean=tuple(vision_raw["mean"]) if "mean" in vision_raw else None,
                std=tuple(vision_raw["std"]) if "std" in vision_raw else None,
            )
            text = TextEncoderSpec(
                kind=str(text_raw["kind"]),
                dim=int(text_raw["dim"]),
                name=str(text_raw.get("name", text_raw["kind"])),
                path=text_raw.get("path"),
                seed=int(text_raw.get("seed", 0)),
                sources=tuple(text_raw.get("sources",
                                           ("name", "definition", "paraphrase"))),
            )
            manifest = cls(
                dataset_name=str(payload["dataset_name"]),
                dataset_root=resolve(payload["dataset_root"]),
                split_file=resolve(payload["split_file"]),
                vision=vision,
                text=text,
                cache_out=resolve(outputs["cache"]),
                embeddings_out=resolve(outputs["embeddings"]),
                base_dir=base,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: malformed manifest: {exc}") from exc
        if manifest.vision.dim <= 0 or manifest.text.dim <= 0:
            raise ManifestError(f"{path}: encoder dims must be positive")
        return manifest


def load_splits(path: str | Path) -> dict[str, list[str]]:
    """Split definition: split name -> list of class directory names."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    splits = {str(k): [str(c) for c in v] for k, v in payload.items()}
    seen: dict[str, str] = {}
    for split, names in splits.items():
        for name in names:
            if name in seen:
                raise ManifestError(
                    f"class {name!r} listed in both {seen[name]!r} and {split!r}"
                )
            seen[name] = split
    return splits


def class_id_table(splits: dict[str, list[str]]) -> dict[str, int]:
    """Stable class ids: sorted class names, enumerated from zero."""
    names = sorted(name for names in splits.values() for name in names)
    return {name: idx for idx, name in enumerate(names)}
