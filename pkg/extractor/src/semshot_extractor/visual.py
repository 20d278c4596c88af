"""Run a vision encoder over a class-per-directory image tree."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from semshot.feature_store import FeatureCacheHeader, FeatureRecord, write_cache

from .encoders import make_vision_encoder
from .manifest import ExtractionManifest, ManifestError, class_id_table, load_splits

log = logging.getLogger(__name__)

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
_BATCH = 64


def _list_images(class_dir: Path) -> list[Path]:
    return sorted(
        p for p in class_dir.iterdir()
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
    )


def _load_image(path: Path, manifest: ExtractionManifest) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB").resize(
            (manifest.vision.image_size, manifest.vision.image_size),
            Image.BILINEAR,
        )
        array = np.asarray(img, dtype=np.float32) / 255.0
    array = array.transpose(2, 0, 1)  # HWC -> CHW
    if manifest.vision.mean is not None and manifest.vision.std is not None:
        mean = np.asarray(manifest.vision.mean, dtype=np.float32).reshape(3, 1, 1)
        std = np.asarray(manifest.vision.std, dtype=np.float32).reshape(3, 1, 1)
        array = (array - mean) / std
    return array


def extract_visual(manifest: ExtractionManifest) -> tuple[int, int]:
    """Encode every image and write the feature cache.

    Record order is fully determined by the file listing: class directories
    in sorted-name order, files sorted within each class. Unreadable images
    are logged and skipped; the skip count is returned so callers can signal
    a partial extraction.

    Returns (records_written, skipped).
    """
    splits = load_splits(manifest.split_file)
    ids = class_id_table(splits)
    encoder = make_vision_encoder(manifest.vision)

    records: list[FeatureRecord] = []
    skipped = 0
    for class_name in sorted(ids):
        class_dir = manifest.dataset_root / class_name
        if not class_dir.is_dir():
            raise ManifestError(f"class directory missing: {class_dir}")
        arrays: list[np.ndarray] = []
        for path in _list_images(class_dir):
            try:
                arrays.append(_load_image(path, manifest))
            except (OSError, ValueError) as exc:
                skipped += 1
                log.warning("skipping unreadable image %s: %s", path, exc)
        for start in range(0, len(arrays), _BATCH):
            batch = np.stack(arrays[start : start + _BATCH])
            features = encoder.encode(batch)
            if features.shape[1] != manifest.vision.dim:
                raise ManifestError(
                    f"vision encoder emits {features.shape[1]}-d vectors, "
                    f"manifest declares {manifest.vision.dim}"
                )
            for vec in features:
                records.append(FeatureRecord(ids[class_name], vec))

    header = FeatureCacheHeader(
        visual_dim=manifest.vision.dim,
        record_count=len(records),
        dataset_name=manifest.dataset_name,
        split_table={
            split: tuple(ids[name] for name in sorted(names))
            for split, names in splits.items()
        },
    )
    manifest.cache_out.parent.mkdir(parents=True, exist_ok=True)
    write_cache(header, records, manifest.cache_out)
    log.info(
        "wrote %d records (%d skipped) to %s", len(records), skipped, manifest.cache_out
    )
    return len(records), skipped
