"""Binary cache of per-image embedding vectors, plus per-class center targets.

File layout (all integers little-endian):

    bytes 0..3    magic ``b"SFEW"``
    bytes 4..7    format version, u32 (currently 1)
    bytes 8..11   length of the JSON header block, u32
    ...           JSON header: ``{visual_dim, record_count, dtype_tag,
                  dataset_name, split_table}``
    records       ``record_count`` entries of (class_id u32, vector
                  ``visual_dim`` x f32)

Caches are immutable after load; the arrays handed out are read-only so a
single cache can back many concurrent evaluation workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    ClusterError,
    DataError,
    DimensionError,
    EmptyClassError,
    FormatError,
)

MAGIC = b"SFEW"
FORMAT_VERSION = 1
DTYPE_TAG = "f32"
CACHE_SUFFIX = ".sfew"

_KMEANS_MAX_ITER = 100
_KMEANS_TOL = 1e-6


class FeatureRecord(NamedTuple):
    class_id: int
    vector: np.ndarray


@dataclass(frozen=True)
class FeatureCacheHeader:
    visual_dim: int
    record_count: int
    dataset_name: str
    split_table: Mapping[str, tuple[int, ...]]
    dtype_tag: str = DTYPE_TAG
    version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "split_table",
            {str(k): tuple(int(c) for c in v) for k, v in self.split_table.items()},
        )
        self.validate()

    def validate(self) -> None:
        if self.version != FORMAT_VERSION:
            raise FormatError(f"unsupported cache version {self.version}")
        if self.dtype_tag != DTYPE_TAG:
            raise FormatError(f"unsupported dtype tag {self.dtype_tag!r}")
        if self.visual_dim <= 0:
            raise FormatError(f"visual_dim must be positive, got {self.visual_dim}")
        if self.record_count < 0:
            raise FormatError("record_count must be non-negative")
        seen: dict[int, str] = {}
        for split, class_ids in self.split_table.items():
            for cid in class_ids:
                if cid in seen:
                    raise FormatError(
                        f"class {cid} appears in splits {seen[cid]!r} and {split!r}; "
                        "split class sets must be disjoint"
                    )
                seen[cid] = split

    def to_json_bytes(self) -> bytes:
        payload = {
            "visual_dim": self.visual_dim,
            "record_count": self.record_count,
            "dtype_tag": self.dtype_tag,
            "dataset_name": self.dataset_name,
            "split_table": {k: list(v) for k, v in self.split_table.items()},
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json_bytes(cls, version: int, blob: bytes) -> "FeatureCacheHeader":
        try:
            payload = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed cache header: {exc}") from exc
        try:
            return cls(
                visual_dim=int(payload["visual_dim"]),
                record_count=int(payload["record_count"]),
                dataset_name=str(payload["dataset_name"]),
                split_table={k: tuple(v) for k, v in payload["split_table"].items()},
                dtype_tag=str(payload["dtype_tag"]),
                version=version,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"incomplete cache header: {exc}") from exc


@dataclass(frozen=True, eq=False)
class FeatureCache:
    """All records of one cache file, held as read-only arrays.

    ``class_ids`` and ``vectors`` are aligned row-for-row and preserve the
    on-disk record order, which downstream code treats as the canonical
    summation order. Compared by identity (the arrays make field equality
    ill-defined).
    """

    header: FeatureCacheHeader
    class_ids: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        class_ids = np.ascontiguousarray(self.class_ids, dtype=np.int64)
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[1] != self.header.visual_dim:
            raise DimensionError(
                f"vector block has shape {vectors.shape}, expected "
                f"(*, {self.header.visual_dim})"
            )
        if class_ids.shape != (vectors.shape[0],):
            raise DimensionError("class_ids and vectors row counts differ")
        if vectors.shape[0] != self.header.record_count:
            raise DimensionError(
                f"header declares {self.header.record_count} records, "
                f"got {vectors.shape[0]}"
            )
        if not np.isfinite(vectors).all():
            raise DataError("cache contains non-finite feature entries")
        class_ids.flags.writeable = False
        vectors.flags.writeable = False
        object.__setattr__(self, "class_ids", class_ids)
        object.__setattr__(self, "vectors", vectors)

    @property
    def visual_dim(self) -> int:
        return self.header.visual_dim

    @property
    def record_count(self) -> int:
        return self.header.record_count

    def split_classes(self, split: str) -> tuple[int, ...]:
        try:
            return self.header.split_table[split]
        except KeyError:
            raise FormatError(f"cache has no split named {split!r}") from None

    @cached_property
    def _class_index(self) -> dict[int, np.ndarray]:
        index: dict[int, np.ndarray] = {}
        for cid in np.unique(self.class_ids):
            rows = np.flatnonzero(self.class_ids == cid)
            rows.flags.writeable = False
            index[int(cid)] = rows
        return index

    def class_indices(self, class_id: int) -> np.ndarray:
        """Record row indices of one class, in on-disk order."""
        return self._class_index.get(int(class_id), np.empty(0, dtype=np.intp))


def write_cache(
    header: FeatureCacheHeader, records: Sequence[FeatureRecord], path: str | Path
) -> None:
    """Serialize ``records`` under ``header`` to ``path``.

    Raises DimensionError when a vector does not match ``header.visual_dim``
    or the record count disagrees with the header; DataError on non-finite
    entries. I/O failures propagate as OSError.
    """
    records = list(records)
    if len(records) != header.record_count:
        raise DimensionError(
            f"header declares {header.record_count} records, got {len(records)}"
        )
    dim = header.visual_dim
    body = np.empty(
        len(records), dtype=[("class_id", "<u4"), ("vector", "<f4", (dim,))]
    )
    for i, rec in enumerate(records):
        vec = np.asarray(rec.vector, dtype=np.float32)
        if vec.shape != (dim,):
            raise DimensionError(
                f"record {i} has vector shape {vec.shape}, expected ({dim},)"
            )
        if not np.isfinite(vec).all():
            raise DataError(f"record {i} contains non-finite entries")
        body[i] = (int(rec.class_id), vec)
    blob = header.to_json_bytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.version.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(body.tobytes())


def read_cache(path: str | Path) -> tuple[FeatureCacheHeader, FeatureCache]:
    """Load and validate a cache file written by :func:`write_cache`."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated before header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version = int.from_bytes(raw[4:8], "little")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header_len = int.from_bytes(raw[8:12], "little")
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated inside header block")
    header = FeatureCacheHeader.from_json_bytes(version, raw[12 : 12 + header_len])
    record_bytes = raw[12 + header_len :]
    stride = 4 + 4 * header.visual_dim
    if len(record_bytes) != stride * header.record_count:
        raise FormatError(
            f"{path}: record block holds {len(record_bytes)} bytes, expected "
            f"{stride * header.record_count}"
        )
    body = np.frombuffer(
        record_bytes,
        dtype=[("class_id", "<u4"), ("vector", "<f4", (header.visual_dim,))],
    )
    cache = FeatureCache(
        header=header,
        class_ids=body["class_id"].astype(np.int64),
        vectors=body["vector"],
    )
    return header, cache


def class_centers(cache: FeatureCache, split: str) -> dict[int, np.ndarray]:
    """Arithmetic mean vector of each class in ``split``.

    Sums run over records in on-disk order, in float64. Every class listed
    in the split must have at least one record (EmptyClassError otherwise).
    """
    centers: dict[int, np.ndarray] = {}
    for cid in cache.split_classes(split):
        rows = cache.class_indices(cid)
        if rows.size == 0:
            raise EmptyClassError(f"class {cid} has no records in split {split!r}")
        points = cache.vectors[rows].astype(np.float64)
        centers[cid] = points.sum(axis=0) / points.shape[0]
    return centers


def cluster_centers(
    cache: FeatureCache, split: str, clusters_per_class: int, seed: int
) -> dict[int, np.ndarray]:
    """Per-class k-means alternative to :func:`class_centers`.

    Runs Lloyd iterations with k-means++ seeding on each class's records and
    returns the center of the largest cluster (size ties broken by lowest
    cluster index). The per-class RNG derives from ``(seed, class_id)`` so
    results do not depend on class iteration order. With
    ``clusters_per_class == 1`` this reduces exactly to :func:`class_centers`.
    """
    if clusters_per_class < 1:
        raise ClusterError(f"clusters_per_class must be >= 1, got {clusters_per_class}")
    centers: dict[int, np.ndarray] = {}
    for cid in cache.split_classes(split):
        rows = cache.class_indices(cid)
        if rows.size == 0:
            raise EmptyClassError(f"class {cid} has no records in split {split!r}")
        if rows.size < clusters_per_class:
            raise ClusterError(
                f"class {cid} has {rows.size} records, fewer than "
                f"{clusters_per_class} clusters"
            )
        points = cache.vectors[rows].astype(np.float64)
        rng = np.random.default_rng([seed, cid])
        centers[cid] = _kmeans_largest_center(points, clusters_per_class, rng)
    return centers


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = np.empty((k, points.shape[1]), dtype=np.float64)
    chosen[0] = points[rng.integers(n)]
    d2 = ((points - chosen[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen[j] = points[idx]
        d2 = np.minimum(d2, ((points - chosen[j]) ** 2).sum(axis=1))
    return chosen


def _kmeans_largest_center(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    centers = _kmeans_plus_plus(points, k, rng)
    assign = np.zeros(points.shape[0], dtype=np.intp)
    for _ in range(_KMEANS_MAX_ITER):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = points[assign == j]
            if members.shape[0] > 0:
                new_centers[j] = members.sum(axis=0) / members.shape[0]
        movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if movement < _KMEANS_TOL:
            break
    sizes = np.bincount(assign, minlength=k)
    return centers[int(np.argmax(sizes))]


def save_centers(centers: Mapping[int, np.ndarray], path: str | Path) -> None:
    """Persist a class-center mapping as ``{class_id: [floats]}`` JSON."""
    payload = {str(cid): [float(x) for x in vec] for cid, vec in centers.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_centers(path: str | Path) -> dict[int, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    centers = {int(k): np.asarray(v, dtype=np.float64) for k, v in payload.items()}
    for cid, vec in centers.items():
        if vec.ndim != 1 or not np.isfinite(vec).all():
            raise DataError(f"center for class {cid} is malformed")
    return centers


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    class_name: str
    wordnet_key: str | None = None

    def __post_init__(self) -> None:
        if not self.class_name:
            raise DataError(f"class {self.class_id} has an empty name")


def load_class_table(path: str | Path) -> dict[int, ClassEntry]:
    """Read a ``{class_id: {name, wordnet_key}}`` JSON table."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    table: dict[int, ClassEntry] = {}
    for key, value in payload.items():
        cid = int(key)
        table[cid] = ClassEntry(
            class_id=cid,
            class_name=str(value["name"]),
            wordnet_key=value.get("wordnet_key"),
        )
    return table


def save_class_table(table: Mapping[int, ClassEntry] | Iterable[ClassEntry], path: str | Path) -> None:
    entries = table.values() if isinstance(table, Mapping) else table
    payload = {
        str(e.class_id): {"name": e.class_name, "wordnet_key": e.wordnet_key}
        for e in entries
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
