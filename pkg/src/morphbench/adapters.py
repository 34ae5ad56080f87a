"""Low-rank adapter weight maps: fine-tune orchestration and merging.

The fine-tuning itself happens inside a pluggable generation backend; this
module owns the weight-map container, the elementwise affine merge of two
subjects' adapters, the binary archive interchange format, and the
per-subject fine-tune cache.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .corpus import SubjectRecord, make_pair_id
from .errors import BackendError, IntegrityError

ARCHIVE_MAGIC = b"AWMAP001"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass(frozen=True)
class FineTuneConfig:
    """Adapter training knobs forwarded to the generation backend."""

    rank: int = 4
    steps: int = 1000
    seed: int = 0
    extra: tuple[tuple[str, str], ...] = ()

    def config_hash(self) -> str:
        blob = json.dumps({
            "rank": self.rank, "steps": self.steps, "seed": self.seed,
            "extra": sorted(self.extra),
        }, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class AdapterWeightMap:
    """Named map from layer-path keys to dense weight arrays."""

    subject_id: str
    entries: dict[str, np.ndarray]
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise ValueError(f"adapter map '{self.subject_id}' has no entries")
        for key, arr in self.entries.items():
            arr = np.asarray(arr)
            if arr.dtype.name not in _DTYPES:
                arr = arr.astype(np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(
                    f"adapter map '{self.subject_id}' key '{key}' has "
                    "non-finite values")
            self.entries[key] = arr

    def keys(self) -> list[str]:
        return sorted(self.entries)


@runtime_checkable
class GenerationBackend(Protocol):
    """Latent-diffusion plugin wrapping fine-tuning and image generation.

    ``fine_tune`` must be deterministic given (images, config); ``generate``
    must be deterministic given (request conditioning, seed, steps). The
    ``version`` string participates in artifact fingerprints.
    """

    name: str
    version: str
    capabilities: frozenset[str]

    def fine_tune(self, image_paths: Sequence[Path],
                  config: FineTuneConfig) -> dict[str, np.ndarray]: ...

    def generate(self, request, seed: int) -> np.ndarray: ...


def merge_adapters(w1: AdapterWeightMap, w2: AdapterWeightMap,
                   alpha: float = 0.5) -> AdapterWeightMap:
    """Key-wise, element-wise affine combination ``alpha*w1 + (1-alpha)*w2``.

    The default alpha of 0.5 averages the two adapters. Both maps must have
    identical key sets and per-key shapes; the merged map records both
    parents and alpha in its training metadata.
    """
    k1, k2 = set(w1.entries), set(w2.entries)
    if k1 != k2:
        diff = sorted(k1.symmetric_difference(k2))
        raise ValueError(f"adapter key sets differ; symmetric difference: {diff}")
    merged: dict[str, np.ndarray] = {}
    for key in sorted(k1):
        a1, a2 = w1.entries[key], w2.entries[key]
        if a1.shape != a2.shape:
            raise ValueError(
                f"adapter shape mismatch at key '{key}': {a1.shape} vs {a2.shape}")
        if alpha == 1.0:
            merged[key] = a1.copy()
        elif alpha == 0.0:
            merged[key] = a2.copy()
        else:
            merged[key] = alpha * a1 + (1.0 - alpha) * a2
    return AdapterWeightMap(
        subject_id=make_pair_id(w1.subject_id, w2.subject_id),
        entries=merged,
        training_meta={
            "parents": [w1.subject_id, w2.subject_id],
            "alpha": alpha,
        })


def save_adapter(weights: AdapterWeightMap, path: Path | str) -> None:
    """Serialize to the archive format; round-trips bit-exactly.

    Layout: 8-byte magic, little-endian uint64 index length, JSON index
    (key, dtype, shape, byte offset/length, checksum per entry), then one
    contiguous blob of row-major little-endian arrays.
    """
    path = Path(path)
    index_entries = []
    chunks = []
    offset = 0
    for key in sorted(weights.entries):
        arr = weights.entries[key]
        dtype = arr.dtype.name
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        index_entries.append({
            "key": key,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        chunks.append(raw)
        offset += len(raw)
    index = json.dumps({
        "subject_id": weights.subject_id,
        "training_meta": weights.training_meta,
        "entries": index_entries,
    }, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(ARCHIVE_MAGIC)
            fh.write(struct.pack("<Q", len(index)))
            fh.write(index)
            for raw in chunks:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_adapter(path: Path | str) -> AdapterWeightMap:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != ARCHIVE_MAGIC:
        raise IntegrityError(f"{path}: not an adapter archive (bad magic)")
    (index_len,) = struct.unpack("<Q", blob[8:16])
    index = json.loads(blob[16:16 + index_len].decode("utf-8"))
    body = blob[16 + index_len:]
    entries: dict[str, np.ndarray] = {}
    for ent in index["entries"]:
        raw = body[ent["offset"]:ent["offset"] + ent["length"]]
        if hashlib.sha256(raw).hexdigest() != ent["sha256"]:
            raise IntegrityError(
                f"{path}: checksum mismatch for key '{ent['key']}'")
        arr = np.frombuffer(raw, dtype=_DTYPES[ent["dtype"]])
        entries[ent["key"]] = arr.reshape(ent["shape"]).astype(ent["dtype"])
    return AdapterWeightMap(
        subject_id=index["subject_id"],
        entries=entries,
        training_meta=dict(index["training_meta"]))


def adapter_digest(weights: AdapterWeightMap) -> str:
    """Content digest over keys, dtypes, shapes, and raw array bytes."""
    h = hashlib.sha256()
    for key in sorted(weights.entries):
        arr = weights.entries[key]
        h.update(key.encode("utf-8"))
        h.update(arr.dtype.name.encode("ascii"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.name]).tobytes())
    return h.hexdigest()


class AdapterStore:
    """On-disk cache of fine-tuned adapters, one archive per key.

    Write-once: a second save under an existing key must be byte-identical,
    otherwise it is a cache collision and a hard integrity error.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def key(self, subject_id: str, backend_name: str, config_hash: str) -> str:
        return f"{subject_id}__{backend_name}__{config_hash}"

    def path(self, key: str) -> Path:
        return self.root / f"{key}.adapter"

    def has(self, key: str) -> bool:
        return self.path(key).is_file()

    def save(self, weights: AdapterWeightMap, backend_name: str,
             config_hash: str) -> Path:
        key = self.key(weights.subject_id, backend_name, config_hash)
        path = self.path(key)
        if path.is_file():
            existing = load_adapter(path)
            if adapter_digest(existing) != adapter_digest(weights):
                raise IntegrityError(
                    f"adapter cache collision for key '{key}': existing "
                    "entry differs from the new content")
            return path
        self.root.mkdir(parents=True, exist_ok=True)
        save_adapter(weights, path)
        return path

    def load(self, key: str) -> AdapterWeightMap:
        path = self.path(key)
        if not path.is_file():
            raise FileNotFoundError(f"no adapter cache entry for key '{key}'")
        return load_adapter(path)


def fine_tune(subject: SubjectRecord,
              image_paths: Sequence[Path | str],
              config: FineTuneConfig,
              backend: GenerationBackend,
              image_ids: Sequence[str] | None = None,
              store: AdapterStore | None = None) -> AdapterWeightMap:
    """Train a per-subject adapter through the backend, with caching.

    A cache hit under (subject, backend name, config hash) returns the
    stored map without invoking the backend.
    """
    if len(image_paths) < 1:
        raise ValueError(f"subject '{subject.subject_id}': need at least one image")
    if "fine_tune" not in backend.capabilities:
        raise BackendError(
            f"generation backend '{backend.name}' does not support fine_tune")
    if image_ids is None:
        image_ids = [Path(p).stem for p in image_paths]

    if store is not None:
        key = store.key(subject.subject_id, backend.name, config.config_hash())
        if store.has(key):
            return store.load(key)

    try:
        raw = backend.fine_tune([Path(p) for p in image_paths], config)
    except Exception as exc:
        raise BackendError(
            f"fine_tune failed for subject '{subject.subject_id}' on "
            f"backend '{backend.name}': {exc}") from exc
    weights = AdapterWeightMap(
        subject_id=subject.subject_id,
        entries=dict(raw),
        training_meta={
            "image_ids": list(image_ids),
            "steps": config.steps,
            "seed": config.seed,
        })
    if store is not None:
        store.save(weights, backend.name, config.config_hash())
    return weights
