"""Per-subject identity matrices and spherical-interpolation merging.

An identity is an n x d matrix of face embeddings, one row per source
image, produced through a pluggable recognition backend. Two identities
are blended rowwise along the great-circle arc between corresponding
embeddings.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .corpus import SubjectRecord, make_pair_id
from .errors import BackendError, IntegrityError

# sin(angle) below this triggers the near-parallel fallback; angles this
# close to pi are rejected outright because the geodesic is non-unique.
EPS_PARALLEL = 1e-7


class AntipodalError(ValueError):
    """Raised when interpolating between (near-)antipodal embeddings."""


@runtime_checkable
class RecognitionBackend(Protocol):
    """Face-recognition plugin producing fixed-size embeddings.

    ``embed`` must be deterministic for a fixed backend version and input.
    """

    name: str
    version: str
    embedding_dim: int

    def embed(self, image_path: Path) -> np.ndarray: ...


@dataclass
class IdentityMatrix:
    subject_id: str
    rows: np.ndarray  # (n, d) float64
    source_image_ids: list[str]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError(
                f"identity rows must be a non-empty 2-D matrix, "
                f"got shape {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError(f"identity '{self.subject_id}' has non-finite entries")
        norms = np.linalg.norm(self.rows, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.argmin(norms))
            raise ValueError(
                f"identity '{self.subject_id}' row {bad} has zero norm")
        if len(self.source_image_ids) != self.rows.shape[0]:
            raise ValueError(
                f"identity '{self.subject_id}': {len(self.source_image_ids)} "
                f"source image ids for {self.rows.shape[0]} rows")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


def slerp(e1: np.ndarray, e2: np.ndarray, lam: float) -> np.ndarray:
    """Spherical linear interpolation between two embedding vectors.

    Returns ``sin((1-lam)*omega)/sin(omega) * e1 + sin(lam*omega)/sin(omega)
    * e2`` where ``omega`` is the angle between the vectors, with the cosine
    clamped to [-1, 1] before the arccos.

    Near-parallel inputs (``sin(omega)`` < 1e-7) fall back to linear
    interpolation rescaled to the interpolated norm, which keeps the
    endpoint identities exact. Near-antipodal inputs are a hard error:
    the connecting great-circle arc is not unique.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be within [0, 1], got {lam}")
    a = np.asarray(e1, dtype=np.float64)
    b = np.asarray(e2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("embeddings must be finite")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("embeddings must be non-zero")

    cos_omega = min(1.0, max(-1.0, float(np.dot(a, b)) / (norm_a * norm_b)))
    omega = math.acos(cos_omega)
    sin_omega = math.sin(omega)
    if sin_omega < EPS_PARALLEL:
        if omega > math.pi / 2:
            raise AntipodalError(
                f"embeddings are antipodal (angle {omega:.9f} rad); "
                "the interpolation arc is non-unique")
        mixed = (1.0 - lam) * a + lam * b
        target_norm = (1.0 - lam) * norm_a + lam * norm_b
        return mixed * (target_norm / float(np.linalg.norm(mixed)))
    return (math.sin((1.0 - lam) * omega) / sin_omega) * a \
        + (math.sin(lam * omega) / sin_omega) * b


def merge_identities(e1: IdentityMatrix, e2: IdentityMatrix,
                     lam: float = 0.5) -> IdentityMatrix:
    """Blend two identity matrices rowwise with spherical interpolation.

    Row i of the result interpolates row i of each input; the merged
    subject ID is the pair ID of the two contributors.
    """
    if e1.rows.shape != e2.rows.shape:
        raise ValueError(
            f"identity shape mismatch: {e1.subject_id} is {e1.rows.shape}, "
            f"{e2.subject_id} is {e2.rows.shape}")
    merged = np.empty_like(e1.rows)
    for i in range(e1.n):
        try:
            merged[i] = slerp(e1.rows[i], e2.rows[i], lam)
        except ValueError as exc:
            raise type(exc)(f"row {i}: {exc}") from exc
    source = [f"{a}+{b}" for a, b in zip(e1.source_image_ids, e2.source_image_ids)]
    return IdentityMatrix(
        subject_id=make_pair_id(e1.subject_id, e2.subject_id),
        rows=merged,
        source_image_ids=source)


def representative_embedding(matrix: IdentityMatrix) -> np.ndarray:
    """Mean of the per-image embeddings, re-normalized to unit length."""
    mean = matrix.rows.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise ValueError(
            f"identity '{matrix.subject_id}': embeddings cancel out; "
            "no representative direction")
    return mean / norm


def image_list_hash(image_ids: Sequence[str]) -> str:
    digest = hashlib.sha256("\n".join(image_ids).encode("utf-8"))
    return digest.hexdigest()[:16]


class IdentityStore:
    """On-disk cache of identity matrices.

    Each entry is a single file: a JSON header line (subject, backend, n, d,
    source image IDs) followed by the row-major float64 little-endian matrix
    bytes, plus a ``.sha256`` sidecar guarding corruption. Entries are
    write-once: files are created atomically and a second write under the
    same key must carry identical content.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def key(self, subject_id: str, backend_name: str,
            image_ids: Sequence[str]) -> str:
        return f"{subject_id}__{backend_name}__{image_list_hash(image_ids)}"

    def path(self, key: str) -> Path:
        return self.root / f"{key}.identity"

    def _sidecar(self, key: str) -> Path:
        return self.root / f"{key}.identity.sha256"

    def has(self, key: str) -> bool:
        return self.path(key).is_file()

    def save(self, matrix: IdentityMatrix, backend_name: str) -> Path:
        key = self.key(matrix.subject_id, backend_name, matrix.source_image_ids)
        path = self.path(key)
        header = json.dumps({
            "subject_id": matrix.subject_id,
            "backend": backend_name,
            "n": matrix.n,
            "d": matrix.d,
            "source_image_ids": matrix.source_image_ids,
        }, sort_keys=True).encode("utf-8") + b"\n"
        payload = header + np.ascontiguousarray(
            matrix.rows, dtype="<f8").tobytes()
        checksum = hashlib.sha256(payload).hexdigest()
        if path.is_file():
            existing = hashlib.sha256(path.read_bytes()).hexdigest()
            if existing != checksum:
                raise IntegrityError(
                    f"identity cache collision for key '{key}': "
                    "existing entry differs from the new content")
            return path
        self.root.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=key, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self._sidecar(key).write_text(checksum + "\n", encoding="utf-8")
        return path

    def load(self, key: str) -> IdentityMatrix:
        path = self.path(key)
        if not path.is_file():
            raise FileNotFoundError(f"no identity cache entry for key '{key}'")
        payload = path.read_bytes()
        sidecar = self._sidecar(key)
        if sidecar.is_file():
            expected = sidecar.read_text(encoding="utf-8").strip()
            actual = hashlib.sha256(payload).hexdigest()
            if actual != expected:
                raise IntegrityError(
                    f"identity cache entry '{key}' is corrupt "
                    f"(checksum {actual[:12]}.. != {expected[:12]}..)")
        newline = payload.index(b"\n")
        header = json.loads(payload[:newline].decode("utf-8"))
        rows = np.frombuffer(payload[newline + 1:], dtype="<f8").reshape(
            header["n"], header["d"]).astype(np.float64)
        return IdentityMatrix(
            subject_id=header["subject_id"],
            rows=rows,
            source_image_ids=list(header["source_image_ids"]))


def extract_identity(subject: SubjectRecord,
                     image_paths: Sequence[Path | str],
                     backend: RecognitionBackend,
                     image_ids: Sequence[str] | None = None,
                     store: IdentityStore | None = None) -> IdentityMatrix:
    """Embed each image through the backend, rows in input order.

    Results are cached when a store is given, keyed by (subject, backend
    name, image-list hash); a cache hit skips the backend entirely. A
    backend failure aborts on the offending image with no partial cache
    entry written.
    """
    if len(image_paths) < 1:
        raise ValueError(f"subject '{subject.subject_id}': need at least one image")
    if image_ids is None:
        image_ids = [Path(p).stem for p in image_paths]
    if len(image_ids) != len(image_paths):
        raise ValueError(
            f"subject '{subject.subject_id}': {len(image_ids)} image ids "
            f"for {len(image_paths)} paths")

    if store is not None:
        key = store.key(subject.subject_id, backend.name, image_ids)
        if store.has(key):
            return store.load(key)

    rows = np.empty((len(image_paths), backend.embedding_dim), dtype=np.float64)
    for i, (image_id, path) in enumerate(zip(image_ids, image_paths)):
        try:
            vec = np.asarray(backend.embed(Path(path)), dtype=np.float64)
        except Exception as exc:
            raise BackendError(
                f"recognition backend '{backend.name}' failed on image "
                f"'{image_id}' (position {i}): {exc}") from exc
        if vec.shape != (backend.embedding_dim,):
            raise BackendError(
                f"recognition backend '{backend.name}' returned shape "
                f"{vec.shape} for image '{image_id}', expected "
                f"({backend.embedding_dim},)")
        rows[i] = vec

    matrix = IdentityMatrix(subject_id=subject.subject_id, rows=rows,
                            source_image_ids=list(image_ids))
    if store is not None:
        store.save(matrix, backend.name)
    return matrix
