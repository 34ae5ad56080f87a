"""Four-stage morph generation: fine-tune, merge, condition, generate.

Stages one and two (per-subject adapter fine-tuning and identity
extraction) are cached by the adapter and identity stores. This module
assembles cached artifacts for a pair into a generation request, runs
the backend, writes PNG outputs, and keeps an append-only run manifest
that makes batches resumable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .adapters import (AdapterStore, AdapterWeightMap, FineTuneConfig,
                       GenerationBackend, merge_adapters, adapter_digest)
from .corpus import Manifest, MorphPair
from .errors import (BackendError, ConfigError, DatasetError,
                     MissingArtifactError)
from .fsutil import atomic_write_bytes, canonical_json
from .identity import (IdentityStore, merge_identities,
                       representative_embedding)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationConfig:
    """Which conditioning sources a variant uses and how many images feed
    the per-subject stages."""

    variant: str
    images_per_subject: int
    use_adapters: bool
    use_identity: bool

    def __post_init__(self):
        if self.images_per_subject < 1:
            raise ValueError(
                f"variant '{self.variant}': images_per_subject must be >= 1")
        if not (self.use_adapters or self.use_identity):
            raise ValueError(
                f"variant '{self.variant}': at least one of adapters or "
                "identity conditioning must be enabled")

    @classmethod
    def from_variant(cls, name: str) -> "AblationConfig":
        try:
            return VARIANTS[name]
        except KeyError:
            raise ConfigError(
                f"unknown variant '{name}' (known: {', '.join(sorted(VARIANTS))})"
            ) from None


VARIANTS = {
    "default": AblationConfig("default", images_per_subject=10,
                              use_adapters=True, use_identity=True),
    "A": AblationConfig("A", images_per_subject=3,
                        use_adapters=True, use_identity=True),
    "B": AblationConfig("B", images_per_subject=5,
                        use_adapters=True, use_identity=True),
    "C": AblationConfig("C", images_per_subject=10,
                        use_adapters=False, use_identity=True),
    "D": AblationConfig("D", images_per_subject=10,
                        use_adapters=True, use_identity=False),
}


def finetune_config_for_variant(base: FineTuneConfig,
                                ablation: AblationConfig) -> FineTuneConfig:
    """Fold the variant's image budget into the training config so adapter
    cache keys cannot collide across variants with different budgets."""
    extra = tuple(kv for kv in base.extra if kv[0] != "images_per_subject")
    extra += (("images_per_subject", str(ablation.images_per_subject)),)
    return replace(base, extra=extra)


@dataclass
class GenerationRequest:
    """Everything the backend needs to render one morph deterministically."""

    pair_id: str
    variant: str
    prompt: str
    negative_prompt: str = ""
    steps: int = 50
    resolution: int = 64
    seed: int = 0
    outputs: int = 1
    adapters: AdapterWeightMap | None = None
    identity: np.ndarray | None = None

    def __post_init__(self):
        if self.adapters is None and self.identity is None:
            raise ValueError(
                f"request for pair '{self.pair_id}': needs merged adapters, "
                "a merged identity, or both")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.outputs < 1:
            raise ValueError(f"outputs must be >= 1, got {self.outputs}")
        if self.resolution < 8:
            raise ValueError(f"resolution must be >= 8, got {self.resolution}")
        if self.identity is not None:
            ident = np.asarray(self.identity, dtype=np.float64)
            if ident.ndim != 1 or not np.all(np.isfinite(ident)):
                raise ValueError(
                    f"request for pair '{self.pair_id}': identity must be a "
                    "finite 1-D vector")
            self.identity = ident

    def fingerprint(self, backend_version: str) -> str:
        """Content hash over the full request plus the backend version.

        The number of outputs is deliberately excluded: raising it later
        extends a run instead of invalidating the finished outputs.
        """
        payload = {
            "pair_id": self.pair_id,
            "variant": self.variant,
            "prompt": self.prompt,
            "negative_prompt": self.negative_prompt,
            "steps": self.steps,
            "resolution": self.resolution,
            "seed": self.seed,
            "adapters": adapter_digest(self.adapters) if self.adapters is not None else None,
            "identity": (hashlib.sha256(
                np.ascontiguousarray(self.identity, dtype="<f8").tobytes()
            ).hexdigest() if self.identity is not None else None),
            "backend_version": backend_version,
        }
        return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MorphArtifact:
    """One manifest entry: a single output slot of a generation request."""

    pair_id: str
    variant: str
    fingerprint: str
    output_index: int
    seed: int
    path: str
    status: str
    timestamp: str
    error: str | None = None


class RunManifest:
    """Append-only JSONL journal of generation outcomes.

    Append is thread-safe and flushed per entry, so an interrupted batch
    leaves a readable journal behind and a rerun can resume from it.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, artifact: MorphArtifact) -> None:
        line = json.dumps(dataclasses.asdict(artifact), sort_keys=True)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(line + "\n")
                fh.flush()

    def entries(self) -> list[dict]:
        if not self.path.is_file():
            return []
        out = []
        with self.path.open("r") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(
                        f"{self.path}:{lineno}: malformed manifest line: {exc}"
                    ) from exc
        return out

    def completed_outputs(self, fingerprint: str) -> set[int]:
        """Output indices already generated successfully for a request."""
        return {
            e["output_index"] for e in self.entries()
            if e["fingerprint"] == fingerprint and e["status"] == "ok"
        }


def _identity_key_images(manifest: Manifest, subject_id: str,
                         count: int) -> list[str]:
    subject = manifest.subjects.get(subject_id)
    if subject is None:
        raise DatasetError(f"subject '{subject_id}' is not in the manifest")
    return list(subject.images[:count])


def build_request(pair: MorphPair,
                  ablation: AblationConfig,
                  manifest: Manifest,
                  *,
                  identity_store: IdentityStore | None = None,
                  recognition_name: str = "stub",
                  adapter_store: AdapterStore | None = None,
                  generation_name: str = "stub",
                  finetune_config: FineTuneConfig | None = None,
                  alpha: float = 0.5,
                  interp: float = 0.5,
                  prompt: str = "",
                  negative_prompt: str = "",
                  steps: int = 50,
                  resolution: int = 64,
                  seed: int = 0,
                  outputs: int = 1) -> GenerationRequest:
    """Assemble a request from cached per-subject artifacts.

    Adapters for both subjects are loaded and merged elementwise; identity
    matrices are loaded, merged row-wise on the unit sphere, and collapsed
    to a representative conditioning vector. A missing cache entry raises
    rather than silently re-running the expensive stage.
    """
    merged_adapters = None
    if ablation.use_adapters:
        if adapter_store is None:
            raise ValueError(
                f"variant '{ablation.variant}' needs an adapter store")
        cfg = finetune_config_for_variant(finetune_config or FineTuneConfig(),
                                          ablation)
        maps = []
        for subject_id in (pair.subject_a, pair.subject_b):
            key = adapter_store.key(subject_id, generation_name,
                                    cfg.config_hash())
            if not adapter_store.has(key):
                raise MissingArtifactError(subject_id, "fine_tune")
            maps.append(adapter_store.load(key))
        merged_adapters = merge_adapters(maps[0], maps[1], alpha)

    identity_vec = None
    if ablation.use_identity:
        if identity_store is None:
            raise ValueError(
                f"variant '{ablation.variant}' needs an identity store")
        matrices = []
        for subject_id in (pair.subject_a, pair.subject_b):
            ids = _identity_key_images(manifest, subject_id,
                                       ablation.images_per_subject)
            key = identity_store.key(subject_id, recognition_name, ids)
            if not identity_store.has(key):
                raise MissingArtifactError(subject_id, "extract_identity")
            matrices.append(identity_store.load(key))
        merged = merge_identities(matrices[0], matrices[1], interp)
        identity_vec = representative_embedding(merged)

    return GenerationRequest(
        pair_id=pair.pair_id, variant=ablation.variant, prompt=prompt,
        negative_prompt=negative_prompt, steps=steps, resolution=resolution,
        seed=seed, outputs=outputs, adapters=merged_adapters,
        identity=identity_vec)


def morph_filename(request: GenerationRequest, fingerprint: str,
                   output_index: int) -> str:
    return (f"{request.pair_id}__{request.variant}__"
            f"{fingerprint[:12]}__{output_index:02d}.png")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def generate(request: GenerationRequest,
             backend: GenerationBackend,
             out_dir: Path | str,
             run_manifest: RunManifest | None = None) -> list[MorphArtifact]:
    """Render all output slots of a request; returns one artifact per slot.

    Output slot i uses seed ``request.seed + i``. Slots already marked ok
    in the run manifest are skipped without touching the backend. Failures
    are recorded per slot ("failed" status plus the error) and do not stop
    the remaining slots.
    """
    if "generate" not in backend.capabilities:
        raise BackendError(
            f"generation backend '{backend.name}' does not support generate")
    out_dir = Path(out_dir)
    fp = request.fingerprint(backend.version)
    done = run_manifest.completed_outputs(fp) if run_manifest else set()
    artifacts: list[MorphArtifact] = []
    for i in range(request.outputs):
        path = out_dir / morph_filename(request, fp, i)
        slot_seed = request.seed + i
        if i in done:
            artifacts.append(MorphArtifact(
                pair_id=request.pair_id, variant=request.variant,
                fingerprint=fp, output_index=i, seed=slot_seed,
                path=str(path), status="skipped", timestamp=_now()))
            continue
        try:
            arr = backend.generate(request, slot_seed)
            arr = np.asarray(arr)
            if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
                raise BackendError(
                    f"backend '{backend.name}' returned a "
                    f"{arr.dtype} array of shape {arr.shape}, expected "
                    "uint8 (height, width, 3)")
            buf = io.BytesIO()
            Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
            atomic_write_bytes(path, buf.getvalue())
            artifact = MorphArtifact(
                pair_id=request.pair_id, variant=request.variant,
                fingerprint=fp, output_index=i, seed=slot_seed,
                path=str(path), status="ok", timestamp=_now())
        except Exception as exc:
            log.warning("generation failed for pair %s slot %d: %s",
                        request.pair_id, i, exc)
            artifact = MorphArtifact(
                pair_id=request.pair_id, variant=request.variant,
                fingerprint=fp, output_index=i, seed=slot_seed,
                path="", status="failed", timestamp=_now(),
                error=f"{type(exc).__name__}: {exc}")
        if run_manifest is not None:
            run_manifest.append(artifact)
        artifacts.append(artifact)
    return artifacts


@dataclass
class RunReport:
    """Batch outcome summary."""

    ok: int = 0
    failed: int = 0
    skipped: int = 0
    wall_seconds: float = 0.0
    artifacts: list[MorphArtifact] = field(default_factory=list)


def run_batch(pairs: Sequence[MorphPair],
              request_builder: Callable[[MorphPair], GenerationRequest],
              backend: GenerationBackend,
              out_dir: Path | str,
              manifest_path: Path | str,
              max_jobs: int = 1) -> RunReport:
    """Generate morphs for a batch of pairs against one run manifest.

    Rerunning with the same manifest resumes: finished output slots are
    skipped. Per-slot generation failures are journaled, counted, and do
    not abort the batch.
    """
    manifest = RunManifest(manifest_path)
    report = RunReport()
    start = time.monotonic()

    def job(pair: MorphPair) -> list[MorphArtifact]:
        request = request_builder(pair)
        return generate(request, backend, out_dir, manifest)

    if max_jobs <= 1:
        results = [job(pair) for pair in pairs]
    else:
        with ThreadPoolExecutor(max_workers=max_jobs) as pool:
            results = list(pool.map(job, pairs))
    for artifacts in results:
        for artifact in artifacts:
            report.artifacts.append(artifact)
            if artifact.status == "ok":
                report.ok += 1
            elif artifact.status == "failed":
                report.failed += 1
            else:
                report.skipped += 1
    report.wall_seconds = time.monotonic() - start
    return report
