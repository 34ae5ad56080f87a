"""Backend registries and deterministic stub implementations.

Real diffusion models, face recognition systems, quality scorers, and
feature extractors plug in through the registries below. The bundled
"stub" implementations derive every output from content hashes, so runs
are fully deterministic and the whole pipeline is testable without any
model weights or GPUs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapters import FineTuneConfig, GenerationBackend, adapter_digest
from .errors import ConfigError
from .fsutil import sha256_file
from .identity import RecognitionBackend
from .metrics.quality import QualityScorer


def _seed_from(*parts: str) -> int:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return int(h[:16], 16)


@dataclass
class StubRecognitionBackend:
    """Embeds an image as a unit vector seeded by its content hash."""

    name: str = "stub"
    version: str = "1"
    embedding_dim: int = 8

    def embed(self, path: Path) -> np.ndarray:
        rng = np.random.default_rng(
            _seed_from("embed", self.version, str(self.embedding_dim),
                       sha256_file(path)))
        vec = rng.normal(size=self.embedding_dim)
        return vec / np.linalg.norm(vec)


@dataclass
class StubGenerationBackend:
    """Fakes fine-tuning and generation with hash-seeded arrays.

    ``fail_pair_ids`` lets tests force generation failures for chosen
    pairs without monkeypatching.
    """

    name: str = "stub"
    version: str = "1"
    capabilities: frozenset[str] = frozenset({"fine_tune", "generate"})
    resolution: int = 64
    fail_pair_ids: set[str] = field(default_factory=set)

    LAYERS = ("unet.attn1", "unet.attn2", "text.self_attn")
    WIDTH = 16

    def fine_tune(self, image_paths: Sequence[Path],
                  config: FineTuneConfig) -> dict[str, np.ndarray]:
        digests = [sha256_file(p) for p in image_paths]
        rng = np.random.default_rng(
            _seed_from("fine_tune", self.version, config.config_hash(),
                       *digests))
        entries: dict[str, np.ndarray] = {}
        for layer in self.LAYERS:
            entries[f"{layer}.lora_down"] = rng.normal(
                scale=0.01, size=(config.rank, self.WIDTH)).astype(np.float32)
            entries[f"{layer}.lora_up"] = rng.normal(
                scale=0.01, size=(self.WIDTH, config.rank)).astype(np.float32)
        return entries

    def generate(self, request, seed: int) -> np.ndarray:
        if request.pair_id in self.fail_pair_ids:
            raise RuntimeError(f"forced failure for pair '{request.pair_id}'")
        parts = ["generate", self.version, request.pair_id, request.variant,
                 request.prompt, request.negative_prompt, str(request.steps),
                 str(seed)]
        if request.adapters is not None:
            parts.append(adapter_digest(request.adapters))
        if request.identity is not None:
            parts.append(hashlib.sha256(
                np.ascontiguousarray(request.identity, dtype="<f8").tobytes()
            ).hexdigest())
        rng = np.random.default_rng(_seed_from(*parts))
        res = self.resolution
        return rng.integers(0, 256, size=(res, res, 3), dtype=np.uint8)


@dataclass
class ConstantScorer:
    """Returns the same score for every image; handy as a control."""

    value: float = 50.0
    name: str = "constant"
    version: str = "1"

    def score(self, path: Path) -> float:
        sha256_file(path)
        return self.value


@dataclass
class StubScorer:
    """Deterministic pseudo-quality score in [0, 100) from content hash."""

    name: str = "stub"
    version: str = "1"

    def score(self, path: Path) -> float:
        digest = sha256_file(path)
        return (int(digest[:8], 16) % 10000) / 100.0


@dataclass
class StubFeatureExtractor:
    """Maps images to hash-seeded feature rows for distribution distances."""

    name: str = "stub"
    version: str = "1"
    dim: int = 8

    def extract(self, paths: Sequence[Path | str]) -> np.ndarray:
        rows = []
        for p in paths:
            rng = np.random.default_rng(
                _seed_from("features", self.version, str(self.dim),
                           sha256_file(Path(p))))
            rows.append(rng.normal(size=self.dim))
        return np.asarray(rows, dtype=np.float64)


_GENERATION: dict[str, Callable[[], GenerationBackend]] = {}
_RECOGNITION: dict[str, Callable[[], RecognitionBackend]] = {}
_SCORERS: dict[str, Callable[[], QualityScorer]] = {}
_EXTRACTORS: dict[str, Callable[[], StubFeatureExtractor]] = {}


def _get(table: dict, kind: str, name: str):
    try:
        factory = table[name]
    except KeyError:
        known = ", ".join(sorted(table))
        raise ConfigError(f"unknown {kind} '{name}' (known: {known})") from None
    return factory()


def register_generation_backend(name: str, factory: Callable[[], GenerationBackend]) -> None:
    _GENERATION[name] = factory


def get_generation_backend(name: str) -> GenerationBackend:
    return _get(_GENERATION, "generation backend", name)


def register_recognition_backend(name: str, factory: Callable[[], RecognitionBackend]) -> None:
    _RECOGNITION[name] = factory


def get_recognition_backend(name: str) -> RecognitionBackend:
    return _get(_RECOGNITION, "recognition backend", name)


def register_scorer(name: str, factory: Callable[[], QualityScorer]) -> None:
    _SCORERS[name] = factory


def get_scorer(name: str) -> QualityScorer:
    return _get(_SCORERS, "quality scorer", name)


def register_feature_extractor(name: str, factory: Callable[[], object]) -> None:
    _EXTRACTORS[name] = factory


def get_feature_extractor(name: str):
    return _get(_EXTRACTORS, "feature extractor", name)


register_generation_backend("stub", StubGenerationBackend)
register_recognition_backend("stub", StubRecognitionBackend)
register_scorer("stub", StubScorer)
register_scorer("constant", ConstantScorer)
register_feature_extractor("stub", StubFeatureExtractor)
