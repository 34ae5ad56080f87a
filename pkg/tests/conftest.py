"""Shared fixtures: synthetic image datasets and counting backend wrappers."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from morphbench.backends import StubGenerationBackend, StubRecognitionBackend


def write_png(path: Path, seed: int, size: int = 12) -> Path:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)
    return path


@pytest.fixture
def image_factory(tmp_path):
    """Callable (name, seed) -> path of a small deterministic PNG."""
    counter = [0]

    def make(name: str | None = None, seed: int | None = None) -> Path:
        counter[0] += 1
        name = name or f"img{counter[0]:04d}.png"
        return write_png(tmp_path / "imgs" / name,
                         seed if seed is not None else counter[0])

    return make


LAYOUT = {
    "pattern": (r"^(?P<subject>s\d+)_(?P<gender>[fm])_img\d+_"
                r"(?P<pose>\w+?)_(?P<expression>\w+)\.png$"),
    "frontal_values": ["front"],
    "neutral_values": ["neutral"],
    "gender_values": {"f": "female", "m": "male"},
}


def build_dataset(root: Path, subjects: int = 6, images: int = 4,
                  seed: int = 7) -> dict:
    """Populate ``root`` with PNGs matching LAYOUT; half female, half male."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for s in range(subjects):
        gender = "f" if s < (subjects + 1) // 2 else "m"
        for i in range(images):
            name = f"s{s:02d}_{gender}_img{i:02d}_front_neutral.png"
            write_png(root / name, int(rng.integers(0, 2**31)))
    return dict(LAYOUT)


@dataclass
class CountingRecognition(StubRecognitionBackend):
    """Stub recognition backend that counts embed calls."""

    calls: int = 0

    def embed(self, path):
        self.calls += 1
        return super().embed(path)


@dataclass
class CountingGeneration(StubGenerationBackend):
    """Stub generation backend that counts fine_tune and generate calls."""

    fine_tune_calls: int = 0
    generate_calls: int = 0
    generated_pairs: list = field(default_factory=list)

    def fine_tune(self, image_paths, config):
        self.fine_tune_calls += 1
        return super().fine_tune(image_paths, config)

    def generate(self, request, seed):
        self.generate_calls += 1
        self.generated_pairs.append(request.pair_id)
        return super().generate(request, seed)
