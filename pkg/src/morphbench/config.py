"""Run configuration: YAML file, flag overrides, and a stable hash.

Precedence is flags over file over defaults. The config hash is computed
from canonical JSON (sorted keys), so reordering keys in the YAML file
does not change it; any semantic change does.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .adapters import FineTuneConfig
from .errors import ConfigError
from .fsutil import canonical_json
from .genpipeline import VARIANTS
from .metrics.mapmatrix import SEMANTICS

CACHE_ENV_VAR = "MORPHBENCH_CACHE"

DEFAULT_PROMPT = ("a passport-style frontal photo of a person, "
                  "neutral expression, plain background")

_FINETUNE_KEYS = {"rank", "steps", "seed", "extra"}


def _finetune_from_dict(raw: dict) -> FineTuneConfig:
    unknown = set(raw) - _FINETUNE_KEYS
    if unknown:
        raise ConfigError(f"finetune section has unknown keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "extra" in kwargs:
        extra = kwargs["extra"]
        if not isinstance(extra, dict):
            raise ConfigError("finetune.extra must be a mapping")
        kwargs["extra"] = tuple(sorted((str(k), str(v)) for k, v in extra.items()))
    return FineTuneConfig(**kwargs)


@dataclass
class RunConfig:
    """Every knob a workbench run depends on, in one place."""

    dataset: str = "dataset"
    dataset_root: str | None = None
    layout: dict = field(default_factory=dict)
    backend_gen: str = "stub"
    backend_frs: str = "stub"
    feature_extractor: str = "stub"
    scorers: list[str] = field(default_factory=lambda: ["stub"])
    top_k: int = 3
    max_pairs: int | None = None
    variant: str = "default"
    prompt: str = DEFAULT_PROMPT
    negative_prompt: str = ""
    seed: int = 0
    steps: int = 50
    outputs: int = 1
    resolution: int = 64
    alpha: float = 0.5
    interp: float = 0.5
    out_dir: str = "out"
    cache_root: str | None = None
    max_jobs: int = 1
    target_fmr: float = 0.001
    map_semantics: str = "per-subject-min"
    finetune: FineTuneConfig = field(default_factory=FineTuneConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant '{self.variant}' "
                f"(known: {', '.join(sorted(VARIANTS))})")
        if self.map_semantics not in SEMANTICS:
            raise ConfigError(
                f"unknown map semantics '{self.map_semantics}' "
                f"(known: {', '.join(SEMANTICS)})")
        if not 0.0 <= self.target_fmr <= 1.0:
            raise ConfigError(
                f"target_fmr must be within [0, 1], got {self.target_fmr}")
        for name, value, floor in (("top_k", self.top_k, 1),
                                   ("steps", self.steps, 1),
                                   ("outputs", self.outputs, 1),
                                   ("max_jobs", self.max_jobs, 1)):
            if value < floor:
                raise ConfigError(f"{name} must be >= {floor}, got {value}")
        for name, value in (("alpha", self.alpha), ("interp", self.interp)):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(
                    f"{name} must be within [0, 1], got {value}")

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        raw = yaml.safe_load(path.read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw, source=str(path))

    @classmethod
    def from_dict(cls, raw: dict, source: str = "config") -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{source}: unknown keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "finetune" in kwargs:
            section = kwargs["finetune"]
            if not isinstance(section, dict):
                raise ConfigError(f"{source}: finetune must be a mapping")
            kwargs["finetune"] = _finetune_from_dict(section)
        if "scorers" in kwargs:
            kwargs["scorers"] = [str(s) for s in kwargs["scorers"]]
        return cls(**kwargs)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Return a copy with the non-None overrides applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if not changes:
            return self
        return dataclasses.replace(self, **changes)

    def resolved_cache_root(self) -> Path:
        """Explicit setting, then the environment, then under out_dir."""
        if self.cache_root:
            return Path(self.cache_root)
        env = os.environ.get(CACHE_ENV_VAR)
        if env:
            return Path(env)
        return Path(self.out_dir) / "cache"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["finetune"]["extra"] = [list(kv) for kv in self.finetune.extra]
        return d

    def config_hash(self) -> str:
        blob = canonical_json(self.to_dict())
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
