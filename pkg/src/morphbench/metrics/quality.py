"""No-reference image quality scoring and report aggregation.

Scorers are pluggable; each image is scored once per (content, scorer,
scorer version) thanks to a small on-disk cache. Aggregation produces a
methods-by-datasets table per metric with mean and sample standard
deviation, plus raw long-format exports for downstream analysis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

from ..fsutil import atomic_write_text, sha256_file


@runtime_checkable
class QualityScorer(Protocol):
    """Maps an image file to a scalar quality score (higher is better)."""

    name: str
    version: str

    def score(self, path: Path) -> float: ...


@dataclass(frozen=True)
class QualityRecord:
    """Outcome of scoring one image: either a score or an error string."""

    image_id: str
    path: str
    scorer: str
    score: float | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.score is not None


class QualityCache:
    """One tiny JSON file per (image checksum, scorer, version) key."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def key(self, checksum: str, scorer_name: str, scorer_version: str) -> str:
        return f"{checksum[:32]}__{scorer_name}__{scorer_version}"

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.quality.json"

    def get(self, key: str) -> float | None:
        path = self._path(key)
        if not path.is_file():
            return None
        return float(json.loads(path.read_text())["score"])

    def put(self, key: str, score: float) -> None:
        atomic_write_text(self._path(key), json.dumps({"score": score}))


def score_quality(image_paths: Sequence[Path | str],
                  scorer: QualityScorer,
                  image_ids: Sequence[str] | None = None,
                  cache: QualityCache | None = None) -> list[QualityRecord]:
    """Score a batch of images; individual failures do not abort the batch.

    A failure (unreadable file, scorer exception, non-finite score) yields
    a record with ``error`` set instead of a score. Cached scores are
    returned without calling the scorer again.
    """
    if image_ids is None:
        image_ids = [Path(p).stem for p in image_paths]
    if len(image_ids) != len(image_paths):
        raise ValueError(
            f"got {len(image_ids)} image ids for {len(image_paths)} paths")
    records: list[QualityRecord] = []
    for image_id, p in zip(image_ids, image_paths):
        p = Path(p)
        try:
            checksum = sha256_file(p)
        except OSError as exc:
            records.append(QualityRecord(image_id, str(p), scorer.name,
                                         None, f"unreadable: {exc}"))
            continue
        key = None
        if cache is not None:
            key = cache.key(checksum, scorer.name, scorer.version)
            cached = cache.get(key)
            if cached is not None:
                records.append(QualityRecord(image_id, str(p), scorer.name,
                                             cached))
                continue
        try:
            value = float(scorer.score(p))
        except Exception as exc:
            records.append(QualityRecord(
                image_id, str(p), scorer.name, None,
                f"{type(exc).__name__}: {exc}"))
            continue
        if not math.isfinite(value):
            records.append(QualityRecord(image_id, str(p), scorer.name,
                                         None, f"non-finite score {value!r}"))
            continue
        if cache is not None and key is not None:
            cache.put(key, value)
        records.append(QualityRecord(image_id, str(p), scorer.name, value))
    return records


def sample_mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (N-1) standard deviation; a singleton has std 0."""
    n = len(values)
    if n == 0:
        raise ValueError("cannot aggregate zero values")
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.2f}±{std:.2f}"


@dataclass
class QualityReport:
    """Aggregated scores keyed by (metric, method, dataset)."""

    samples: dict[tuple[str, str, str], list[float]] = field(default_factory=dict)

    @property
    def metrics(self) -> list[str]:
        return sorted({k[0] for k in self.samples})

    @property
    def methods(self) -> list[str]:
        return sorted({k[1] for k in self.samples})

    @property
    def datasets(self) -> list[str]:
        return sorted({k[2] for k in self.samples})

    def cell(self, metric: str, method: str, dataset: str) -> str:
        values = self.samples.get((metric, method, dataset))
        if not values:
            return ""
        return format_cell(*sample_mean_std(values))

    def table(self, metric: str) -> str:
        """Methods-by-datasets table for one metric, cells mean+-std."""
        datasets = self.datasets
        lines = [",".join(["method"] + datasets)]
        for method in self.methods:
            row = [method] + [self.cell(metric, method, ds) for ds in datasets]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def raw_csv(self, metric: str) -> str:
        """Long-format export of the underlying scores for one metric."""
        lines = ["method,dataset,score"]
        for (m, method, dataset) in sorted(self.samples):
            if m != metric:
                continue
            for v in self.samples[(m, method, dataset)]:
                lines.append(f"{method},{dataset},{v!r}")
        return "\n".join(lines) + "\n"


def aggregate_report(samples: Mapping[tuple[str, str, str], Sequence[float]],
                     ) -> QualityReport:
    """Build a report from (metric, method, dataset) -> scores groups."""
    clean: dict[tuple[str, str, str], list[float]] = {}
    for key, values in samples.items():
        values = [float(v) for v in values]
        for v in values:
            if not math.isfinite(v):
                raise ValueError(f"group {key}: non-finite score {v!r}")
        if values:
            clean[tuple(key)] = values
    return QualityReport(samples=clean)


def read_raw_csv(path: Path | str) -> dict[tuple[str, str], list[float]]:
    """Load a long-format export back into (method, dataset) -> scores."""
    path = Path(path)
    samples: dict[tuple[str, str], list[float]] = {}
    with path.open("r") as fh:
        header = fh.readline().strip()
        if header != "method,dataset,score":
            raise ValueError(
                f"{path}: unexpected header {header!r}, expected "
                "'method,dataset,score'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            method, dataset, score = line.split(",")
            samples.setdefault((method, dataset), []).append(float(score))
    if not samples:
        raise ValueError(f"{path}: no score rows")
    return samples


def write_report(report: QualityReport, out_dir: Path | str,
                 prefix: str = "quality") -> list[Path]:
    """Write one table and one raw export per metric; returns the paths."""
    out_dir = Path(out_dir)
    paths: list[Path] = []
    for metric in report.metrics:
        table_path = out_dir / f"{prefix}_{metric}.csv"
        atomic_write_text(table_path, report.table(metric))
        paths.append(table_path)
        raw_path = out_dir / f"{prefix}_{metric}_raw.csv"
        atomic_write_text(raw_path, report.raw_csv(metric))
        paths.append(raw_path)
    return paths
