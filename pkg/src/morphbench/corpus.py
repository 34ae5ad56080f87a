"""Dataset ingestion, manifests, and similarity-based pair selection.

A corpus manifest binds subject IDs, gender, and pose/expression tags to
image paths. Only frontal images with neutral expression are retained;
everything else is excluded with a recorded reason. Morph pairs are picked
per subject from the most cosine-similar same-gender peers.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DatasetError, MissingArtifactError

log = logging.getLogger(__name__)

GENDERS = ("female", "male", "unknown")


def make_pair_id(subject_a: str, subject_b: str) -> str:
    """Deterministic pair ID from the ordered (min, max) subject IDs."""
    lo, hi = sorted((subject_a, subject_b))
    return f"{lo}__{hi}"


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    subject_id: str
    path: Path
    pose: str  # "frontal" | "other"
    expression: str  # "neutral" | "other"


@dataclass
class SubjectRecord:
    subject_id: str
    gender: str  # "female" | "male" | "unknown"
    images: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise DatasetError(
                f"subject '{self.subject_id}': gender must be one of {GENDERS}, "
                f"got '{self.gender}'"
            )


@dataclass(frozen=True)
class MorphPair:
    pair_id: str
    subject_a: str
    subject_b: str
    similarity: float

    def __post_init__(self):
        if self.subject_a == self.subject_b:
            raise ValueError(f"pair '{self.pair_id}': subjects must differ")


@dataclass
class LayoutDescriptor:
    """Maps files under a dataset root to subjects and pose/expression tags.

    ``pattern`` is a regex matched against each image path relative to the
    dataset root (forward slashes). Named groups:

    * ``subject`` (required) -- subject ID
    * ``image`` (optional) -- image ID; defaults to the path stem
    * ``pose`` (optional) -- value looked up in ``frontal_values``; an
      absent group classifies the image as frontal
    * ``expression`` (optional) -- value looked up in ``neutral_values``;
      an absent group classifies the image as neutral
    * ``gender`` (optional) -- value looked up in ``gender_values``

    ``subject_genders`` assigns genders directly by subject ID and wins over
    the filename-derived value. Subjects with no gender source are "unknown".
    """

    pattern: str
    suffixes: tuple[str, ...] = (".png", ".jpg", ".jpeg")
    frontal_values: tuple[str, ...] = ()
    neutral_values: tuple[str, ...] = ()
    gender_values: Mapping[str, str] = field(default_factory=dict)
    subject_genders: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "LayoutDescriptor":
        known = {
            "pattern", "suffixes", "frontal_values", "neutral_values",
            "gender_values", "subject_genders",
        }
        unknown = set(raw) - known
        if unknown:
            raise DatasetError(f"layout descriptor has unknown keys: {sorted(unknown)}")
        if "pattern" not in raw:
            raise DatasetError("layout descriptor requires a 'pattern' regex")
        kwargs = dict(raw)
        if "suffixes" in kwargs:
            kwargs["suffixes"] = tuple(kwargs["suffixes"])
        for key in ("frontal_values", "neutral_values"):
            if key in kwargs:
                kwargs[key] = tuple(str(v) for v in kwargs[key])
        return cls(**kwargs)


@dataclass
class Manifest:
    """In-memory corpus manifest plus ingestion bookkeeping."""

    dataset: str
    subjects: dict[str, SubjectRecord] = field(default_factory=dict)
    images: dict[str, ImageRecord] = field(default_factory=dict)
    excluded: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)
    selection: dict = field(default_factory=dict)

    @property
    def subject_count(self) -> int:
        return len(self.subjects)

    @property
    def image_count(self) -> int:
        return len(self.images)

    def subject_images(self, subject_id: str) -> list[ImageRecord]:
        subject = self.subjects[subject_id]
        return [self.images[iid] for iid in subject.images]

    def save(self, path: Path | str) -> None:
        """Persist as line-delimited JSON with a leading header record.

        The write is atomic: a temp file in the target directory is
        populated and then renamed over the destination.
        """
        path = Path(path)
        reasons: dict[str, int] = {}
        for _, reason in self.excluded:
            reasons[reason] = reasons.get(reason, 0) + 1
        header = {
            "kind": "header",
            "dataset": self.dataset,
            "subjects": self.subject_count,
            "images": self.image_count,
            "excluded": reasons,
            "selection": self.selection,
        }
        lines = [json.dumps(header, sort_keys=True)]
        for sid in sorted(self.subjects):
            rec = self.subjects[sid]
            lines.append(json.dumps({
                "kind": "subject",
                "subject_id": rec.subject_id,
                "gender": rec.gender,
                "images": rec.images,
            }, sort_keys=True))
        for iid in sorted(self.images):
            rec = self.images[iid]
            lines.append(json.dumps({
                "kind": "image",
                "image_id": rec.image_id,
                "subject_id": rec.subject_id,
                "path": str(rec.path),
                "pose": rec.pose,
                "expression": rec.expression,
            }, sort_keys=True))
        for rel, reason in self.excluded:
            lines.append(json.dumps(
                {"kind": "excluded", "path": rel, "reason": reason}, sort_keys=True))
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: Path | str) -> "Manifest":
        path = Path(path)
        if not path.is_file():
            raise DatasetError(f"manifest not found: {path}")
        manifest: Manifest | None = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                kind = rec.get("kind")
                if kind == "header":
                    manifest = cls(dataset=rec["dataset"],
                                   selection=rec.get("selection", {}))
                elif manifest is None:
                    raise DatasetError(f"{path}:{lineno}: record before header")
                elif kind == "subject":
                    manifest.subjects[rec["subject_id"]] = SubjectRecord(
                        subject_id=rec["subject_id"],
                        gender=rec["gender"],
                        images=list(rec["images"]),
                    )
                elif kind == "image":
                    manifest.images[rec["image_id"]] = ImageRecord(
                        image_id=rec["image_id"],
                        subject_id=rec["subject_id"],
                        path=Path(rec["path"]),
                        pose=rec["pose"],
                        expression=rec["expression"],
                    )
                elif kind == "excluded":
                    manifest.excluded.append((rec["path"], rec["reason"]))
                else:
                    raise DatasetError(f"{path}:{lineno}: unknown record kind '{kind}'")
        if manifest is None:
            raise DatasetError(f"manifest has no header record: {path}")
        return manifest


def ingest(dataset_root: Path | str, layout: LayoutDescriptor,
           dataset_name: str = "dataset") -> Manifest:
    """Scan ``dataset_root`` and build a manifest of frontal/neutral images.

    Every image found under the root is either classified and kept or
    excluded with a recorded reason (pattern-mismatch, pose, expression).

    Raises:
        DatasetError: unreadable root, duplicate image IDs, or zero
            subjects surviving the filter.
    """
    root = Path(dataset_root)
    if not root.is_dir():
        raise DatasetError(f"dataset root is not a readable directory: {root}")
    try:
        regex = re.compile(layout.pattern)
    except re.error as exc:
        raise DatasetError(f"invalid layout pattern: {exc}") from exc

    manifest = Manifest(dataset=dataset_name)
    genders: dict[str, str] = {}
    files = sorted(
        p for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in layout.suffixes
    )
    for file in files:
        rel = file.relative_to(root).as_posix()
        m = regex.search(rel)
        if m is None:
            manifest.excluded.append((rel, "pattern-mismatch"))
            continue
        groups = m.groupdict()
        subject_id = groups.get("subject")
        if not subject_id:
            manifest.excluded.append((rel, "pattern-mismatch"))
            continue
        pose_tag = groups.get("pose")
        pose = "frontal" if pose_tag is None or pose_tag in layout.frontal_values \
            else "other"
        expr_tag = groups.get("expression")
        expression = "neutral" if expr_tag is None or expr_tag in layout.neutral_values \
            else "other"
        if pose != "frontal":
            manifest.excluded.append((rel, "pose"))
            continue
        if expression != "neutral":
            manifest.excluded.append((rel, "expression"))
            continue
        image_id = groups.get("image") or file.stem
        if image_id in manifest.images:
            raise DatasetError(
                f"duplicate image id '{image_id}' "
                f"({manifest.images[image_id].path} vs {file})")
        gender_tag = groups.get("gender")
        if subject_id in layout.subject_genders:
            gender = layout.subject_genders[subject_id]
        elif gender_tag is not None:
            gender = layout.gender_values.get(gender_tag, "unknown")
        else:
            gender = genders.get(subject_id, "unknown")
        genders[subject_id] = gender
        manifest.images[image_id] = ImageRecord(
            image_id=image_id, subject_id=subject_id, path=file,
            pose=pose, expression=expression)

    for image_id in sorted(manifest.images):
        rec = manifest.images[image_id]
        subject = manifest.subjects.get(rec.subject_id)
        if subject is None:
            subject = SubjectRecord(
                subject_id=rec.subject_id,
                gender=genders.get(rec.subject_id, "unknown"))
            manifest.subjects[rec.subject_id] = subject
        subject.images.append(image_id)

    if not manifest.subjects:
        raise DatasetError(f"zero subjects after filtering under {root}")
    return manifest


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    sim = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return min(1.0, max(-1.0, sim))


def select_pairs(manifest: Manifest,
                 embeddings: Mapping[str, np.ndarray],
                 top_k: int = 3,
                 max_pairs: int | None = None) -> list[MorphPair]:
    """Pick each subject's ``top_k`` most cosine-similar same-gender peers.

    Subjects of unknown gender are paired only with each other. Pairs are
    deduplicated on the unordered subject pair and sorted by descending
    similarity with ties broken by pair ID, so identical inputs always
    produce an identical list.

    Raises:
        MissingArtifactError: a subject has no embedding.
        ValueError: ``top_k`` < 1.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    subject_ids = sorted(manifest.subjects)
    for sid in subject_ids:
        if sid not in embeddings:
            raise MissingArtifactError(sid, "embedding")

    by_gender: dict[str, list[str]] = {}
    for sid in subject_ids:
        by_gender.setdefault(manifest.subjects[sid].gender, []).append(sid)

    best: dict[str, MorphPair] = {}
    for gender, members in sorted(by_gender.items()):
        if len(members) < 2:
            log.warning("gender class '%s' has %d subject(s); skipping",
                        gender, len(members))
            continue
        for sid in members:
            sims = [(_cosine(embeddings[sid], embeddings[peer]), peer)
                    for peer in members if peer != sid]
            sims.sort(key=lambda t: (-t[0], t[1]))
            for sim, peer in sims[:top_k]:
                pid = make_pair_id(sid, peer)
                if pid not in best:
                    a, b = sorted((sid, peer))
                    best[pid] = MorphPair(pair_id=pid, subject_a=a,
                                          subject_b=b, similarity=sim)
    pairs = sorted(best.values(), key=lambda p: (-p.similarity, p.pair_id))
    if max_pairs is not None:
        pairs = pairs[:max_pairs]
    return pairs


def write_pairs(pairs: Sequence[MorphPair], path: Path | str) -> None:
    """Write a pair list as CSV with similarity at 6 decimal places."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["pair_id,subject_a,subject_b,similarity"]
    for p in pairs:
        lines.append(f"{p.pair_id},{p.subject_a},{p.subject_b},{p.similarity:.6f}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_pairs(path: Path | str) -> list[MorphPair]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"pair list not found: {path}")
    pairs: list[MorphPair] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "pair_id,subject_a,subject_b,similarity":
            raise DatasetError(f"unrecognized pair list header in {path}: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            pid, a, b, sim = line.split(",")
            pairs.append(MorphPair(pair_id=pid, subject_a=a, subject_b=b,
                                   similarity=float(sim)))
    return pairs
