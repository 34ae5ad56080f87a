"""Comparison score containers and the delimited score-file format.

A score set bundles mated scores (morph vs. each contributing subject,
over repeated verification attempts and several recognition systems) with
non-mated impostor scores used to calibrate per-system thresholds.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

ROLES = ("a", "b")

CSV_HEADER = ["kind", "morph_id", "subject_role", "frs_id", "attempt", "score"]


@dataclass(frozen=True)
class MatedScore:
    """One morph-vs-subject comparison score.

    ``subject_role`` says which side of the contributing pair was compared
    ("a" or "b"); ``attempt`` is the 1-based verification attempt index.
    """

    morph_id: str
    subject_role: str
    frs_id: str
    attempt: int
    score: float


@dataclass(frozen=True)
class NonMatedScore:
    """One zero-effort impostor score for a recognition system."""

    frs_id: str
    score: float


@dataclass
class ComparisonScoreSet:
    """Validated bundle of mated and non-mated scores.

    The mated side must form a full grid: every morph has scores for both
    subject roles under every recognition system present, and each
    (morph, role, system) cell holds attempts exactly 1..T for a single T
    shared by the whole set. Every system with mated scores needs at
    least one non-mated score, otherwise no threshold can be calibrated.
    """

    mated: list[MatedScore] = field(default_factory=list)
    non_mated: list[NonMatedScore] = field(default_factory=list)

    def __post_init__(self):
        for s in self.mated:
            if s.subject_role not in ROLES:
                raise ValueError(
                    f"morph '{s.morph_id}': unknown subject role "
                    f"'{s.subject_role}' (expected one of {ROLES})")
            if s.attempt < 1:
                raise ValueError(
                    f"morph '{s.morph_id}' role '{s.subject_role}' frs "
                    f"'{s.frs_id}': attempt index {s.attempt} is not >= 1")
            if not math.isfinite(s.score):
                raise ValueError(
                    f"morph '{s.morph_id}' role '{s.subject_role}' frs "
                    f"'{s.frs_id}' attempt {s.attempt}: non-finite score")
        for s in self.non_mated:
            if not math.isfinite(s.score):
                raise ValueError(
                    f"non-mated score for frs '{s.frs_id}' is non-finite")
        self._validate_grid()

    def _validate_grid(self) -> None:
        if not self.mated:
            return
        t = self.attempts
        cells: dict[tuple[str, str, str], list[int]] = {}
        for s in self.mated:
            cells.setdefault((s.morph_id, s.subject_role, s.frs_id), []).append(s.attempt)
        expected = set(range(1, t + 1))
        for (morph, role, frs), attempts in cells.items():
            got = set(attempts)
            if len(attempts) != len(got):
                dup = sorted(a for a in got if attempts.count(a) > 1)
                raise ValueError(
                    f"morph '{morph}' role '{role}' frs '{frs}': duplicate "
                    f"attempt(s) {dup}")
            if got != expected:
                raise ValueError(
                    f"morph '{morph}' role '{role}' frs '{frs}': attempts "
                    f"{sorted(got)} do not cover 1..{t}")
        frs_with_non_mated = {s.frs_id for s in self.non_mated}
        for morph in self.morph_ids:
            for role in ROLES:
                for frs in self.frs_ids:
                    if (morph, role, frs) not in cells:
                        raise ValueError(
                            f"morph '{morph}' role '{role}' frs '{frs}': "
                            "no scores")
        for frs in self.frs_ids:
            if frs not in frs_with_non_mated:
                raise ValueError(
                    f"frs '{frs}' has mated scores but no non-mated scores "
                    "to calibrate a threshold from")

    @property
    def morph_ids(self) -> list[str]:
        return sorted({s.morph_id for s in self.mated})

    @property
    def frs_ids(self) -> list[str]:
        """Systems with mated scores, or non-mated-only systems if none."""
        ids = {s.frs_id for s in self.mated}
        if not ids:
            ids = {s.frs_id for s in self.non_mated}
        return sorted(ids)

    @property
    def attempts(self) -> int:
        """Number of verification attempts T (0 for an empty mated side)."""
        if not self.mated:
            return 0
        return max(s.attempt for s in self.mated)

    def non_mated_by_frs(self, frs_id: str) -> list[float]:
        return [s.score for s in self.non_mated if s.frs_id == frs_id]


def write_scores(scores: ComparisonScoreSet, path: Path | str) -> None:
    """Write the delimited score file (header plus one row per score)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for s in scores.mated:
                writer.writerow(["mated", s.morph_id, s.subject_role,
                                 s.frs_id, s.attempt, repr(s.score)])
            for s in scores.non_mated:
                writer.writerow(["non_mated", "", "", s.frs_id, "",
                                 repr(s.score)])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_scores(path: Path | str) -> ComparisonScoreSet:
    path = Path(path)
    mated: list[MatedScore] = []
    non_mated: list[NonMatedScore] = []
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(
                f"{path}: unexpected header {header!r}, expected {CSV_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected "
                                 f"{len(CSV_HEADER)} fields, got {len(row)}")
            kind, morph_id, role, frs_id, attempt, score = row
            if kind == "mated":
                mated.append(MatedScore(morph_id=morph_id, subject_role=role,
                                        frs_id=frs_id, attempt=int(attempt),
                                        score=float(score)))
            elif kind == "non_mated":
                non_mated.append(NonMatedScore(frs_id=frs_id,
                                               score=float(score)))
            else:
                raise ValueError(f"{path}:{lineno}: unknown score kind '{kind}'")
    return ComparisonScoreSet(mated=mated, non_mated=non_mated)
