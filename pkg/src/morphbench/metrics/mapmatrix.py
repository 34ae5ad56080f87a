"""Morphing-attack-potential matrix over attempts and recognition systems.

Cell (r, c) of the matrix is the percentage of morphs that are accepted
by at least c systems, where a system accepts a morph only if it matched
on at least r of the verification attempts, for both contributing
subjects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .scores import ComparisonScoreSet
from .thresholds import ThresholdSet

SEMANTICS = ("per-subject-min", "same-attempt")


def attempt_match_counts(scores: ComparisonScoreSet,
                         thresholds: ThresholdSet,
                         semantics: str = "per-subject-min",
                         ) -> dict[tuple[str, str], int]:
    """Per (morph, system) count of attempts on which the morph matched.

    "per-subject-min" counts matching attempts separately for each of the
    two contributing subjects and keeps the smaller count, so a morph is
    credited with r attempts only if it reached r against both subjects.
    "same-attempt" requires both subjects to match on the same attempt
    index and counts those attempts.
    """
    if semantics not in SEMANTICS:
        raise ValueError(
            f"unknown semantics '{semantics}' (expected one of {SEMANTICS})")
    by_cell: dict[tuple[str, str, str], dict[int, float]] = {}
    for s in scores.mated:
        by_cell.setdefault((s.morph_id, s.subject_role, s.frs_id), {})[s.attempt] = s.score
    t = scores.attempts
    out: dict[tuple[str, str], int] = {}
    for morph in scores.morph_ids:
        for frs in scores.frs_ids:
            tau = thresholds.threshold(frs)
            sa = by_cell[(morph, "a", frs)]
            sb = by_cell[(morph, "b", frs)]
            if semantics == "per-subject-min":
                ca = sum(1 for i in range(1, t + 1) if sa[i] >= tau)
                cb = sum(1 for i in range(1, t + 1) if sb[i] >= tau)
                out[(morph, frs)] = min(ca, cb)
            else:
                out[(morph, frs)] = sum(
                    1 for i in range(1, t + 1)
                    if sa[i] >= tau and sb[i] >= tau)
    return out


@dataclass
class MapMatrix:
    """Computed matrix plus everything needed to reproduce it."""

    values: list[list[float]]
    attempts: int
    frs_ids: list[str]
    semantics: str
    morph_count: int
    target_fmr: float
    thresholds: dict[str, float]

    def value(self, min_attempts: int, min_systems: int) -> float:
        return self.values[min_attempts - 1][min_systems - 1]

    def to_table(self) -> str:
        """Delimited table, one decimal per cell.

        Rows are the minimum attempt count r, columns the minimum number
        of accepting systems c.
        """
        header = ["attempts"] + [str(c) for c in range(1, len(self.frs_ids) + 1)]
        lines = [",".join(header)]
        for r in range(1, self.attempts + 1):
            row = [str(r)] + [f"{v:.1f}" for v in self.values[r - 1]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        """JSON-safe structured record (infinite thresholds become "inf")."""
        thresholds = {
            frs: (tau if math.isfinite(tau) else "inf")
            for frs, tau in self.thresholds.items()
        }
        return {
            "attempts": self.attempts,
            "frs_ids": list(self.frs_ids),
            "semantics": self.semantics,
            "morph_count": self.morph_count,
            "target_fmr": self.target_fmr,
            "thresholds": thresholds,
            "values": [list(row) for row in self.values],
        }

    @classmethod
    def from_record(cls, record: dict) -> "MapMatrix":
        thresholds = {
            frs: (math.inf if tau == "inf" else float(tau))
            for frs, tau in record["thresholds"].items()
        }
        return cls(values=[list(map(float, row)) for row in record["values"]],
                   attempts=int(record["attempts"]),
                   frs_ids=list(record["frs_ids"]),
                   semantics=record["semantics"],
                   morph_count=int(record["morph_count"]),
                   target_fmr=float(record["target_fmr"]),
                   thresholds=thresholds)


def compute_map(scores: ComparisonScoreSet,
                thresholds: ThresholdSet,
                semantics: str = "per-subject-min") -> MapMatrix:
    """Build the matrix from a validated score set and thresholds.

    values[r-1][c-1] = 100 * |{morphs accepted by >= c systems at >= r
    attempts each}| / morph_count. Both axes are monotone non-increasing.
    """
    morphs = scores.morph_ids
    if not morphs:
        raise ValueError("score set has no mated scores to build a matrix from")
    counts = attempt_match_counts(scores, thresholds, semantics)
    frs_ids = scores.frs_ids
    t = scores.attempts
    n = len(morphs)
    values: list[list[float]] = []
    for r in range(1, t + 1):
        row = []
        for c in range(1, len(frs_ids) + 1):
            hits = sum(
                1 for m in morphs
                if sum(1 for f in frs_ids if counts[(m, f)] >= r) >= c)
            row.append(100.0 * hits / n)
        values.append(row)
    return MapMatrix(values=values, attempts=t, frs_ids=list(frs_ids),
                     semantics=semantics, morph_count=n,
                     target_fmr=thresholds.target_fmr,
                     thresholds=dict(thresholds.by_frs))
