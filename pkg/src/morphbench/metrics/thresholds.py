"""Per-system decision thresholds calibrated to a false-match-rate target."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .scores import ComparisonScoreSet

DEFAULT_TARGET_FMR = 0.001


def calibrate_threshold(non_mated_scores: Iterable[float],
                        target_fmr: float = DEFAULT_TARGET_FMR) -> float:
    """Smallest threshold whose empirical false-match rate meets the target.

    With the match rule ``score >= threshold``, the FMR at threshold t is
    the fraction of non-mated scores >= t. The candidate set is the scores
    themselves plus +inf; +inf (FMR 0) is returned when no finite score
    qualifies, e.g. when all scores are equal and the target is below 1.
    """
    if not 0.0 <= target_fmr <= 1.0:
        raise ValueError(f"target_fmr must be within [0, 1], got {target_fmr}")
    vals = np.sort(np.asarray(list(non_mated_scores), dtype=np.float64))
    n = vals.size
    if n == 0:
        raise ValueError("cannot calibrate a threshold from zero non-mated scores")
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-mated scores must be finite")
    uniq, first = np.unique(vals, return_index=True)
    fmr = (n - first) / n
    ok = np.nonzero(fmr <= target_fmr)[0]
    if ok.size == 0:
        return math.inf
    return float(uniq[ok[0]])


@dataclass(frozen=True)
class ThresholdSet:
    """Calibrated threshold per recognition system at one FMR target."""

    target_fmr: float
    by_frs: Mapping[str, float]

    def threshold(self, frs_id: str) -> float:
        try:
            return self.by_frs[frs_id]
        except KeyError:
            raise KeyError(
                f"no calibrated threshold for frs '{frs_id}' "
                f"(have: {sorted(self.by_frs)})") from None

    def is_match(self, frs_id: str, score: float) -> bool:
        return score >= self.threshold(frs_id)


def calibrate_thresholds(scores: ComparisonScoreSet,
                         target_fmr: float = DEFAULT_TARGET_FMR) -> ThresholdSet:
    """Calibrate one threshold per system from its non-mated scores."""
    by_frs = {
        frs: calibrate_threshold(scores.non_mated_by_frs(frs), target_fmr)
        for frs in scores.frs_ids
    }
    return ThresholdSet(target_fmr=target_fmr, by_frs=by_frs)
