"""Evaluation metrics: score sets, thresholds, acceptance matrices,
feature-distribution distance, and quality aggregation."""

from .scores import (ComparisonScoreSet, MatedScore, NonMatedScore,
                     read_scores, write_scores)
from .thresholds import ThresholdSet, calibrate_threshold, calibrate_thresholds
from .mapmatrix import MapMatrix, attempt_match_counts, compute_map
from .frechet import frechet_distance, moments_from_features
from .quality import (QualityCache, QualityRecord, QualityReport,
                      QualityScorer, aggregate_report, format_cell,
                      read_raw_csv, sample_mean_std, score_quality,
                      write_report)

__all__ = [
    "ComparisonScoreSet", "MatedScore", "NonMatedScore",
    "read_scores", "write_scores",
    "ThresholdSet", "calibrate_threshold", "calibrate_thresholds",
    "MapMatrix", "attempt_match_counts", "compute_map",
    "frechet_distance", "moments_from_features",
    "QualityCache", "QualityRecord", "QualityReport", "QualityScorer",
    "aggregate_report", "format_cell", "read_raw_csv", "sample_mean_std",
    "score_quality", "write_report",
]
