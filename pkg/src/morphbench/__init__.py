"""Morph generation and evaluation workbench.

Per-subject adapter fine-tuning and identity extraction feed a pluggable
generation backend; the evaluation side calibrates recognition thresholds,
builds acceptance matrices, aggregates quality scores, and measures
feature-distribution distances.
"""

from .errors import (BackendError, ConfigError, DatasetError, IntegrityError,
                     MissingArtifactError, MorphbenchError)
from .corpus import (ImageRecord, LayoutDescriptor, Manifest, MorphPair,
                     SubjectRecord, ingest, make_pair_id, read_pairs,
                     select_pairs, write_pairs)
from .identity import (AntipodalError, IdentityMatrix, IdentityStore,
                       RecognitionBackend, extract_identity, image_list_hash,
                       merge_identities, representative_embedding, slerp)
from .adapters import (AdapterStore, AdapterWeightMap, FineTuneConfig,
                       GenerationBackend, fine_tune, load_adapter,
                       merge_adapters, save_adapter)
from .genpipeline import (AblationConfig, GenerationRequest, MorphArtifact,
                          RunManifest, RunReport, VARIANTS, build_request,
                          finetune_config_for_variant, generate, run_batch)
from .config import DEFAULT_PROMPT, RunConfig
from .metrics import (ComparisonScoreSet, MapMatrix, MatedScore,
                      NonMatedScore, QualityRecord, QualityScorer,
                      ThresholdSet, aggregate_report, attempt_match_counts,
                      calibrate_threshold, calibrate_thresholds, compute_map,
                      format_cell, frechet_distance, moments_from_features,
                      read_scores, score_quality, write_scores)

__version__ = "0.1.0"

__all__ = [
    "AblationConfig", "AdapterStore", "AdapterWeightMap", "AntipodalError",
    "BackendError", "ComparisonScoreSet", "ConfigError", "DEFAULT_PROMPT",
    "DatasetError", "FineTuneConfig", "GenerationBackend",
    "GenerationRequest", "IdentityMatrix", "IdentityStore", "ImageRecord",
    "IntegrityError", "LayoutDescriptor", "Manifest", "MapMatrix",
    "MatedScore", "MissingArtifactError", "MorphArtifact", "MorphPair",
    "MorphbenchError", "NonMatedScore", "QualityRecord", "QualityScorer",
    "RecognitionBackend", "RunConfig", "RunManifest", "RunReport",
    "SubjectRecord", "ThresholdSet", "VARIANTS", "aggregate_report",
    "attempt_match_counts", "build_request", "calibrate_threshold",
    "calibrate_thresholds", "compute_map", "extract_identity",
    "fine_tune", "finetune_config_for_variant", "format_cell",
    "frechet_distance", "generate", "image_list_hash", "ingest",
    "load_adapter", "make_pair_id", "merge_adapters", "merge_identities",
    "moments_from_features", "read_pairs", "read_scores",
    "representative_embedding", "run_batch", "save_adapter", "score_quality",
    "select_pairs", "slerp", "write_pairs", "write_scores",
]
