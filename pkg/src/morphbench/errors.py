"""Error types shared across the workbench.

Each error class carries a short machine-parsable slug and a process exit
code so the CLI can report failures as one-line ``slug: message`` records.
"""

from __future__ import annotations


class MorphbenchError(Exception):
    """Base class for all workbench errors."""

    slug = "error"
    exit_code = 1


class ConfigError(MorphbenchError):
    """Malformed configuration or an unknown backend/scorer name."""

    slug = "config-error"
    exit_code = 2


class DatasetError(MorphbenchError):
    """Unusable dataset input: unreadable root, zero subjects, duplicates."""

    slug = "dataset-error"
    exit_code = 3


class MissingArtifactError(MorphbenchError):
    """A prerequisite cache entry is absent.

    Carries ``(subject_id, stage)`` naming what must be produced first.
    """

    slug = "missing-artifact"
    exit_code = 4

    def __init__(self, subject_id: str, stage: str):
        self.subject_id = subject_id
        self.stage = stage
        super().__init__(f"missing {stage} artifact for subject '{subject_id}'")


class BackendError(MorphbenchError):
    """A pluggable backend failed or violated its contract."""

    slug = "backend-error"
    exit_code = 5


class IntegrityError(MorphbenchError):
    """Stored artifact corruption or a cache collision with differing content."""

    slug = "integrity-error"
    exit_code = 6
