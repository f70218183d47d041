"""Evaluation toolkit for cell detection with cell-tissue context."""

from .core import (
    CellClass,
    ClassMetrics,
    CoordinateOutOfBounds,
    DatasetManifest,
    GroundTruthCell,
    InputError,
    MatchCounts,
    ParameterError,
    PatchPairMeta,
    PredictedCell,
    TissueClass,
    TissueGrid,
    TissueProbGrid,
    um_to_px,
    validate_manifest,
)
from .matching import hit_radius_px, match_all, match_class
from .metrics import EvalReport, class_metrics, evaluate_split

__version__ = "0.1.0"
