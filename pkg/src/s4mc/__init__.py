"""Marginal-contextual pseudo-label refinement for semi-supervised segmentation."""

from s4mc.confidence import ConfidenceKind, kappa
from s4mc.refinement import (
    JointKind,
    JointMode,
    RefineConfig,
    SelectionCriterion,
    SelectionKind,
    refine_map,
    refine_probs,
)
from s4mc.scheduling import DpaConfig, alpha_at, assign_pseudo_labels, compute_threshold
from s4mc.tensor_core import IGNORE, ProbMap, neighborhood, quantile

__all__ = [
    "IGNORE",
    "ConfidenceKind",
    "DpaConfig",
    "JointKind",
    "JointMode",
    "ProbMap",
    "RefineConfig",
    "SelectionCriterion",
    "SelectionKind",
    "alpha_at",
    "assign_pseudo_labels",
    "compute_threshold",
    "kappa",
    "neighborhood",
    "quantile",
    "refine_map",
    "refine_probs",
]

__version__ = "0.1.0"
