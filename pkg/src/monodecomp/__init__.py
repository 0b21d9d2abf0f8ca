"""Adaptive domain-decomposition classification of monotone binary simulators."""
from .decomposer import Campaign, Element, IterationReport, Status
from .estimators import BoundCurve, BoundSurface, Marginal, limit_surface, probability_curve, refine_for_bounds
from .geometry import Box, Domain, Interval
from .monotonicity import Direction, Label, MonotonicityProfile, Provenance
from .oracle import ExternalProcessOracle, SyntheticNoisyThreshold, SyntheticThreshold, evaluate_batch

__all__ = [
    "BoundCurve",
    "BoundSurface",
    "Box",
    "Campaign",
    "Direction",
    "Domain",
    "Element",
    "ExternalProcessOracle",
    "Interval",
    "IterationReport",
    "Label",
    "Marginal",
    "MonotonicityProfile",
    "Provenance",
    "Status",
    "SyntheticNoisyThreshold",
    "SyntheticThreshold",
    "evaluate_batch",
    "limit_surface",
    "probability_curve",
    "refine_for_bounds",
]
__version__ = "0.1.0"
