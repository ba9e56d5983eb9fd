"""Simulation and analysis toolkit for source/target answer agreement.

Models a source language's answer logits as a Gaussian around a mean and the
target's as a mixture of a flattened, noisier copy of that mean and an
unrelated biased mean, then measures how majority voting moves agreement.
"""
__version__ = "0.1.0"

from .bounds import BoundReport, prop1_upper, prop2_lower, prop2_upper, prop3_mode_lower
from .ingest import ResponseRecord, extract_year, normalize_response, parse_response_log
from .metrics import CategoryDistribution, majority_vote, pi_categorical, pi_continuous, transfer_score
from .model import LogitProfile, TargetMixture, normal_cdf, softmax
from .simulate import SimConfig, estimate_agreement, estimate_mode_probability, sweep_ensemble

__all__ = [
    "BoundReport", "CategoryDistribution", "LogitProfile", "ResponseRecord", "SimConfig",
    "TargetMixture", "estimate_agreement", "estimate_mode_probability", "extract_year",
    "majority_vote", "normal_cdf", "normalize_response", "parse_response_log", "pi_categorical",
    "pi_continuous", "prop1_upper", "prop2_lower", "prop2_upper", "prop3_mode_lower", "softmax",
    "sweep_ensemble", "transfer_score",
]
