"""Interventional mediation analysis for longitudinal treatment policies."""

from __future__ import annotations

__version__ = "0.1.0"

from .engine import (
    EffectDecomposition,
    EstimateReport,
    EstimatorConfig,
    decompose_effects,
    effect_modification_slopes,
    estimate_theta,
)
from .errors import ConfigError, DataError, LearnerError, MedseqError, NumericalError
from .learners import EnsembleSpec, default_ensemble
from .panel import PanelDataset, PanelSchema, build_panel, load_panel, load_schema
from .policy import DelayFirstLevel, Identity, PolicyPair, RuleTable, Static
from .scm import ScmSpec, oracle_theta, two_period_design, simulate

__all__ = [
    "ConfigError", "DataError", "DelayFirstLevel", "EffectDecomposition", "EnsembleSpec",
    "EstimateReport", "EstimatorConfig", "Identity", "LearnerError", "MedseqError",
    "NumericalError", "PanelDataset", "PanelSchema", "PolicyPair", "RuleTable", "ScmSpec",
    "Static", "build_panel", "decompose_effects", "default_ensemble",
    "effect_modification_slopes", "estimate_theta", "load_panel", "load_schema",
    "oracle_theta", "two_period_design", "simulate",
]
