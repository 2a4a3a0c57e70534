"""Negative binomial generalized additive models for count panels."""

__version__ = "0.1.0"

from .data import Panel, build_panel, load_panel
from .fitter import compare_models, fit_fixed, predict, predict_frame, select_smoothing
from .model_dsl import Family, OffsetRule, parse_formula
from .results import FitResult

__all__ = [
    "Family", "FitResult", "OffsetRule", "Panel", "build_panel", "compare_models", "fit_fixed",
    "load_panel", "parse_formula", "predict", "predict_frame", "select_smoothing",
]
