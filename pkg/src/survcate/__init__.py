"""Metalearners for conditional average treatment effects on survival outcomes."""
from survcate.survival import (
    FoldAssignment,
    StepCurve,
    SurvivalDataset,
    eval_curve,
    kaplan_meier,
    make_folds,
    nelson_aalen_survival,
)

__version__ = "0.1.0"

__all__ = [
    "FoldAssignment",
    "StepCurve",
    "SurvivalDataset",
    "eval_curve",
    "kaplan_meier",
    "make_folds",
    "nelson_aalen_survival",
]
