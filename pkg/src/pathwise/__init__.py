"""Pertinent positives and path-sufficient explanations for black-box classifiers."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Domain,
    ExplainInstance,
    PathConfig,
    PathExplanation,
    PathStep,
    SolverConfig,
    componentwise_leq,
    support,
)
from .errors import PathwiseError  # noqa: E402
from .models import Classifier, MLPClassifier, linear_softmax, load_model  # noqa: E402
from .path import solve_psem, validate_path  # noqa: E402
from .solver import fista_solve, hinge_loss, prox_l1_box, solve_pp  # noqa: E402

__all__ = [
    "Classifier",
    "Domain",
    "ExplainInstance",
    "MLPClassifier",
    "PathConfig",
    "PathExplanation",
    "PathStep",
    "PathwiseError",
    "SolverConfig",
    "componentwise_leq",
    "fista_solve",
    "hinge_loss",
    "linear_softmax",
    "load_model",
    "prox_l1_box",
    "solve_pp",
    "solve_psem",
    "support",
    "validate_path",
]
