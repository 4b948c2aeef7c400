"""Verification of Markov processes whose parameters come from ML models."""

import json

from ._core import (
    FORMAT_VERSION,
    Error,
    Problem,
    gauss_seidel,
    is_interval_m_matrix,
    load_problem,
    sigmoid_envelope_gap,
    spectral_radius,
)
from . import _core

__all__ = [
    "FORMAT_VERSION",
    "Error",
    "Problem",
    "check_model",
    "gauss_seidel",
    "is_interval_m_matrix",
    "load_problem",
    "sigmoid_envelope_gap",
    "spectral_radius",
    "verify",
]


def verify(problem, sense=None, gap=1e-4, time_limit=None, bounds_only=False, ablate=None,
           force_bilinear=False, segments=8):
    """Solve a problem (a Problem or a path to a problem file); returns the report as a dict."""
    if not isinstance(problem, Problem):
        problem = load_problem(str(problem))
    return json.loads(_core._verify(problem, sense, gap, time_limit, bounds_only, ablate, force_bilinear, segments))


def check_model(path, lower, upper, samples=100, seed=0, segments=8):
    """Compare a model's MILP encoding with direct evaluation on sampled points of a box."""
    return json.loads(_core._check_model(str(path), lower, upper, samples, seed, segments))
