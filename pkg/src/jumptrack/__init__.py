"""Multi-target tracking of semi-static objects that occasionally jump between locations.

A Rao-Blackwellized particle filter samples data associations, jumps and
discrete locations per particle and keeps Kalman filters over each target's
position and appearance feature.
"""
from .evaluation import MotReport, baseline_track, hungarian_assign, mot_evaluate, threshold_search
from .filter import ParticleSet, init, posterior, step
from .model import (
    UNKNOWN,
    Association,
    DegenerateProposalError,
    Environment,
    FilterParams,
    JumpTrackError,
    Measurement,
    Round,
    SingularCovarianceError,
    TargetEstimate,
    transition_prior,
)
from .simulator import SimConfig, generate, sweep
from .tracking import run_filter, track

__version__ = "0.1.0"

__all__ = [
    "UNKNOWN", "Association", "DegenerateProposalError", "Environment", "FilterParams",
    "JumpTrackError", "Measurement", "MotReport", "ParticleSet", "Round", "SimConfig",
    "SingularCovarianceError", "TargetEstimate", "baseline_track", "generate",
    "hungarian_assign", "init", "mot_evaluate", "posterior", "run_filter", "step",
    "sweep", "threshold_search", "track", "transition_prior",
]
