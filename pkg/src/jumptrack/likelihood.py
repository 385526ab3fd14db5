"""Point likelihoods for association hypotheses and the joint likelihood of a round.

The array functions (``log_*``) are what the filter uses; they broadcast over
any leading batch shape (typically particles x targets) and return one value
per measurement in the last axis.  The per-object functions below them are
convenience wrappers with the same semantics.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .gaussian import log_normal_pdf_points
from .model import (
    NONINFORMATIVE_VAR,
    Association,
    Environment,
    FilterParams,
    Measurement,
    TargetEstimate,
    validate_association,
)

LOG_4PI = np.log(4.0 * np.pi)


def log_lik_no_jump(sp_mean, sp_cov, f_mean, f_cov, positions, features, params: FilterParams):
    """Kalman marginal log likelihood of every measurement for targets that stayed.

    Shapes: ``sp_mean (..., 2)``, ``sp_cov (..., 2, 2)``, ``f_mean (..., D)``,
    ``f_cov (..., D, D)``, ``positions (M, 2)``, ``features (M, D)``.
    Returns ``(..., M)``.
    """
    return log_spatial_lik(sp_mean, sp_cov, positions, params) + log_feature_lik(f_mean, f_cov, features, params)


def log_spatial_lik(sp_mean, sp_cov, positions, params: FilterParams):
    """Spatial predictive log density, process and measurement noise included; ``(..., M)``."""
    s_sp = sp_cov + params.spatial_process_cov() + params.spatial_meas_cov()
    return log_normal_pdf_points(positions, sp_mean, s_sp)


def log_feature_lik(f_mean, f_cov, features, params: FilterParams):
    """Feature predictive log density (no process noise on features); ``(..., M)``."""
    s_f = f_cov + params.feature_cov(f_mean.shape[-1])
    return log_normal_pdf_points(features, f_mean, s_f)


def log_lik_jump(f_mean, f_cov, features, area: float, params: FilterParams):
    """Log likelihood for targets that jumped into the observed location: uniform position, Kalman feature."""
    return log_feature_lik(f_mean, f_cov, features, params) - np.log(area)


def log_clutter(area: float, params: FilterParams) -> float:
    return -np.log(area * params.feature_support)


def log_epsilon_pseudo(sp_cov, f_cov, n_targets: int, area: float, params: FilterParams):
    """Log of the expected data density under a target's own predictive distribution, over N.

    This is E[N(Y; mu, C)] / N with Y ~ N(mu, C), C = blockdiag(Sigma_s + Q_s + R_s,
    Sigma_f + R_f), which equals (4 pi)^(-D/2) |C|^(-1/2) / N.  When the target's
    spatial belief is non-informative the spatial factor is the uniform
    density 1/area instead.
    """
    d = f_cov.shape[-1]
    s_sp = sp_cov + params.spatial_process_cov() + params.spatial_meas_cov()
    s_f = f_cov + params.feature_cov(d)
    _, logdet_sp = np.linalg.slogdet(s_sp)
    _, logdet_f = np.linalg.slogdet(s_f)
    spatial = -LOG_4PI - 0.5 * logdet_sp
    uninformed = np.trace(sp_cov, axis1=-2, axis2=-1) >= NONINFORMATIVE_VAR
    spatial = np.where(uninformed, -np.log(area), spatial)
    return spatial - 0.5 * d * LOG_4PI - 0.5 * logdet_f - np.log(n_targets)


def point_likelihood_no_jump(t: TargetEstimate, y: Measurement, params: FilterParams, env: Environment) -> float:
    """Density of ``y`` for a target that did not jump; zero if the target is elsewhere."""
    if t.location != y.location:
        return 0.0
    ll = log_lik_no_jump(
        t.spatial_mean, t.spatial_cov, t.feature_mean, t.feature_cov,
        y.position[None], y.feature[None], params,
    )
    return float(np.exp(ll[0]))


def point_likelihood_jump(t: TargetEstimate, y: Measurement, params: FilterParams, env: Environment) -> float:
    """Density of ``y`` for a target that jumped into the measurement's location."""
    ll = log_lik_jump(t.feature_mean, t.feature_cov, y.feature[None], env.area(y.location), params)
    return float(np.exp(ll[0]))


def clutter_likelihood(y: Measurement, params: FilterParams, env: Environment) -> float:
    return float(np.exp(log_clutter(env.area(y.location), params)))


def epsilon_pseudo_likelihood(
    t: TargetEstimate, n_targets: int, params: FilterParams, env: Environment | None = None, location: int | None = None
) -> float:
    """Independent-proposal likelihood of a target not being detected.

    ``env`` and ``location`` are only needed when the target's spatial belief
    is non-informative (the area of ``location`` then replaces the spatial factor).
    """
    if n_targets < 1:
        raise ValueError("n_targets must be positive")
    area = env.area(location) if env is not None and location is not None else 1.0
    if not t.spatial_informative and (env is None or location is None):
        raise ValueError("non-informative spatial belief needs env and location")
    return float(np.exp(log_epsilon_pseudo(t.spatial_cov, t.feature_cov, n_targets, area, params)))


def joint_log_likelihood(
    measurements: Sequence[Measurement],
    c: Sequence[Association],
    targets: Sequence[TargetEstimate],
    params: FilterParams,
    env: Environment,
) -> float:
    """Log likelihood of a whole round given every target's association.

    Assigned measurements contribute the jump or no-jump point likelihood of
    their target; every other measurement is clutter.
    """
    if len(c) != len(targets):
        raise ValueError("association vector and target list differ in length")
    if not validate_association(c, len(measurements)):
        raise ValueError("invalid association")
    total = 0.0
    assigned = set()
    for a, t in zip(c, targets):
        if a.measurement is None:
            continue
        y = measurements[a.measurement]
        assigned.add(a.measurement)
        if a.jump:
            ll = log_lik_jump(t.feature_mean, t.feature_cov, y.feature[None], env.area(y.location), params)[0]
        elif t.location != y.location:
            ll = -np.inf
        else:
            ll = log_lik_no_jump(
                t.spatial_mean, t.spatial_cov, t.feature_mean, t.feature_cov,
                y.position[None], y.feature[None], params,
            )[0]
        total += ll
    for m, y in enumerate(measurements):
        if m not in assigned:
            total += log_clutter(env.area(y.location), params)
    return float(total)
