"""Linear-Gaussian predict/update with an identity observation model.

All functions broadcast over leading batch dimensions: a mean of shape
``(..., d)`` goes with a covariance of shape ``(..., d, d)``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import SingularCovarianceError

LOG_2PI = np.log(2.0 * np.pi)


class Gaussian(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray


def _as_gaussian(g) -> Gaussian:
    mean = np.asarray(g[0], dtype=float)
    cov = np.asarray(g[1], dtype=float)
    if mean.ndim == 0:
        mean = mean.reshape(1)
    if cov.ndim < 2 and mean.shape == (1,):
        cov = cov.reshape(1, 1)
    if cov.shape[-1] != mean.shape[-1] or cov.shape[-2] != mean.shape[-1]:
        raise ValueError(f"mean shape {mean.shape} does not match covariance shape {cov.shape}")
    return Gaussian(mean, cov)


def _as_cov(c, d: int) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        return c * np.eye(d)
    if c.shape[-2:] != (d, d):
        raise ValueError(f"covariance of shape {c.shape} does not match dimension {d}")
    return c


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError("covariance is not positive definite") from None


def log_normal_pdf(y, mean, cov) -> np.ndarray:
    """Log density of N(mean, cov) at y, broadcasting over leading dimensions."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[-1]
    chol = _cholesky(cov)
    diff = y - mean
    chol_b = np.broadcast_to(chol, diff.shape[:-1] + (d, d))
    z = np.linalg.solve(chol_b, diff[..., None])[..., 0]
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
    return -0.5 * ((z * z).sum(-1) + d * LOG_2PI) - 0.5 * np.broadcast_to(logdet, z.shape[:-1])


def log_normal_pdf_points(points, mean, cov) -> np.ndarray:
    """Log density of a batch of Gaussians at a shared set of points.

    ``points`` is ``(M, d)``, ``mean`` is ``(..., d)`` and ``cov`` is
    ``(..., d, d)``; the result is ``(..., M)``.  Each covariance is factored
    once for all M points.
    """
    points = np.asarray(points, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[-1]
    chol = _cholesky(cov)
    diff = np.swapaxes(points - mean[..., None, :], -1, -2)
    z = np.linalg.solve(chol, diff)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
    return -0.5 * ((z * z).sum(-2) + d * LOG_2PI + logdet[..., None])


def predict(g, q_cov) -> Gaussian:
    """Random-walk prediction: the mean is kept and ``q_cov`` is added to the covariance."""
    g = _as_gaussian(g)
    return Gaussian(g.mean, g.cov + _as_cov(q_cov, g.mean.shape[-1]))


def update(g, y, r_cov) -> Gaussian:
    """Kalman measurement update for a direct, noisy observation ``y`` of the state."""
    g = _as_gaussian(g)
    d = g.mean.shape[-1]
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != (d,):
        raise ValueError(f"measurement of shape {y.shape} does not match dimension {d}")
    s = g.cov + _as_cov(r_cov, d)
    try:
        # gain = P S^-1, computed as solve(S, P)^T since both are symmetric
        gain = np.swapaxes(np.linalg.solve(s, g.cov), -1, -2)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError("innovation covariance is singular") from None
    mean = g.mean + (gain @ (y - g.mean)[..., None])[..., 0]
    cov = g.cov - gain @ g.cov
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return Gaussian(mean, cov)


def log_predictive_likelihood(g, y, q_cov, r_cov) -> np.ndarray:
    """log N(y; mean, cov + q_cov + r_cov)."""
    g = _as_gaussian(g)
    d = g.mean.shape[-1]
    return log_normal_pdf(y, g.mean, g.cov + _as_cov(q_cov, d) + _as_cov(r_cov, d))


def predictive_likelihood(g, y, q_cov, r_cov):
    return np.exp(log_predictive_likelihood(g, y, q_cov, r_cov))
