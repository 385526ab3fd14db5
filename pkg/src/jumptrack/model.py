"""Domain types, filter parameters and the discrete association prior.

The association prior gives, for one target, the probability of each
combination of jump action, resulting location and measurement assignment
given the target's previous location and the location observed in the
current round.  Per target the combinations are laid out as *rows*:

    ========================  =====  ============  ===========
    row index                 jump   location      assignment
    ========================  =====  ============  ===========
    0 .. M-1                  no     previous      measurement
    M .. 2M-1                 yes    observed      measurement
    2M                        no     previous      none (eps)
    2M+1                      yes    observed      none (eps)
    2M+2                      yes    unknown       none (eps)
    ========================  =====  ============  ===========

The combination (jump, unknown, measurement) always has zero mass and is
not given a row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

UNKNOWN = -1
"""Sentinel location id for a target believed to have jumped somewhere unobserved."""

NONINFORMATIVE_VAR = 1e6
"""Spatial variance (m^2) used to represent a position belief with no information."""

SAMPLER_MODES = ("rejection", "gibbs-proposal", "gibbs-proposal-and-weights")


class JumpTrackError(Exception):
    """Base class for errors raised by this package."""


class DegenerateProposalError(JumpTrackError):
    """All association hypotheses for a target have zero weight."""


class SingularCovarianceError(JumpTrackError, ValueError):
    """A covariance that must be positive definite is not."""


def _check_spd(mat: np.ndarray, name: str) -> None:
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise ValueError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(f"{name} is not positive definite") from None


@dataclass(frozen=True)
class Environment:
    """The discrete locations a target can occupy, with their floor areas in m^2."""

    areas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "areas", tuple(float(a) for a in self.areas))
        if len(self.areas) < 1:
            raise ValueError("environment needs at least one location")
        if any(not np.isfinite(a) or a <= 0 for a in self.areas):
            raise ValueError("location areas must be positive")

    @classmethod
    def uniform(cls, n_locations: int, area: float = 20.0) -> "Environment":
        return cls((area,) * n_locations)

    @property
    def n_locations(self) -> int:
        return len(self.areas)

    def check_location(self, loc: int, allow_unknown: bool = True) -> None:
        if loc == UNKNOWN and allow_unknown:
            return
        if not 0 <= loc < self.n_locations:
            raise ValueError(f"invalid location id {loc}")

    def area(self, loc: int) -> float:
        self.check_location(loc, allow_unknown=False)
        return self.areas[loc]


@dataclass(frozen=True)
class FilterParams:
    """Tuning of the tracker.

    ``feature_meas_cov`` may be given as a scalar (meaning a multiple of the
    identity in whatever feature dimension the data has) or as a full matrix.
    """

    p_jump: float = 0.03
    p_meas: float = 0.98
    sigma_q: float = 0.35
    sigma_r: float = 0.15
    feature_meas_cov: float | np.ndarray = 1.0
    feature_support: float = 5.0
    num_particles: int = 300
    sampler_mode: str = "rejection"
    gibbs_burn_in: int = 100
    gibbs_z_samples: int = 100
    resample_ess_fraction: float = 0.5
    rng_seed: int = 0
    max_rejection_retries: int = 1000

    def __post_init__(self):
        for name in ("p_jump", "p_meas"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {p}")
        if self.sigma_q < 0 or self.sigma_r <= 0:
            raise ValueError("noise standard deviations must be positive")
        if self.feature_support <= 0:
            raise ValueError("feature_support must be positive")
        if self.num_particles < 1:
            raise ValueError("num_particles must be positive")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ValueError(f"unknown sampler_mode {self.sampler_mode!r}")
        if self.gibbs_burn_in < 1 or self.gibbs_z_samples < 1:
            raise ValueError("gibbs iteration counts must be positive")
        if not 0.0 < self.resample_ess_fraction <= 1.0:
            raise ValueError("resample_ess_fraction must lie in (0, 1]")
        if self.max_rejection_retries < 1:
            raise ValueError("max_rejection_retries must be positive")
        rf = np.asarray(self.feature_meas_cov, dtype=float)
        if rf.ndim == 0:
            if rf <= 0:
                raise ValueError("feature_meas_cov must be positive")
        else:
            if rf.ndim != 2 or rf.shape[0] != rf.shape[1]:
                raise ValueError("feature_meas_cov must be a square matrix")
            _check_spd(rf, "feature_meas_cov")
            rf = rf.copy()
            rf.setflags(write=False)
        object.__setattr__(self, "feature_meas_cov", rf if rf.ndim else float(rf))

    def spatial_process_cov(self) -> np.ndarray:
        return self.sigma_q**2 * np.eye(2)

    def spatial_meas_cov(self) -> np.ndarray:
        return self.sigma_r**2 * np.eye(2)

    def feature_cov(self, dim: int) -> np.ndarray:
        rf = self.feature_meas_cov
        if np.ndim(rf) == 0:
            return float(rf) * np.eye(dim)
        if rf.shape != (dim, dim):
            raise ValueError(f"feature_meas_cov has shape {rf.shape}, data has dimension {dim}")
        return np.array(rf)

    def __eq__(self, other):
        if not isinstance(other, FilterParams):
            return NotImplemented
        a, b = vars(self), vars(other)
        return all(np.array_equal(a[k], b[k]) if k == "feature_meas_cov" else a[k] == b[k] for k in a)

    __hash__ = None


@dataclass(frozen=True)
class Measurement:
    """One detection: 2-D position, feature descriptor and the location it was seen in."""

    position: np.ndarray
    feature: np.ndarray
    location: int
    time_step: int = 0
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=float).reshape(-1))
        if self.location == UNKNOWN:
            raise ValueError("a measurement cannot be in the unknown location")


@dataclass(frozen=True)
class Round:
    """All detections from one time step; every one of them lies in ``location``."""

    time_step: int
    location: int
    measurements: tuple[Measurement, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))
        for m in self.measurements:
            if m.location != self.location:
                raise ValueError("measurement location differs from the observed location")

    def __len__(self):
        return len(self.measurements)

    def positions(self) -> np.ndarray:
        return np.array([m.position for m in self.measurements]).reshape(len(self), 2)

    def features(self, dim: int) -> np.ndarray:
        return np.array([m.feature for m in self.measurements]).reshape(len(self), dim)


@dataclass(frozen=True)
class TargetEstimate:
    """Gaussian belief over one target's position and feature, plus its location."""

    spatial_mean: np.ndarray
    spatial_cov: np.ndarray
    feature_mean: np.ndarray
    feature_cov: np.ndarray
    location: int

    def __post_init__(self):
        for name in ("spatial_mean", "spatial_cov", "feature_mean", "feature_cov"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def spatial_informative(self) -> bool:
        return bool(np.trace(self.spatial_cov) < NONINFORMATIVE_VAR)


class Association(NamedTuple):
    """Assignment of one target in one round.

    ``measurement`` is an index into the round's measurements or None for no
    detection; ``jump`` is the action; ``location`` the resulting location.
    """

    measurement: int | None
    jump: bool
    location: int


AssociationVector = tuple[Association, ...]


class PriorTable(NamedTuple):
    """One row of the association prior table.

    Fields ending in ``_meas`` are per-measurement probabilities; the total
    mass of such a column is the value times the number of measurements.
    """

    stay_meas: float
    stay_none: float
    jump_observed_meas: float
    jump_observed_none: float
    jump_unknown_meas: float
    jump_unknown_none: float

    def total_mass(self, m_count: int) -> float:
        per_meas = self.stay_meas + self.jump_observed_meas + self.jump_unknown_meas
        return m_count * per_meas + self.stay_none + self.jump_observed_none + self.jump_unknown_none


def transition_prior(
    prev_loc: int, obs_loc: int, m_count: int, env: Environment, params: FilterParams
) -> PriorTable:
    """Prior over (jump, location, assignment) for one target.

    With no measurements in the round, the detection mass is folded into the
    corresponding no-detection cell so the row stays normalized.
    """
    if m_count < 0:
        raise ValueError("m_count must be non-negative")
    env.check_location(prev_loc)
    env.check_location(obs_loc, allow_unknown=False)
    pj, pm, nl = params.p_jump, params.p_meas, env.n_locations
    if prev_loc == UNKNOWN:
        pj = 1.0
    if m_count == 0:
        detect, miss = 0.0, 1.0
    else:
        detect, miss = pm / m_count, 1.0 - pm
    if prev_loc == obs_loc:
        stay_meas, stay_none = (1 - pj) * detect, (1 - pj) * miss
    else:
        stay_meas, stay_none = 0.0, 1 - pj
    return PriorTable(
        stay_meas=stay_meas,
        stay_none=stay_none,
        jump_observed_meas=pj * detect / nl,
        jump_observed_none=pj * miss / nl,
        jump_unknown_meas=0.0,
        jump_unknown_none=pj * (nl - 1) / nl,
    )


def n_rows(m_count: int) -> int:
    return 2 * m_count + 3


def row_measurements(m_count: int) -> np.ndarray:
    """Measurement index of every row, -1 for rows without a measurement."""
    m = np.arange(m_count)
    return np.concatenate([m, m, [-1, -1, -1]]).astype(np.intp)


def prior_rows(
    prev_locs: np.ndarray, obs_loc: int, m_count: int, env: Environment, params: FilterParams
) -> np.ndarray:
    """Vectorized association prior: rows (see module docstring) for every entry of ``prev_locs``."""
    prev = np.asarray(prev_locs)
    pj, pm, nl = params.p_jump, params.p_meas, env.n_locations
    pj_arr = np.where(prev == UNKNOWN, 1.0, pj)
    if m_count == 0:
        detect, miss = 0.0, 1.0
    else:
        detect, miss = pm / m_count, 1.0 - pm
    here = prev == obs_loc
    out = np.empty(prev.shape + (n_rows(m_count),))
    out[..., :m_count] = np.where(here, (1 - pj_arr) * detect, 0.0)[..., None]
    out[..., m_count:2 * m_count] = (pj_arr * detect / nl)[..., None]
    out[..., 2 * m_count] = np.where(here, (1 - pj_arr) * miss, 1 - pj_arr)
    out[..., 2 * m_count + 1] = pj_arr * miss / nl
    out[..., 2 * m_count + 2] = pj_arr * (nl - 1) / nl
    return out


def row_to_association(row: int, m_count: int, prev_loc: int, obs_loc: int) -> Association:
    if row < m_count:
        return Association(int(row), False, prev_loc)
    if row < 2 * m_count:
        return Association(int(row - m_count), True, obs_loc)
    k = row - 2 * m_count
    if k == 0:
        return Association(None, False, prev_loc)
    if k == 1:
        return Association(None, True, obs_loc)
    if k == 2:
        return Association(None, True, UNKNOWN)
    raise ValueError(f"row {row} out of range for {m_count} measurements")


def association_to_row(a: Association, m_count: int, prev_loc: int, obs_loc: int) -> int:
    """Inverse of :func:`row_to_association`; raises ValueError for impossible combinations."""
    if a.measurement is not None:
        if not 0 <= a.measurement < m_count:
            raise ValueError("measurement index out of range")
        if a.jump:
            if a.location != obs_loc:
                raise ValueError("a jump with a detection must land in the observed location")
            return m_count + a.measurement
        if a.location != prev_loc or prev_loc != obs_loc:
            raise ValueError("a detected target that did not jump must stay in the observed location")
        return a.measurement
    if not a.jump:
        if a.location != prev_loc:
            raise ValueError("no jump implies the location is unchanged")
        return 2 * m_count
    if a.location == obs_loc:
        return 2 * m_count + 1
    if a.location == UNKNOWN:
        return 2 * m_count + 2
    raise ValueError("a jump without detection lands in the observed or unknown location")


def validate_association(
    c: Sequence[Association],
    m_count: int,
    prev_locs: Sequence[int] | None = None,
    obs_loc: int | None = None,
) -> bool:
    """True iff no measurement is shared and every entry is self-consistent.

    Location consistency is only checked when previous locations and the
    observed location are supplied.
    """
    used = set()
    for j, a in enumerate(c):
        if a.measurement is not None:
            if not 0 <= a.measurement < m_count or a.measurement in used:
                return False
            used.add(a.measurement)
            if obs_loc is not None and a.location != obs_loc:
                return False
        if prev_locs is not None:
            prev = prev_locs[j]
            if not a.jump and (a.location != prev or prev == UNKNOWN):
                return False
            if obs_loc is not None:
                try:
                    association_to_row(a, m_count, prev, obs_loc)
                except ValueError:
                    return False
    return True
