"""Rao-Blackwellized particle filter over associations, jumps and locations.

Each particle carries, for every target, a Gaussian over position and one
over feature together with a discrete location.  A step samples new
associations per particle, applies the corresponding Kalman or jump
updates, multiplies the weight by the proposal normalizer and resamples
when the effective sample size drops.

Particles are stored as stacked arrays.  Randomness is drawn from one
generator per (seed, time step, particle) and work is split into fixed-size
chunks, so results do not depend on how many threads process the chunks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .gaussian import update as kalman_update
from .model import (
    NONINFORMATIVE_VAR,
    UNKNOWN,
    AssociationVector,
    Environment,
    FilterParams,
    Round,
    TargetEstimate,
    association_to_row,
    row_measurements,
    validate_association,
)
from .sampler import (
    gibbs_run,
    log_z_harmonic,
    log_z_independent_rows,
    rejection_rows,
    round_scores,
)

CHUNK = 256
_SEED_MASK = (1 << 64) - 1


@dataclass
class Particle:
    targets: list[TargetEstimate]
    log_weight: float


@dataclass
class ParticleSet:
    """Stacked particle state; ``P`` particles with ``N`` targets each."""

    sp_mean: np.ndarray  # (P, N, 2)
    sp_cov: np.ndarray  # (P, N, 2, 2)
    f_mean: np.ndarray  # (P, N, D)
    f_cov: np.ndarray  # (P, N, D, D)
    loc: np.ndarray  # (P, N)
    log_w: np.ndarray  # (P,)
    time_step: int = 0

    def __len__(self):
        return self.log_w.shape[0]

    @property
    def n_targets(self) -> int:
        return self.loc.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.f_mean.shape[2]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))

    def particle(self, i: int) -> Particle:
        targets = [
            TargetEstimate(
                self.sp_mean[i, j].copy(), self.sp_cov[i, j].copy(),
                self.f_mean[i, j].copy(), self.f_cov[i, j].copy(), int(self.loc[i, j]),
            )
            for j in range(self.n_targets)
        ]
        return Particle(targets, float(self.log_w[i]))

    @classmethod
    def from_particles(cls, particles: Sequence[Particle], time_step: int = 0) -> "ParticleSet":
        return cls(
            np.array([[t.spatial_mean for t in p.targets] for p in particles], dtype=float),
            np.array([[t.spatial_cov for t in p.targets] for p in particles], dtype=float),
            np.array([[t.feature_mean for t in p.targets] for p in particles], dtype=float),
            np.array([[t.feature_cov for t in p.targets] for p in particles], dtype=float),
            np.array([[t.location for t in p.targets] for p in particles], dtype=np.intp),
            np.array([p.log_weight for p in particles], dtype=float),
            time_step,
        )

    def take(self, idx: np.ndarray) -> "ParticleSet":
        return ParticleSet(
            self.sp_mean[idx], self.sp_cov[idx], self.f_mean[idx], self.f_cov[idx],
            self.loc[idx], self.log_w[idx], self.time_step,
        )


def init(
    initial_positions: Sequence[tuple[int, Sequence[float]]],
    initial_features: Sequence[Sequence[float]],
    params: FilterParams,
    env: Environment,
) -> ParticleSet:
    """Identical particles with every target at its given position and feature.

    The initial beliefs are treated as a first observation: their covariances
    are the spatial and feature measurement noise.
    """
    n = len(initial_positions)
    if n < 1:
        raise ValueError("need at least one target")
    if len(initial_features) != n:
        raise ValueError("one feature vector per target is required")
    locs = np.array([loc for loc, _ in initial_positions], dtype=np.intp)
    for loc in locs:
        env.check_location(int(loc), allow_unknown=False)
    pos = np.array([np.asarray(p, dtype=float) for _, p in initial_positions])
    if pos.shape != (n, 2):
        raise ValueError("initial positions must be 2-vectors")
    feats = np.array([np.asarray(f, dtype=float) for f in initial_features])
    if feats.ndim != 2:
        raise ValueError("initial features must share one dimension")
    d = feats.shape[1]
    p = params.num_particles
    return ParticleSet(
        np.broadcast_to(pos, (p, n, 2)).copy(),
        np.broadcast_to(params.spatial_meas_cov(), (p, n, 2, 2)).copy(),
        np.broadcast_to(feats, (p, n, d)).copy(),
        np.broadcast_to(params.feature_cov(d), (p, n, d, d)).copy(),
        np.broadcast_to(locs, (p, n)).copy(),
        np.full(p, -np.log(p)),
        0,
    )


def apply_rows(
    sp_mean, sp_cov, f_mean, f_cov, loc, rows: np.ndarray, positions, features,
    obs_loc: int, params: FilterParams,
):
    """Vectorized state update for association rows ``(P, N)``; returns new arrays."""
    m = len(positions)
    d = f_mean.shape[-1]
    rows = np.asarray(rows)
    stay_meas = rows < m
    jump_meas = (rows >= m) & (rows < 2 * m)
    has_meas = stay_meas | jump_meas
    jump_obs = rows == 2 * m + 1
    jump_unknown = rows == 2 * m + 2

    r_s = params.spatial_meas_cov()
    pred_cov = sp_cov + params.spatial_process_cov()
    new_sp_mean = sp_mean.copy()
    new_sp_cov = pred_cov.copy()
    new_f_mean = f_mean
    new_f_cov = f_cov
    if m and has_meas.any():
        meas_idx = np.where(has_meas, row_measurements(m)[rows], 0)
        y_s = positions[meas_idx]
        y_f = features[meas_idx]
        upd_mean, upd_cov = kalman_update((sp_mean, pred_cov), y_s, r_s)
        new_sp_mean = np.where(stay_meas[..., None], upd_mean, new_sp_mean)
        new_sp_cov = np.where(stay_meas[..., None, None], upd_cov, new_sp_cov)
        new_sp_mean = np.where(jump_meas[..., None], y_s, new_sp_mean)
        new_sp_cov = np.where(jump_meas[..., None, None], r_s, new_sp_cov)
        fu_mean, fu_cov = kalman_update((f_mean, f_cov), y_f, params.feature_cov(d))
        new_f_mean = np.where(has_meas[..., None], fu_mean, f_mean)
        new_f_cov = np.where(has_meas[..., None, None], fu_cov, f_cov)
    lost = (jump_obs | jump_unknown)[..., None, None]
    new_sp_cov = np.where(lost, NONINFORMATIVE_VAR * np.eye(2), new_sp_cov)
    new_loc = np.where(jump_meas | jump_obs, obs_loc, loc)
    new_loc = np.where(jump_unknown, UNKNOWN, new_loc)
    return new_sp_mean, new_sp_cov, new_f_mean.copy(), new_f_cov.copy(), new_loc.astype(np.intp)


def apply_association(
    p: Particle, c: AssociationVector, rnd: Round, params: FilterParams
) -> Particle:
    """Apply one association vector to a single particle's targets.

    Stay + detection: predict then Kalman update.  Stay without detection:
    predict only.  Jump + detection: position reset to the measurement with
    measurement noise covariance.  Jump without detection: position belief
    becomes non-informative.  Features are updated whenever there is a
    detection and otherwise kept.
    """
    m = len(rnd)
    prev = [t.location for t in p.targets]
    if len(c) != len(p.targets) or not validate_association(c, m, prev, rnd.location):
        raise ValueError("invalid association")
    ps = ParticleSet.from_particles([p])
    rows = np.array([[association_to_row(a, m, t, rnd.location) for a, t in zip(c, prev)]])
    d = ps.feature_dim
    out = apply_rows(
        ps.sp_mean, ps.sp_cov, ps.f_mean, ps.f_cov, ps.loc, rows,
        rnd.positions(), rnd.features(d), rnd.location, params,
    )
    return ParticleSet(*out, ps.log_w).particle(0)


def particle_rng(seed: int, time_step: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed & _SEED_MASK, time_step, index, 0])


def _resample_rng(seed: int, time_step: int) -> np.random.Generator:
    return np.random.default_rng([seed & _SEED_MASK, time_step, 0, 1])


def systematic_indices(weights: np.ndarray, u: float) -> np.ndarray:
    n = len(weights)
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, (u + np.arange(n)) / n, side="right")


def resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Systematic resampling to equal weights; particle contents are copied."""
    w = ps.weights
    w = w / w.sum()
    idx = systematic_indices(w, rng.random())
    out = ps.take(idx)
    out.log_w = np.full(len(ps), -np.log(len(ps)))
    return out


def _sample_chunk(ps: ParticleSet, sl: slice, rnd_arrays, params: FilterParams, env: Environment):
    positions, features, obs_loc = rnd_arrays
    k = ps.time_step + 1
    rngs = [particle_rng(params.rng_seed, k, i) for i in range(sl.start, sl.stop)]
    sc = round_scores(
        ps.sp_mean[sl], ps.sp_cov[sl], ps.f_mean[sl], ps.f_cov[sl], ps.loc[sl],
        positions, features, obs_loc, params, env,
    )
    log_indep = sc.log_indep
    rows = rejection_rows(log_indep, sc.row_meas, rngs, params.max_rejection_retries)
    mode = params.sampler_mode
    if mode == "rejection":
        log_z = log_z_independent_rows(log_indep)
    else:
        burn, nz = params.gibbs_burn_in, params.gibbs_z_samples
        n_steps = burn + (nz if mode == "gibbs-proposal-and-weights" else 0)
        u = np.stack([r.random((n_steps, 4)) for r in rngs])
        trace = gibbs_run(sc.log_joint, sc.row_meas, rows, u)
        rows = trace[:, burn - 1].copy()
        if mode == "gibbs-proposal":
            log_z = log_z_independent_rows(log_indep)
        else:
            log_z = log_z_harmonic(sc.log_likelihood_of(trace[:, burn:]))
    new = apply_rows(
        ps.sp_mean[sl], ps.sp_cov[sl], ps.f_mean[sl], ps.f_cov[sl], ps.loc[sl],
        rows, positions, features, obs_loc, params,
    )
    return new, log_z, rows


def step(
    ps: ParticleSet,
    rnd: Round,
    params: FilterParams,
    env: Environment,
    threads: int = 1,
    return_rows: bool = False,
):
    """One sequential importance sampling update with the round's detections."""
    if len(ps) == 0:
        raise ValueError("empty particle set")
    env.check_location(rnd.location, allow_unknown=False)
    d = ps.feature_dim
    rnd_arrays = (rnd.positions(), rnd.features(d), rnd.location)
    p = len(ps)
    chunks = [slice(s, min(s + CHUNK, p)) for s in range(0, p, CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda sl: _sample_chunk(ps, sl, rnd_arrays, params, env), chunks))
    else:
        results = [_sample_chunk(ps, sl, rnd_arrays, params, env) for sl in chunks]
    parts = [np.concatenate([r[0][i] for r in results]) for i in range(5)]
    log_z = np.concatenate([r[1] for r in results])
    rows = np.concatenate([r[2] for r in results])
    log_w = ps.log_w + log_z
    log_w = log_w - logsumexp(log_w)
    out = ParticleSet(*parts, log_w, ps.time_step + 1)
    if out.ess() < params.resample_ess_fraction * p:
        out = resample(out, _resample_rng(params.rng_seed, out.time_step))
    if return_rows:
        return out, rows
    return out


@dataclass
class PosteriorSummary:
    """Posterior of one target: spatial mixture, location marginal and point estimate."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    location_marginal: dict[int, float]
    map_location: int
    point_estimate: np.ndarray | None

    def mixture_mean(self) -> np.ndarray:
        return self.weights @ self.means


def posterior(ps: ParticleSet, j: int, env: Environment | None = None) -> PosteriorSummary:
    """Weighted mixture over particles for target ``j``.

    The point estimate is the weighted mean position among particles that put
    the target in its most probable location, preferring particles with an
    informative position belief.  A target most probably in the unknown
    location has no point estimate.  Ties between locations go to the lower
    location id, with the unknown location ranked last.
    """
    if not 0 <= j < ps.n_targets:
        raise IndexError(f"target {j} out of range")
    w = ps.weights
    w = w / w.sum()
    loc = ps.loc[:, j]
    n_loc = env.n_locations if env is not None else int(max(loc.max(), 0)) + 1
    mass = np.zeros(n_loc + 1)
    np.add.at(mass, np.where(loc == UNKNOWN, n_loc, loc), w)
    marginal = {l: float(mass[l]) for l in range(n_loc)}
    marginal[UNKNOWN] = float(mass[n_loc])
    best = int(np.argmax(mass))
    map_loc = UNKNOWN if best == n_loc else best
    point = None
    if map_loc != UNKNOWN:
        sel = loc == map_loc
        informative = sel & (np.trace(ps.sp_cov[:, j], axis1=-2, axis2=-1) < NONINFORMATIVE_VAR)
        if informative.any():
            sel = informative
        point = (w[sel] @ ps.sp_mean[sel, j]) / w[sel].sum()
    return PosteriorSummary(w, ps.sp_mean[:, j].copy(), ps.sp_cov[:, j].copy(), marginal, map_loc, point)
