"""Sampling of association vectors and estimation of the proposal normalizer.

Everything here works on *rows* (see :mod:`jumptrack.model`) and on batches
of particles at once.  The arrays have shape ``(P, N, K)``: particles,
targets, rows.  Two scores are kept per row:

``log_indep``
    log prior + log likelihood used by the independence-factored proposal.
    Rows with a measurement use the point likelihood, rows without one use
    the epsilon pseudo-likelihood.

``delta``
    contribution of the row to the joint log likelihood relative to the
    round where every measurement is clutter: ``log lik - log clutter`` for
    rows with a measurement, 0 otherwise.  The full joint log likelihood of
    a valid assignment is ``M log clutter + sum_j delta_j``.

The blocked Gibbs chain targets q(c) proportional to L(Y|c) prod_j p_j(c_j)
over conflict-free c, so its pair conditional only needs ``log prior + delta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .likelihood import log_clutter, log_epsilon_pseudo, log_feature_lik, log_spatial_lik
from .model import (
    Association,
    AssociationVector,
    DegenerateProposalError,
    Environment,
    FilterParams,
    Round,
    TargetEstimate,
    n_rows,
    prior_rows,
    row_measurements,
    row_to_association,
)


@dataclass
class RoundScores:
    log_prior: np.ndarray
    log_lik: np.ndarray
    delta: np.ndarray
    row_meas: np.ndarray
    log_clutter_total: float

    @property
    def m_count(self) -> int:
        return (self.log_prior.shape[-1] - 3) // 2

    @property
    def log_indep(self) -> np.ndarray:
        return self.log_prior + self.log_lik

    @property
    def log_joint(self) -> np.ndarray:
        return self.log_prior + self.delta

    def log_likelihood_of(self, rows: np.ndarray) -> np.ndarray:
        """Joint log likelihood of conflict-free rows ``(P, N)`` or a trace ``(P, T, N)``."""
        delta = self.delta
        while delta.ndim < rows.ndim + 1:
            delta = delta[:, None]
        d = np.take_along_axis(delta, rows[..., None], axis=-1)[..., 0]
        return d.sum(-1) + self.log_clutter_total


def round_scores(
    sp_mean, sp_cov, f_mean, f_cov, locations, positions, features,
    obs_loc: int, params: FilterParams, env: Environment, epsilon: str = "pseudo",
) -> RoundScores:
    """Scores of every row for every (particle, target).

    ``epsilon`` selects the likelihood of no-detection rows in the
    independent proposal: ``"pseudo"`` for the expected-data-density
    approximation, ``"clutter"`` for the clutter density itself.
    """
    locations = np.asarray(locations)
    n_targets = locations.shape[-1]
    m = len(positions)
    area = env.area(obs_loc)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior_rows(locations, obs_loc, m, env, params))
    lc = log_clutter(area, params)
    if epsilon == "pseudo":
        eps = log_epsilon_pseudo(sp_cov, f_cov, n_targets, area, params)
    elif epsilon == "clutter":
        eps = np.full(locations.shape, lc)
    else:
        raise ValueError(f"unknown epsilon mode {epsilon!r}")
    eps3 = np.repeat(eps[..., None], 3, axis=-1)
    if m:
        lf = log_feature_lik(f_mean, f_cov, features, params)
        stay = log_spatial_lik(sp_mean, sp_cov, positions, params) + lf
        jump = lf - np.log(area)
        log_lik = np.concatenate([stay, jump, eps3], axis=-1)
        delta = np.concatenate([stay - lc, jump - lc, np.zeros_like(eps3)], axis=-1)
    else:
        log_lik = eps3
        delta = np.zeros_like(eps3)
    return RoundScores(log_prior, log_lik, delta, row_measurements(m), m * lc)


def _categorical(logw: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF draw along the last axis from unnormalized log weights.

    Returns the indices and a boolean mask of entries whose weights were all
    zero (their index is meaningless).
    """
    top = logw.max(-1, keepdims=True)
    bad = ~np.isfinite(top[..., 0])
    w = np.exp(logw - np.where(np.isfinite(top), top, 0.0))
    cdf = np.cumsum(w, axis=-1)
    idx = (cdf <= (u * cdf[..., -1])[..., None]).sum(-1)
    return np.minimum(idx, logw.shape[-1] - 1), bad


def _unnormalized(logw: np.ndarray) -> np.ndarray:
    top = logw.max(-1, keepdims=True)
    return np.exp(logw - np.where(np.isfinite(top), top, 0.0))


def _draw(w: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF draw along the last axis of non-negative weights ``(P, K)``."""
    cdf = np.cumsum(w, axis=-1)
    total = cdf[:, -1]
    idx = (cdf <= (u * total)[:, None]).sum(-1)
    return np.minimum(idx, w.shape[-1] - 1), ~(total > 0)


def _has_conflict(meas: np.ndarray) -> bool:
    used = meas[meas >= 0]
    return len(used) != len(np.unique(used))


def rejection_rows(
    log_q: np.ndarray, row_meas: np.ndarray, rngs: Sequence[np.random.Generator], max_retries: int = 1000
) -> np.ndarray:
    """Conflict-free rows drawn from the product of per-target proposals.

    Each particle draws from its own generator.  After ``max_retries``
    rejected draws a particle falls back to sampling targets in random order,
    each restricted to measurements not yet taken.
    """
    p_count, n_targets, k = log_q.shape
    top = log_q.max(-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DegenerateProposalError("a target has no association with positive weight")
    w = np.exp(log_q - top)
    cdf = np.cumsum(w, axis=-1)
    cdf /= cdf[..., -1:]
    rows = np.empty((p_count, n_targets), dtype=np.intp)
    for p in range(p_count):
        rng = rngs[p]
        for _ in range(max_retries):
            u = rng.random(n_targets)
            r = np.minimum((cdf[p] <= u[:, None]).sum(-1), k - 1)
            if not _has_conflict(row_meas[r]):
                rows[p] = r
                break
        else:
            rows[p] = _sequential_rows(log_q[p], row_meas, rng)
    return rows


def _sequential_rows(log_q: np.ndarray, row_meas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n_targets = log_q.shape[0]
    taken = np.zeros(row_meas.max() + 2 if len(row_meas) else 1, dtype=bool)
    out = np.empty(n_targets, dtype=np.intp)
    for j in rng.permutation(n_targets):
        blocked = (row_meas >= 0) & taken[row_meas]
        lw = np.where(blocked, -np.inf, log_q[j])
        idx, bad = _categorical(lw, np.asarray(rng.random()))
        if bad:
            raise DegenerateProposalError("no conflict-free association left for a target")
        out[j] = idx
        if row_meas[idx] >= 0:
            taken[row_meas[idx]] = True
    return out


def gibbs_run(
    score: np.ndarray, row_meas: np.ndarray, rows: np.ndarray, uniforms: np.ndarray
) -> np.ndarray:
    """Advance blocked Gibbs chains in place, one pair update per four uniforms.

    ``score`` is ``(P, N, K)`` (log prior + delta), ``rows`` the current
    conflict-free state ``(P, N)`` and ``uniforms`` ``(P, T, 4)``.  Each update
    picks two distinct targets and redraws them jointly from their exact
    conditional given all other targets.  Returns the states after every
    update, shape ``(P, T, N)``.
    """
    p_count, n_targets, k = score.shape
    m = (k - 3) // 2
    n_steps = uniforms.shape[1]
    trace = np.empty((p_count, n_steps, n_targets), dtype=np.intp)
    pidx = np.arange(p_count)
    is_eps = row_meas < 0
    meas_col = np.where(is_eps, m, row_meas)
    counts = np.zeros((p_count, m + 1), dtype=np.intp)
    np.add.at(counts, (np.repeat(pidx, n_targets), meas_col[rows].ravel()), 1)

    if n_targets == 1:
        for t in range(n_steps):
            idx, bad = _categorical(score[:, 0, :], uniforms[:, t, 2])
            rows[:, 0] = np.where(bad, rows[:, 0], idx)
            trace[:, t] = rows
        return trace

    weights = _unnormalized(score)
    # The pair (a, b) is drawn as a ~ w1(a) * sum_{b ok with a} w2(b), then
    # b | a.  Rows m and M+m share measurement m, so the excluded mass for a
    # measurement row a is w2 over that measurement's two rows.
    for t in range(n_steps):
        u = uniforms[:, t]
        j1 = np.minimum((u[:, 0] * n_targets).astype(np.intp), n_targets - 1)
        j2 = np.minimum((u[:, 1] * (n_targets - 1)).astype(np.intp), n_targets - 2)
        j2 = j2 + (j2 >= j1)
        r1, r2 = rows[pidx, j1], rows[pidx, j2]
        counts[pidx, meas_col[r1]] -= 1
        counts[pidx, meas_col[r2]] -= 1
        avail = (counts[:, meas_col] == 0) | is_eps
        w1 = np.where(avail, weights[pidx, j1], 0.0)
        w2 = np.where(avail, weights[pidx, j2], 0.0)
        per_meas = w2[:, :m] + w2[:, m:2 * m]
        excluded = np.concatenate([per_meas, per_meas, np.zeros((p_count, 3))], axis=1)
        marg = w1 * np.maximum(w2.sum(-1, keepdims=True) - excluded, 0.0)
        a, bad = _draw(marg, u[:, 2])
        a_meas = row_meas[a]
        w2 = np.where((row_meas[None, :] == a_meas[:, None]) & (a_meas >= 0)[:, None], 0.0, w2)
        b, bad_b = _draw(w2, u[:, 3])
        bad |= bad_b
        a = np.where(bad, r1, a)
        b = np.where(bad, r2, b)
        rows[pidx, j1] = a
        rows[pidx, j2] = b
        counts[pidx, meas_col[a]] += 1
        counts[pidx, meas_col[b]] += 1
        trace[:, t] = rows
    return trace


def log_z_independent_rows(log_q: np.ndarray) -> np.ndarray:
    """log prod_j sum_rows q_j for every particle; ``(P, N, K) -> (P,)``."""
    return logsumexp(log_q, axis=-1).sum(-1)


def log_z_harmonic(log_liks: np.ndarray) -> np.ndarray:
    """Harmonic-mean estimate log (1 / mean(1/L)) along the last axis."""
    n = log_liks.shape[-1]
    return np.log(n) - logsumexp(-log_liks, axis=-1)


# ---------------------------------------------------------------------------
# Single-particle interface


def _target_arrays(targets: Sequence[TargetEstimate]):
    sp_mean = np.stack([t.spatial_mean for t in targets])[None]
    sp_cov = np.stack([t.spatial_cov for t in targets])[None]
    f_mean = np.stack([t.feature_mean for t in targets])[None]
    f_cov = np.stack([t.feature_cov for t in targets])[None]
    locs = np.array([t.location for t in targets])[None]
    return sp_mean, sp_cov, f_mean, f_cov, locs


def scores_for(
    targets: Sequence[TargetEstimate], rnd: Round, params: FilterParams, env: Environment, epsilon: str = "pseudo"
) -> RoundScores:
    """Row scores for a single particle's targets (batch dimension of one)."""
    sp_mean, sp_cov, f_mean, f_cov, locs = _target_arrays(targets)
    dim = f_mean.shape[-1]
    return round_scores(
        sp_mean, sp_cov, f_mean, f_cov, locs, rnd.positions(), rnd.features(dim),
        rnd.location, params, env, epsilon,
    )


@dataclass
class IndividualProposal:
    """Unnormalized distribution over one target's association rows."""

    rows: tuple[Association, ...]
    log_weights: np.ndarray

    @property
    def log_total(self) -> float:
        return float(logsumexp(self.log_weights))

    @property
    def total(self) -> float:
        return float(np.exp(self.log_total))

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_total)


def build_individual_proposal(
    j: int,
    targets: Sequence[TargetEstimate],
    rnd: Round,
    params: FilterParams,
    env: Environment,
    epsilon: str = "pseudo",
) -> IndividualProposal:
    """Prior times likelihood for every association row of target ``j``."""
    sc = scores_for(targets, rnd, params, env, epsilon)
    lw = sc.log_indep[0, j]
    if not np.any(np.isfinite(lw)):
        raise DegenerateProposalError(f"target {j} has no association with positive weight")
    m = len(rnd)
    prev = targets[j].location
    rows = tuple(row_to_association(r, m, prev, rnd.location) for r in range(n_rows(m)))
    return IndividualProposal(rows, lw.copy())


def _to_vector(rows: np.ndarray, targets: Sequence[TargetEstimate], rnd: Round) -> AssociationVector:
    m = len(rnd)
    return tuple(row_to_association(int(r), m, t.location, rnd.location) for r, t in zip(rows, targets))


def rejection_sample(
    targets: Sequence[TargetEstimate],
    rnd: Round,
    params: FilterParams,
    env: Environment,
    rng: np.random.Generator,
    epsilon: str = "pseudo",
) -> AssociationVector:
    """One conflict-free association vector from the independence-factored proposal."""
    sc = scores_for(targets, rnd, params, env, epsilon)
    rows = rejection_rows(sc.log_indep, sc.row_meas, [rng], params.max_rejection_retries)
    return _to_vector(rows[0], targets, rnd)


class GibbsChain:
    """A blocked Gibbs chain over one particle's associations for one round.

    The chain starts from a rejection-sampled state.  ``run`` advances it and
    records the joint log likelihood of every visited state.
    """

    def __init__(self, targets, rnd: Round, params: FilterParams, env: Environment, rng: np.random.Generator):
        self.targets = list(targets)
        self.round = rnd
        self.rng = rng
        self.scores = scores_for(self.targets, rnd, params, env)
        self.rows = rejection_rows(self.scores.log_indep, self.scores.row_meas, [rng], params.max_rejection_retries)

    def run(self, n_steps: int) -> np.ndarray:
        """Advance ``n_steps`` pair updates; returns the visited rows ``(n_steps, N)``."""
        u = self.rng.random((1, n_steps, 4))
        trace = gibbs_run(self.scores.log_joint, self.scores.row_meas, self.rows, u)
        return trace[0]

    def log_likelihoods(self, trace: np.ndarray) -> np.ndarray:
        return self.scores.log_likelihood_of(trace)

    @property
    def state(self) -> AssociationVector:
        return _to_vector(self.rows[0], self.targets, self.round)


def gibbs_sample(
    targets: Sequence[TargetEstimate],
    rnd: Round,
    params: FilterParams,
    env: Environment,
    rng: np.random.Generator,
    burn_in: int | None = None,
) -> tuple[AssociationVector, GibbsChain]:
    """Association vector after ``burn_in`` blocked updates, and the chain for further use."""
    chain = GibbsChain(targets, rnd, params, env, rng)
    chain.run(params.gibbs_burn_in if burn_in is None else burn_in)
    return chain.state, chain


def estimate_z_gibbs(chain: GibbsChain, n_samples: int) -> float:
    """Harmonic-mean estimate of the proposal normalizer from ``n_samples`` further chain steps.

    Returned in log form: the estimate of log sum_c L(Y|c) p(c).
    """
    trace = chain.run(n_samples)
    return float(log_z_harmonic(chain.log_likelihoods(trace)))


def estimate_z_independent(proposals: Sequence[IndividualProposal]) -> float:
    """log of prod_j sum_rows q_j, the normalizer under the independence approximation."""
    return float(sum(p.log_total for p in proposals))
