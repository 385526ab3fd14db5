import math

import numpy as np
import pytest
from scipy.special import logsumexp

import oracle
from instances import estimate, measurements
from jumptrack import filter as rbpf
from jumptrack.model import UNKNOWN, Association, Environment, FilterParams, Round, validate_association

ENV = Environment.uniform(3)


def small(**kw):
    base = dict(num_particles=200, rng_seed=5)
    base.update(kw)
    return FilterParams(**base)


def test_init_uniform_identical_particles():
    p = FilterParams()
    ps = rbpf.init([(0, [1, 1]), (1, [2, 2]), (2, [3, 3])], [[0, 0], [1, 1], [2, 2]], p, ENV)
    assert len(ps) == 300 and ps.n_targets == 3
    assert np.allclose(ps.log_w, -math.log(300))
    assert np.allclose(ps.sp_cov, p.spatial_meas_cov())
    assert np.allclose(ps.f_cov, p.feature_cov(2))
    post = rbpf.posterior(ps, 1, ENV)
    assert post.location_marginal[1] == pytest.approx(1.0)
    assert np.allclose(post.point_estimate, [2, 2])
    assert np.allclose(post.mixture_mean(), [2, 2])


@pytest.mark.parametrize("bad", [
    dict(initial_positions=[], initial_features=[]),
    dict(initial_positions=[(0, [1, 1])], initial_features=[[0], [1]]),
    dict(initial_positions=[(0, [1, 1, 1])], initial_features=[[0]]),
    dict(initial_positions=[(UNKNOWN, [1, 1])], initial_features=[[0]]),
])
def test_init_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        rbpf.init(params=FilterParams(), env=ENV, **bad)


def _single(params, loc=0, pos=(1.0, 1.0), feat=(0.0, 0.0)):
    ps = rbpf.init([(loc, list(pos))], [list(feat)], params, ENV)
    return ps.particle(0)


RND = measurements(0, [([1.4, 0.8], [0.5, -0.2]), ([3.0, 3.0], [2.0, 2.0])])


def test_apply_stay_without_detection_predicts_only():
    p = FilterParams()
    part = _single(p)
    out = rbpf.apply_association(part, (Association(None, False, 0),), RND, p).targets[0]
    assert np.array_equal(out.spatial_mean, [1.0, 1.0])
    assert np.allclose(out.spatial_cov, p.spatial_meas_cov() + p.spatial_process_cov())
    assert np.array_equal(out.feature_mean, [0.0, 0.0])


def test_apply_jump_with_detection_resets_to_measurement():
    p = FilterParams()
    part = _single(p, loc=1)
    out = rbpf.apply_association(part, (Association(1, True, 0),), RND, p).targets[0]
    assert np.array_equal(out.spatial_mean, [3.0, 3.0])
    assert np.array_equal(out.spatial_cov, p.spatial_meas_cov())
    assert out.location == 0
    fm, fc = oracle.kalman(np.zeros(2), p.feature_cov(2), np.array([2.0, 2.0]), p.feature_cov(2))
    assert np.allclose(out.feature_mean, fm) and np.allclose(out.feature_cov, fc)


def test_apply_stay_with_detection_matches_reference_kalman():
    p = FilterParams()
    part = _single(p)
    out = rbpf.apply_association(part, (Association(0, False, 0),), RND, p).targets[0]
    st = oracle.State(0, [1, 1], p.spatial_meas_cov(), [0, 0], p.feature_cov(2))
    ref = oracle.advance(st, (0, False, 0), 0, RND.positions(), RND.features(2), p.sigma_q**2, p.sigma_r**2, float(p.feature_meas_cov))
    assert np.allclose(out.spatial_mean, ref.sm) and np.allclose(out.spatial_cov, ref.sc)
    assert np.allclose(out.feature_mean, ref.fm) and np.allclose(out.feature_cov, ref.fc)


def test_unknown_then_reacquired():
    p = FilterParams()
    part = _single(p, loc=1)
    lost = rbpf.apply_association(part, (Association(None, True, UNKNOWN),), RND, p)
    t = lost.targets[0]
    assert t.location == UNKNOWN
    assert np.all(np.diag(t.spatial_cov) >= 1e6)
    # from the unknown location only jump rows are possible
    assert not validate_association((Association(0, False, UNKNOWN),), 2, [UNKNOWN], 0)
    back = rbpf.apply_association(lost, (Association(0, True, 0),), RND, p).targets[0]
    assert back.location == 0
    assert np.array_equal(back.spatial_mean, RND.positions()[0])


def test_apply_rejects_invalid():
    p = FilterParams()
    part = _single(p)
    with pytest.raises(ValueError):
        rbpf.apply_association(part, (Association(0, False, 1),), RND, p)
    with pytest.raises(ValueError):
        rbpf.apply_association(part, (), RND, p)


def test_empty_round_elsewhere_leaks_small_mass():
    p = small(num_particles=4000, p_jump=0.03)
    ps = rbpf.init([(0, [1, 1])], [[0, 0]], p, ENV)
    out = rbpf.step(ps, Round(1, 1, ()), p, ENV)
    post = rbpf.posterior(out, 0, ENV)
    assert post.location_marginal[0] == pytest.approx(0.97, abs=0.01)
    assert post.location_marginal[UNKNOWN] == pytest.approx(0.02, abs=0.01)
    stayed = out.loc[:, 0] == 0
    assert np.allclose(out.sp_mean[stayed, 0], [1, 1])
    assert np.allclose(out.sp_cov[stayed, 0], p.spatial_meas_cov() + p.spatial_process_cov())


def test_repeated_perfect_measurements_reach_riccati_fixed_point():
    p = small(num_particles=100, p_jump=0.01, p_meas=0.98)
    ps = rbpf.init([(0, [1.0, 1.0])], [[0.0, 0.0]], p, ENV)
    rnd = measurements(0, [([2.0, 1.5], [0.0, 0.0])])
    for _ in range(40):
        ps = rbpf.step(ps, rnd, p, ENV)
    q, r = p.sigma_q**2, p.sigma_r**2
    fixed = (-q + math.sqrt(q * q + 4 * q * r)) / 2
    post = rbpf.posterior(ps, 0, ENV)
    assert np.allclose(post.point_estimate, [2.0, 1.5], atol=1e-6)
    assert np.median(ps.sp_cov[:, 0, 0, 0]) == pytest.approx(fixed, rel=1e-6)


def test_resample_examples():
    p = small(num_particles=8)
    ps = rbpf.init([(0, [1, 1])], [[0.0]], p, ENV)
    ps.sp_mean[:, 0, 0] = np.arange(8)
    out = rbpf.resample(ps, np.random.default_rng(0))
    assert sorted(out.sp_mean[:, 0, 0]) == list(range(8))
    assert out.ess() == pytest.approx(8)
    w = np.full(8, 1e-12 / 7)
    w[3] = 1 - 1e-12
    ps.log_w = np.log(w)
    out = rbpf.resample(ps, np.random.default_rng(1))
    assert np.all(out.sp_mean[:, 0, 0] == 3)
    out.sp_mean[0, 0, 0] = -1
    assert ps.sp_mean[3, 0, 0] == 3


def test_systematic_indices_counts():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    idx = rbpf.systematic_indices(w, 0.5)
    counts = np.bincount(idx, minlength=4)
    assert np.all(np.abs(counts - 4 * w) < 1)


def test_posterior_tie_and_mixture_moment():
    p = small(num_particles=4)
    ps = rbpf.init([(1, [1, 1])], [[0.0]], p, ENV)
    ps.loc[:2, 0] = 2
    ps.sp_mean[:, 0] = [[0, 0], [2, 0], [4, 4], [6, 4]]
    post = rbpf.posterior(ps, 0, ENV)
    assert post.location_marginal[1] == pytest.approx(0.5) and post.location_marginal[2] == pytest.approx(0.5)
    assert post.map_location == 1
    assert np.allclose(post.point_estimate, [5, 4])
    assert np.allclose(post.mixture_mean(), ps.sp_mean[:, 0].mean(0))
    ps.log_w = np.log(np.array([0.1, 0.2, 0.3, 0.4]))
    post = rbpf.posterior(ps, 0, ENV)
    assert np.allclose(post.mixture_mean(), np.array([0.1, 0.2, 0.3, 0.4]) @ ps.sp_mean[:, 0])
    assert sum(post.location_marginal.values()) == pytest.approx(1.0)


def test_posterior_unknown_map_has_no_point():
    p = small(num_particles=3)
    ps = rbpf.init([(1, [1, 1])], [[0.0]], p, ENV)
    ps.loc[:, 0] = UNKNOWN
    assert rbpf.posterior(ps, 0, ENV).point_estimate is None


def _scene():
    targets = [(0, [1.0, 1.0]), (0, [2.0, 2.5]), (1, [3.0, 3.0])]
    feats = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    rounds = [
        measurements(0, [([1.1, 0.9], [0.1, 0.0]), ([2.2, 2.4], [0.9, 0.1]), ([4.0, 0.5], [3.0, 3.0])]),
        measurements(1, [([3.1, 3.0], [0.1, 0.9])]),
        Round(3, 2, ()),
        measurements(0, [([1.0, 1.1], [0.0, 0.1]), ([2.1, 2.5], [1.1, 0.0])]),
    ]
    return targets, feats, rounds


@pytest.mark.parametrize("mode", ["rejection", "gibbs-proposal", "gibbs-proposal-and-weights"])
def test_step_invariants(mode):
    p = small(sampler_mode=mode, gibbs_burn_in=10, gibbs_z_samples=10)
    targets, feats, rounds = _scene()
    ps = rbpf.init(targets, feats, p, ENV)
    for rnd in rounds:
        prev = ps.loc.copy()
        ps, rows = rbpf.step(ps, rnd, p, ENV, return_rows=True)
        assert logsumexp(ps.log_w) == pytest.approx(0.0, abs=1e-9)
        assert ps.n_targets == 3 and np.all(np.isfinite(ps.log_w))
        m = len(rnd)
        meas = np.where(rows < 2 * m, rows % max(m, 1), -1)
        for r in meas:
            used = r[r >= 0]
            assert len(used) == len(set(used))
        assert prev.shape == ps.loc.shape


def _run(params, threads, rounds, targets, feats):
    ps = rbpf.init(targets, feats, params, ENV)
    for rnd in rounds:
        ps = rbpf.step(ps, rnd, params, ENV, threads=threads)
    return ps


@pytest.mark.parametrize("mode", ["rejection", "gibbs-proposal-and-weights"])
def test_threads_and_chunking_do_not_change_results(mode, monkeypatch):
    p = small(num_particles=600, sampler_mode=mode, gibbs_burn_in=5, gibbs_z_samples=5)
    targets, feats, rounds = _scene()
    a = _run(p, 1, rounds, targets, feats)
    b = _run(p, 3, rounds, targets, feats)
    monkeypatch.setattr(rbpf, "CHUNK", 97)
    c = _run(p, 2, rounds, targets, feats)
    for x in (b, c):
        for name in ("sp_mean", "sp_cov", "f_mean", "f_cov", "loc", "log_w"):
            assert np.array_equal(getattr(a, name), getattr(x, name))


def test_seed_changes_results():
    targets, feats, rounds = _scene()
    a = _run(small(), 1, rounds, targets, feats)
    b = _run(small(rng_seed=6), 1, rounds, targets, feats)
    assert not np.array_equal(a.loc, b.loc) or not np.array_equal(a.sp_mean, b.sp_mean)


def test_empty_particle_set_rejected():
    p = small(num_particles=2)
    ps = rbpf.init([(0, [1, 1])], [[0.0]], p, ENV).take(np.array([], dtype=int))
    with pytest.raises(ValueError):
        rbpf.step(ps, Round(1, 0, ()), p, ENV)


def test_one_step_location_marginals_match_enumeration():
    """Gibbs proposal and harmonic weights against forward enumeration on one round."""
    p = FilterParams(p_jump=0.2, p_meas=0.9, feature_meas_cov=0.5, feature_support=50.0,
                     num_particles=2000, sampler_mode="gibbs-proposal-and-weights", rng_seed=1)
    env = Environment((20.0, 20.0))
    init = [(0, [1.0, 1.0]), (1, [3.0, 3.0])]
    feats = [[0.0, 0.0], [2.0, 0.0]]
    rnd = measurements(0, [([1.05, 0.95], [0.2, -0.1]), ([4.0, 2.0], [1.8, 0.3])])
    ps = rbpf.step(rbpf.init(init, feats, p, env), rnd, p, env)
    states = [oracle.State(l, x, p.spatial_meas_cov(), f, p.feature_cov(2)) for (l, x), f in zip(init, feats)]
    exact = oracle.exact_location_marginals(
        states, [(0, rnd.positions(), rnd.features(2))], 2, 20.0, 0.2, 0.9,
        p.sigma_q**2, p.sigma_r**2, 0.5, 50.0,
    )[0]
    for j in range(2):
        got = {k: v for k, v in rbpf.posterior(ps, j, env).location_marginal.items() if v > 0}
        assert oracle.tv(got, exact[j]) < 0.05
