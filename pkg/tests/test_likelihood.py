import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from jumptrack.likelihood import (
    clutter_likelihood,
    epsilon_pseudo_likelihood,
    joint_log_likelihood,
    log_epsilon_pseudo,
    point_likelihood_jump,
    point_likelihood_no_jump,
)
from jumptrack.model import Association, Environment, FilterParams, Measurement, TargetEstimate

ENV = Environment.uniform(3)


def target(pos, feat, sp_var=0.01, f_var=0.01, loc=0):
    d = len(feat)
    return TargetEstimate(np.asarray(pos, float), sp_var * np.eye(2), np.asarray(feat, float), f_var * np.eye(d), loc)


def test_no_jump_density_at_mode():
    p = FilterParams(sigma_q=1e-3, sigma_r=1e-3, feature_meas_cov=1e-6)
    t = target([1.0, 2.0], [0.5], sp_var=1e-6, f_var=1e-6)
    y = Measurement([1.0, 2.0], [0.5], 0)
    s_sp = 1e-6 + 2e-6
    s_f = 2e-6
    peak = 1 / (2 * np.pi * s_sp) * 1 / np.sqrt(2 * np.pi * s_f)
    assert point_likelihood_no_jump(t, y, p, ENV) == pytest.approx(peak, rel=1e-9)


def test_no_jump_far_and_wrong_location():
    p = FilterParams()
    t = target([0.0, 0.0], [0.0, 0.0])
    far = Measurement([5.0, 0.0], [0.0, 0.0], 0)
    assert point_likelihood_no_jump(t, far, p, ENV) < 1e-20
    assert point_likelihood_no_jump(t, Measurement([0.0, 0.0], [0.0, 0.0], 1), p, ENV) == 0.0


def test_no_jump_scalar_product_oracle():
    """Spatial block is isotropic so it factors into two 1-D Gaussians."""
    p = FilterParams(sigma_q=0.2, sigma_r=0.1, feature_meas_cov=0.3)
    t = target([1.0, -1.0], [2.0], sp_var=0.05, f_var=0.2)
    y = Measurement([1.3, -0.8], [2.5], 0)
    s = math.sqrt(0.05 + 0.04 + 0.01)
    ref = norm.pdf(1.3, 1.0, s) * norm.pdf(-0.8, -1.0, s) * norm.pdf(2.5, 2.0, math.sqrt(0.5))
    assert point_likelihood_no_jump(t, y, p, ENV) == pytest.approx(ref, rel=1e-10)


def test_jump_likelihood_examples():
    p = FilterParams(feature_meas_cov=0.5)
    t = target([0, 0], [1.0, 2.0, 3.0], f_var=0.5)
    y = Measurement([9.0, 9.0], [1.0, 2.0, 3.0], 0)
    val = point_likelihood_jump(t, y, p, ENV)
    assert val == pytest.approx((2 * np.pi) ** -1.5 / 20)
    assert round(val, 5) == 0.00317
    env = Environment((40.0, 20.0, 20.0))
    assert point_likelihood_jump(t, y, p, env) == pytest.approx(val / 2)
    far = Measurement([0.0, 0.0], [11.0, 2.0, 3.0], 0)
    assert point_likelihood_jump(t, far, p, ENV) < 1e-20


def test_clutter_examples():
    p = FilterParams()
    a = Measurement([0.0, 0.0], [1.0, 1.0], 0)
    b = Measurement([3.0, 1.0], [-5.0, 2.0], 0)
    assert clutter_likelihood(a, p, ENV) == pytest.approx(0.01)
    assert clutter_likelihood(a, p, ENV) == clutter_likelihood(b, p, ENV)


def _unit_joint_target(p, d_f):
    sp = (1.0 - p.sigma_q**2 - p.sigma_r**2) * np.eye(2)
    f = np.eye(d_f) - p.feature_cov(d_f)
    return TargetEstimate(np.zeros(2), sp, np.zeros(d_f), f, 0)


def test_epsilon_pseudo_examples():
    p = FilterParams(feature_meas_cov=0.5)
    t = _unit_joint_target(p, 3)
    val = epsilon_pseudo_likelihood(t, 13, p)
    assert val == pytest.approx((4 * np.pi) ** -2.5 / 13, rel=1e-12)
    assert round(val, 7) == pytest.approx(1.374e-4, abs=1e-7)
    assert epsilon_pseudo_likelihood(t, 26, p) == pytest.approx(val / 2)
    # scaling the joint covariance by 4 divides by 4^(D/2) = 32 for D = 5
    c_sp = 4.0 * np.eye(2) - (p.sigma_q**2 + p.sigma_r**2) * np.eye(2)
    t4 = TargetEstimate(np.zeros(2), c_sp, np.zeros(3), 4.0 * np.eye(3) - 0.5 * np.eye(3), 0)
    assert epsilon_pseudo_likelihood(t4, 13, p) == pytest.approx(val / 32, rel=1e-12)


def test_epsilon_pseudo_noninformative_uses_area():
    p = FilterParams()
    t = TargetEstimate(np.zeros(2), 1e6 * np.eye(2), np.zeros(2), np.eye(2), 0)
    with pytest.raises(ValueError):
        epsilon_pseudo_likelihood(t, 1, p)
    v = epsilon_pseudo_likelihood(t, 1, p, ENV, 0)
    f_part = (4 * np.pi) ** -1 / np.sqrt(np.linalg.det(2 * np.eye(2)))
    assert v == pytest.approx(f_part / 20)


@pytest.mark.parametrize("seed", range(5))
def test_epsilon_pseudo_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    p = FilterParams(sigma_q=0.1, sigma_r=0.1, feature_meas_cov=0.3)
    d_f = int(rng.integers(1, 5))
    a = rng.standard_normal((2, 2))
    b = rng.standard_normal((d_f, d_f))
    t = TargetEstimate(np.zeros(2), a @ a.T + 0.1 * np.eye(2), np.zeros(d_f), b @ b.T + 0.1 * np.eye(d_f), 0)
    cov = np.zeros((2 + d_f, 2 + d_f))
    cov[:2, :2] = t.spatial_cov + p.spatial_process_cov() + p.spatial_meas_cov()
    cov[2:, 2:] = t.feature_cov + p.feature_cov(d_f)
    mvn = multivariate_normal(np.zeros(2 + d_f), cov)
    samples = mvn.rvs(size=1_000_000, random_state=rng)
    mc = mvn.pdf(samples).mean() / 3
    assert epsilon_pseudo_likelihood(t, 3, p) == pytest.approx(mc, rel=0.01)


def test_log_epsilon_batched_shape():
    p = FilterParams()
    sp = np.broadcast_to(0.1 * np.eye(2), (4, 3, 2, 2))
    f = np.broadcast_to(np.eye(2), (4, 3, 2, 2))
    assert log_epsilon_pseudo(sp, f, 3, 20.0, p).shape == (4, 3)


def _round():
    return [
        Measurement([1.0, 1.0], [0.0, 0.0], 0),
        Measurement([2.5, 1.5], [1.0, 0.5], 0),
    ]


def test_joint_all_epsilon_is_clutter_only():
    p = FilterParams()
    ts = [target([1, 1], [0, 0]), target([3, 3], [1, 1])]
    c = (Association(None, False, 0), Association(None, True, -1))
    assert joint_log_likelihood(_round(), c, ts, p, ENV) == pytest.approx(2 * math.log(0.01))


def test_joint_single_target_single_measurement():
    p = FilterParams()
    t = target([1, 1], [0, 0])
    y = _round()[:1]
    val = joint_log_likelihood(y, (Association(0, False, 0),), [t], p, ENV)
    assert val == pytest.approx(math.log(point_likelihood_no_jump(t, y[0], p, ENV)))


def test_joint_mixed_case_term_by_term():
    p = FilterParams()
    ys = _round() + [Measurement([4.0, 4.0], [3.0, 3.0], 0)]
    ts = [target([1, 1], [0, 0]), target([2, 1], [1, 1], loc=1)]
    c = (Association(0, False, 0), Association(1, True, 0))
    ref = (
        math.log(point_likelihood_no_jump(ts[0], ys[0], p, ENV))
        + math.log(point_likelihood_jump(ts[1], ys[1], p, ENV))
        + math.log(clutter_likelihood(ys[2], p, ENV))
    )
    assert joint_log_likelihood(ys, c, ts, p, ENV) == pytest.approx(ref)
    swapped = joint_log_likelihood(ys, c[::-1], ts[::-1], p, ENV)
    assert swapped == pytest.approx(ref)


def test_joint_rejects_invalid():
    p = FilterParams()
    ts = [target([1, 1], [0, 0]), target([2, 1], [1, 1])]
    with pytest.raises(ValueError):
        joint_log_likelihood(_round(), (Association(0, False, 0), Association(0, True, 0)), ts, p, ENV)
    with pytest.raises(ValueError):
        joint_log_likelihood(_round(), (Association(0, False, 0),), ts, p, ENV)
