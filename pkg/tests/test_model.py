import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumptrack.model import (
    UNKNOWN,
    Association,
    Environment,
    FilterParams,
    Measurement,
    Round,
    association_to_row,
    n_rows,
    prior_rows,
    row_to_association,
    transition_prior,
    validate_association,
)

ENV3 = Environment.uniform(3)
DEFAULTS = FilterParams()


def test_default_parameters():
    p = FilterParams()
    assert (p.p_jump, p.p_meas, p.sigma_q, p.sigma_r) == (0.03, 0.98, 0.35, 0.15)
    assert p.num_particles == 300 and p.gibbs_burn_in == 100
    assert ENV3.area(0) == 20.0


@pytest.mark.parametrize("bad", [
    dict(p_jump=0.0), dict(p_jump=1.0), dict(p_meas=1.0), dict(num_particles=0),
    dict(sampler_mode="exact"), dict(resample_ess_fraction=0.0), dict(feature_support=-1.0),
    dict(feature_meas_cov=np.array([[1.0, 2.0], [2.0, 1.0]])),
])
def test_params_reject_invalid(bad):
    with pytest.raises(ValueError):
        FilterParams(**bad)


def test_params_equality_with_matrix_cov():
    a = FilterParams(feature_meas_cov=np.eye(3))
    assert a == FilterParams(feature_meas_cov=np.eye(3))
    assert a != FilterParams(feature_meas_cov=2 * np.eye(3))
    assert np.array_equal(FilterParams(feature_meas_cov=2.0).feature_cov(3), 2 * np.eye(3))
    with pytest.raises(ValueError):
        a.feature_cov(2)


def test_environment_validation():
    with pytest.raises(ValueError):
        Environment(())
    with pytest.raises(ValueError):
        Environment((20.0, 0.0))
    with pytest.raises(ValueError):
        ENV3.area(UNKNOWN)
    ENV3.check_location(UNKNOWN)
    with pytest.raises(ValueError):
        ENV3.check_location(3)


def test_measurement_location_consistency():
    with pytest.raises(ValueError):
        Measurement([0, 0], [1.0], UNKNOWN)
    with pytest.raises(ValueError):
        Round(1, 0, (Measurement([0, 0], [1.0], 1),))


def test_stay_detect_cell_example():
    t = transition_prior(0, 0, 2, ENV3, DEFAULTS)
    assert t.stay_meas == pytest.approx(0.5 * 0.97 * 0.98, abs=1e-12)
    assert round(t.stay_meas, 4) == 0.4753


@pytest.mark.parametrize("m", [0, 1, 4])
def test_unknown_row_has_no_stay_mass(m):
    t = transition_prior(UNKNOWN, 1, m, ENV3, DEFAULTS)
    assert t.stay_meas == 0.0 and t.stay_none == 0.0
    assert t.total_mass(m) == pytest.approx(1.0, abs=1e-12)


def test_other_location_row_sum_example():
    t = transition_prior(1, 0, 1, ENV3, DEFAULTS)
    parts = [0.97, 0.03 * 0.98 / 3, 0.03 * 0.02 / 3, 0.02]
    assert [t.stay_none, t.jump_observed_meas, t.jump_observed_none, t.jump_unknown_none] == pytest.approx(parts, abs=1e-15)
    assert t.total_mass(1) == pytest.approx(1.0, abs=1e-12)


def test_empty_round_folds_detection_mass():
    t = transition_prior(0, 0, 0, ENV3, DEFAULTS)
    assert t.stay_none == pytest.approx(0.97)
    assert t.jump_observed_none == pytest.approx(0.01)
    assert t.total_mass(0) == pytest.approx(1.0, abs=1e-12)


def test_invalid_location_rejected():
    with pytest.raises(ValueError):
        transition_prior(5, 0, 1, ENV3, DEFAULTS)
    with pytest.raises(ValueError):
        transition_prior(0, UNKNOWN, 1, ENV3, DEFAULTS)
    with pytest.raises(ValueError):
        transition_prior(0, 0, -1, ENV3, DEFAULTS)


probs = st.floats(0.001, 0.999)


@settings(max_examples=200, deadline=None)
@given(pj=probs, pm=probs, m=st.integers(0, 12), nl=st.integers(1, 8), prev=st.integers(-1, 7), obs=st.integers(0, 7))
def test_rows_normalized_and_vectorized_rows_agree(pj, pm, m, nl, prev, obs):
    env = Environment.uniform(nl)
    prev, obs = (prev if prev < nl else UNKNOWN), obs % nl
    params = FilterParams(p_jump=pj, p_meas=pm)
    t = transition_prior(prev, obs, m, env, params)
    assert t.total_mass(m) == pytest.approx(1.0, abs=1e-12)
    assert t.jump_unknown_meas == 0.0
    rows = prior_rows(np.array([prev]), obs, m, env, params)[0]
    assert rows.shape == (n_rows(m),)
    assert rows.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(rows[:m] == t.stay_meas)
    assert np.all(rows[m:2 * m] == t.jump_observed_meas)
    assert rows[2 * m:].tolist() == pytest.approx([t.stay_none, t.jump_observed_none, t.jump_unknown_none])


def test_stay_detect_cell_decreases_with_jump_probability():
    cells = [transition_prior(0, 0, 3, ENV3, FilterParams(p_jump=p)).stay_meas for p in (0.01, 0.03, 0.1, 0.5)]
    assert all(a > b for a, b in zip(cells, cells[1:]))


def test_validate_association_examples():
    none = Association(None, False, 0)
    assert validate_association((none, none), 2)
    assert not validate_association((Association(0, False, 0), Association(0, True, 0)), 2)
    assert not validate_association((Association(None, False, 1),), 2, prev_locs=[0], obs_loc=0)
    assert not validate_association((Association(2, False, 0),), 2)
    assert validate_association((Association(1, True, 0), Association(None, True, UNKNOWN)), 2, [1, 0], 0)


@pytest.mark.parametrize("prev,obs", [(0, 0), (1, 0), (UNKNOWN, 2)])
@pytest.mark.parametrize("m", [0, 1, 3])
def test_rows_round_trip(prev, obs, m):
    prior = prior_rows(np.array([prev]), obs, m, ENV3, DEFAULTS)[0]
    for r in range(n_rows(m)):
        a = row_to_association(r, m, prev, obs)
        if prior[r] > 0:
            assert association_to_row(a, m, prev, obs) == r
            assert validate_association((a,), m, [prev], obs)
        else:
            assert not validate_association((a,), m, [prev], obs)
    with pytest.raises(ValueError):
        row_to_association(n_rows(m), m, prev, obs)
