import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critlab.intensity import McConfig, intensity_I5
from critlab.kernel import plane_wave
from critlab.moments import (
    BoundStudy,
    MomentReport,
    Replications,
    bound_shape,
    crossover_check,
    estimate_moments,
    jackknife_se,
    report_from_counts,
    scaling_fit,
    simulate_replications,
    study_from_replications,
    verify_first_moment,
)


@pytest.fixture(scope="module")
def pw_reps(pw):
    return simulate_replications(pw, 6.0, 60, seed=17)


def synthetic_cell(R, lam, m2):
    return MomentReport("synthetic", R, -lam / 2, lam / 2, 100, 500, 0, m2, m2, 0.0, 0.0, 0.0, 0.0,
                        1.0, 1.0, bound_shape(R, lam))


@pytest.mark.parametrize("law,slopes", [(lambda R, lam: R**4 * lam**2, (4, 2)),
                                        (lambda R, lam: R**2 * lam, (2, 1))])
def test_scaling_fit_synthetic(law, slopes):
    cells = [synthetic_cell(R, lam, law(R, lam)) for R in (5, 10, 20) for lam in (0.02, 0.1, 0.5, 2.0)]
    fit = scaling_fit(BoundStudy(cells, "synthetic", 100, 500, 0))
    for v in fit["slope_in_R"].values():
        assert v["slope"] == pytest.approx(slopes[0], abs=1e-10)
    for v in fit["slope_in_lambda"].values():
        assert v["slope"] == pytest.approx(slopes[1], abs=1e-10)


def test_scaling_fit_drops_zero_rows():
    cells = [synthetic_cell(R, 1.0, R**4) for R in (5, 10, 20)] + [synthetic_cell(40, 1.0, 0.0)]
    fit = scaling_fit(BoundStudy(cells, "synthetic", 100, 500, 0))
    assert fit["slope_in_R"][1.0]["points"] == 3


def test_bound_shape_branches():
    assert bound_shape(10, 1e-4) == pytest.approx(1e4 * 1e-8 + 1e2 * 1e-4)
    assert bound_shape(10, 2.0) == 1e4
    assert bound_shape(10, 2.0, dim=1) == 100


def test_jackknife_of_mean_is_classical():
    x = np.random.default_rng(0).normal(size=200)
    assert jackknife_se(x, lambda m: m) == pytest.approx(x.std(ddof=1) / math.sqrt(200), rel=1e-12)


def test_zero_width_window(pw, pw_reps):
    rep = estimate_moments(pw, 6.0, 0.3, 0.3, replications=pw_reps)
    assert rep.mean == 0.0 and rep.second_moment == 0.0


def test_monotone_in_window(pw, pw_reps):
    prev = (0.0, 0.0)
    for w in (0.05, 0.2, 0.5, 1.0, 3.0, math.inf):
        rep = estimate_moments(pw, 6.0, -w, w, replications=pw_reps)
        assert rep.mean >= prev[0] and rep.second_moment >= prev[1]
        prev = (rep.mean, rep.second_moment)


def test_report_invariants(pw_reps):
    for R in (2.0, 4.0, 6.0):
        for w in (0.1, 1.0, 10.0):
            rep = report_from_counts(pw_reps.counts(R, -w, w), "plane-wave", R, -w, w, 500, 17)
            assert rep.second_moment >= rep.mean
            assert rep.second_moment >= rep.mean**2 - 3 * rep.se_second_moment
            assert 0 <= rep.p_ge2 <= rep.p_ge1 <= 1


def test_full_window_mean_matches_kac_rice(pw, pw_reps):
    rep = estimate_moments(pw, 5.0, -math.inf, math.inf, replications=pw_reps)
    i5 = intensity_I5(pw, McConfig(samples=200_000, seed=1))
    pred = math.pi * 25 * i5.estimate
    assert abs(rep.mean - pred) <= 3 * math.hypot(rep.se_mean, math.pi * 25 * i5.std_error)


def test_reproducible_and_thread_independent(pw):
    a = estimate_moments(pw, 3.0, -0.5, 0.5, reps=50, seed=5)
    b = estimate_moments(pw, 3.0, -0.5, 0.5, reps=50, seed=5)
    c = estimate_moments(pw, 3.0, -0.5, 0.5, reps=50, seed=5, threads=2)
    assert a == b == c
    assert estimate_moments(pw, 3.0, -0.5, 0.5, reps=50, seed=6) != a


def test_preconditions(pw, pw_reps):
    with pytest.raises(ValueError):
        simulate_replications(pw, 5.0, 10)
    with pytest.raises(ValueError):
        pw_reps.counts(7.0, 0, 1)
    with pytest.raises(ValueError):
        estimate_moments(pw, 5.0, 1.0, 0.0, replications=pw_reps)


def test_first_moment_negative_control():
    raw = plane_wave(amplitude=2.0)
    bad = verify_first_moment(raw, 5.0, -0.5, 0.5, reps=60, seed=3, skip_normalization=True,
                              mc=McConfig(samples=50_000, seed=0))
    assert not bad.passed
    good = verify_first_moment(raw, 5.0, -0.5, 0.5, reps=60, seed=3, mc=McConfig(samples=50_000, seed=0))
    assert good.passed


def test_study_sandwich_and_monotone_in_lambda(pw_reps):
    st_ = study_from_replications(pw_reps, (2.0, 4.0, 6.0), (0.02, 0.1, 0.5, 2.0))
    for c in st_.included:
        assert 0 < c.ratio <= st_.c_star
        assert c.fitted_constant == st_.c_star
    for R in (2.0, 4.0, 6.0):
        m2 = [c.second_moment for c in st_.cells if c.R == R]
        assert m2 == sorted(m2)
    rows = st_.rows()
    assert len(rows) == 12 and {"R", "lambda", "m2", "ratio", "excluded"} <= set(rows[0])


def test_crossover_check_cases():
    ok = crossover_check(np.array([0] * 990 + [1] * 10))
    assert ok["ratio"] == 1.0 and ok["passed"]
    many = crossover_check(np.array([0] * 900 + [2] * 100))
    assert many["ratio"] == 2.0 and not many["passed"]
    empty = crossover_check(np.zeros(100))
    assert not empty["passed"] and math.isnan(empty["ratio"])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=50, max_size=200))
def test_moment_identities(counts):
    c = np.array(counts)
    rep = report_from_counts(c, "x", 10.0, -1, 1, 500, 0)
    assert rep.second_moment >= rep.mean
    assert rep.variance == pytest.approx(np.var(c), abs=1e-9)
    assert rep.p_ge1 == np.mean(c >= 1)


def test_replications_counts_are_closed():
    reps = Replications("x", 5.0, 500, 0, [np.array([0.0, 0.5, 1.0])], [np.array([1.0, 5.0, 6.0])],
                        np.array([False]))
    assert reps.counts(5.0, 0.0, 0.5).tolist() == [2]
