import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critlab.kernel import bargmann_fock, plane_wave
from critlab.moments import BoundStudy, MomentReport, bound_shape, crossover_check, scaling_fit
from critlab.oned import (
    CriticalSet1D,
    Ensemble1D,
    check_conditions_1d,
    count_critical_1d,
    critical_points_1d,
    folded_normal_mean,
    intensity_1d,
    mean_count_1d,
    normalize_1d,
    pair_counts_1d,
    process,
    sample_process,
    simulate_replications_1d,
    verify_bound_1d,
    verify_first_moment_1d,
)


@pytest.fixture(scope="module")
def pw1():
    return normalize_1d(process(plane_wave()))


@pytest.fixture(scope="module")
def bf1():
    return normalize_1d(process(bargmann_fock()))


def cos_process():
    return Ensemble1D(np.array([1.0]), np.array([0.0]), 1.0)


def test_normalize_examples():
    g = normalize_1d(process(bargmann_fock()))
    assert g.rescale == 1.0
    # e^{-x^2}: -kappa''(0) = 2 before the rescale
    raw = process(bargmann_fock(length_scale=1 / math.sqrt(2)))
    assert raw.derivative(2, 0.0) == pytest.approx(-2.0)
    n = normalize_1d(raw)
    assert n.rescale == pytest.approx(1 / math.sqrt(2))
    three = normalize_1d(process(bargmann_fock(amplitude=3.0)))
    assert three.amplitude == 1.0
    for m in (g, n, three, normalize_1d(process(plane_wave(2.0, 5.0)))):
        assert m(0.0) == pytest.approx(1.0)
        assert m.derivative(2, 0.0) == pytest.approx(-1.0, abs=1e-14)


def test_condition_1d(pw1, bf1):
    assert check_conditions_1d(pw1).var_f2 == pytest.approx(1.5)
    assert check_conditions_1d(process(bargmann_fock())).var_f2 == pytest.approx(3.0)
    assert check_conditions_1d(bf1).passed


def test_cos_counts():
    e = cos_process()
    assert count_critical_1d(e, 5.0, 0.5, 1.5) == 1
    assert count_critical_1d(e, 5.0, 0.2, 0.3) == 0
    assert count_critical_1d(e, 5.0, -math.inf, math.inf) == 3
    cs = critical_points_1d(e, 5.0)
    np.testing.assert_allclose(cs.locations, [-math.pi, 0.0, math.pi], atol=1e-12)
    assert not cs.flagged


def test_roots_are_resolved(pw1, bf1):
    for m in (pw1, bf1):
        for seed in range(5):
            e = sample_process(m, 500, seed)
            cs = critical_points_1d(e, 40.0)
            assert not cs.flagged
            assert np.all(np.abs(e.derivative(cs.locations, 1)) <= 1e-9)
            assert np.all(np.diff(cs.locations) > 0)


def test_detector_against_fine_grid(bf1):
    e = sample_process(bf1, 500, 9)
    cs = critical_points_1d(e, 15.0)
    xs = np.linspace(-15, 15, 150_001)
    g = e.derivative(xs, 1)
    assert len(cs) == int(np.count_nonzero(g[:-1] * g[1:] < 0))


def test_folded_normal_mean():
    assert folded_normal_mean(0.0, 1.0) == pytest.approx(math.sqrt(2 / math.pi))
    assert folded_normal_mean(-2.5, 0.0) == 2.5
    x = np.random.default_rng(0).normal(0.7, 1.3, size=10**6)
    assert folded_normal_mean(0.7, 1.3) == pytest.approx(np.abs(x).mean(), abs=4e-3)


def test_rice_formula_oracle(pw1, bf1):
    # full-window mean count on [-R, R] is 2R sqrt(m4) / pi
    for m, m4 in ((pw1, 1.5), (bf1, 3.0)):
        assert mean_count_1d(m, 10.0, -12.0, 12.0) == pytest.approx(20 * math.sqrt(m4) / math.pi, rel=1e-7)
        assert intensity_1d(m, [0.4])[0] == pytest.approx(intensity_1d(m, [-0.4])[0], rel=1e-12)
    assert mean_count_1d(pw1, 10.0, 0.1, 0.1) == 0.0


def test_first_moment_small(pw1):
    rep = verify_first_moment_1d(pw1, 20.0, -0.5, 0.5, reps=100, seed=4)
    assert rep.passed


def test_pair_counts_1d():
    cs = CriticalSet1D(np.array([0.0, 0.4, 3.0]), np.array([0.0, 0.1, 0.2]), np.zeros(3), 5.0)
    assert pair_counts_1d(cs, -1, 1, 0.5) == (4, 2, 3)
    with pytest.raises(ValueError):
        pair_counts_1d(cs, -1, 1, 0.0)


@settings(max_examples=300, deadline=None)
@given(n=st.integers(0, 25), seed=st.integers(0, 2**32 - 1), delta=st.floats(0.01, 3.0))
def test_pair_identity_1d(n, seed, delta):
    rng = np.random.default_rng(seed)
    cs = CriticalSet1D(rng.uniform(-5, 5, n), rng.normal(size=n), np.zeros(n), 5.0)
    n1, n2, n3 = pair_counts_1d(cs, -1.0, 1.0, delta)
    assert n1 + n2 + n3 == n3**2


def test_synthetic_slope_1d():
    cells = [MomentReport("s", R, -lam / 2, lam / 2, 100, 500, 0, 1.0, R**2 * lam**2, 0, 0, 0, 0, 1, 1,
                          bound_shape(R, lam, 1), dim=1)
             for R in (20, 40, 80) for lam in (0.1, 2.0)]
    fit = scaling_fit(BoundStudy(cells, "s", 100, 500, 0, dim=1))
    assert fit["slope_in_R"][2.0]["slope"] == pytest.approx(2.0)


def test_small_study_and_crossover(bf1):
    reps = simulate_replications_1d(bf1, 40.0, 60, seed=2)
    st_ = verify_bound_1d(bf1, (10, 20, 40), replications=reps)
    assert st_.dim == 1 and st_.slope_target == 2.0
    assert st_.slope == pytest.approx(2.0, abs=0.5)
    cross = crossover_check(reps.counts(10.0, -5e-4, 5e-4))
    assert cross["p_ge2"] < 0.05


def test_sampling_preconditions(pw1):
    with pytest.raises(ValueError):
        sample_process(pw1, 4, 0)
    with pytest.raises(ValueError):
        sample_process(process(plane_wave()), 100, 0)
    with pytest.raises(ValueError):
        simulate_replications_1d(pw1, 10.0, 5)
    with pytest.raises(ValueError):
        count_critical_1d(cos_process(), 5.0, 1.0, 0.0)
