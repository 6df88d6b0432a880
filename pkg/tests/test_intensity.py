import math

import numpy as np
import pytest

from critlab.intensity import (
    McConfig,
    bound_predict,
    hessian_law,
    integrate_I3,
    intensity,
    intensity_I1,
    intensity_I2,
    intensity_I3,
    intensity_I4,
    intensity_I5,
    mean_count,
    near_diagonal_asymptotics,
)

MC = McConfig(samples=100_000, seed=3)


def z_score(a, b):
    if a.estimate == b.estimate:
        return 0.0  # e.g. both densities underflow for close pairs at distant heights
    return abs(a.estimate - b.estimate) / math.hypot(a.std_error, b.std_error)


def gauss_hermite_abs_det(var11, var22, var12, nodes=120):
    """E|h11 h22 - h12^2| for independent centred normals, tensor Gauss-Hermite."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    a = math.sqrt(var11) * x[:, None, None]
    b = math.sqrt(var22) * x[None, :, None]
    c = math.sqrt(var12) * x[None, None, :]
    ww = w[:, None, None] * w[None, :, None] * w[None, None, :]
    return float(np.sum(ww * np.abs(a * b - c * c)))


def test_density_factor_at_zero(pw, bf):
    for m in (pw, bf):
        law = hessian_law(m, 0.0, "x")
        assert law.density(np.array([[0.0]]))[0] == pytest.approx((2 * math.pi) ** -1.5, rel=1e-14)


def test_bf_I3_against_gauss_hermite(bf):
    # given f = 0, grad f = 0: h11, h22 ~ N(0, 2) independent, h12 ~ N(0, 1)
    law = hessian_law(bf, 0.0, "x")
    np.testing.assert_allclose(law.cond_cov, [[2, 0, 0], [0, 1, 0], [0, 0, 2]], atol=1e-12)
    ref = (2 * math.pi) ** -1.5 * gauss_hermite_abs_det(2.0, 2.0, 1.0)
    v = intensity_I3(bf, 0.0, McConfig(samples=200_000, seed=1))
    assert abs(v.estimate - ref) <= 3 * v.std_error


def test_pw_I3_at_zero_is_exact(pw):
    # plane wave: f = 0 forces h22 = -h11, so |det| = h11^2 + h12^2 with mean 1
    v = intensity_I3(pw, 0.0, MC)
    assert abs(v.estimate - (2 * math.pi) ** -1.5) <= 3 * v.std_error


def test_I5_closed_forms(pw, bf):
    # expected critical-point density: sqrt(m40 m22) ... = 1/(sqrt 3 pi) and 2/(sqrt 3 pi)
    for m, ref in ((pw, 1 / (math.sqrt(3) * math.pi)), (bf, 2 / (math.sqrt(3) * math.pi))):
        v = intensity_I5(m, MC)
        assert abs(v.estimate - ref) <= 3 * v.std_error


@pytest.mark.parametrize("s", [0.3, 1.0, 2.2])
def test_I3_positive_and_symmetric(pw, bf, s):
    for m in (pw, bf):
        p, q = intensity_I3(m, s, MC), intensity_I3(m, -s, MC)
        assert p.estimate > 0 and q.estimate > 0
        assert z_score(p, q) <= 3 or abs(p.estimate - q.estimate) <= 1e-12


def test_I5_equals_integral_of_I3(pw, bf):
    for m in (pw, bf):
        tot = integrate_I3(m, -math.inf, math.inf, MC)
        i5 = intensity_I5(m, McConfig(samples=100_000, seed=9))
        assert z_score(tot, i5) <= 3


def test_mean_count_examples(pw):
    assert mean_count(pw, 10, 0.2, 0.2).estimate == 0.0
    full = mean_count(pw, 10, -math.inf, math.inf, MC)
    i5 = intensity_I5(pw, McConfig(samples=100_000, seed=5))
    assert abs(full.estimate - math.pi * 100 * i5.estimate) <= 3 * math.hypot(
        full.std_error, math.pi * 100 * i5.std_error)
    with pytest.raises(ValueError):
        mean_count(pw, 10, 1.0, 0.0)


def test_estimates_nonnegative_and_echo_inputs(pw):
    for which in range(1, 6):
        v = intensity(pw, which, r=0.8, s=0.4, t=-0.2, mc=McConfig(samples=10_000, seed=0))
        assert v.estimate >= 0 and v.std_error >= 0
        assert v.to_dict()["which"] == which
        assert v.samples == 10_000
    with pytest.raises(ValueError):
        intensity(pw, 6)
    with pytest.raises(ValueError):
        intensity_I1(pw, 0.0, 0.0, 0.0)


def test_se_shrinks_by_root_two(bf):
    small = intensity_I2(bf, 0.7, 0.3, McConfig(samples=50_000, seed=2))
    large = intensity_I2(bf, 0.7, 0.3, McConfig(samples=100_000, seed=2))
    assert small.std_error / large.std_error == pytest.approx(math.sqrt(2), rel=0.2)


def test_exchange_symmetry(pw, bf):
    rng = np.random.default_rng(8)
    bad = 0
    for k in range(20):
        m = pw if k % 2 else bf
        r, s, t = rng.uniform(0.2, 6), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)
        mc = McConfig(samples=20_000, seed=k)
        a = intensity_I1(m, r, s, t, mc)
        b = intensity_I1(m, r, t, s, McConfig(samples=20_000, seed=100 + k))
        bad += z_score(a, b) > 3
    assert bad == 0


def test_seed_consistency_pw_r1(pw):
    a = intensity_I1(pw, 1.0, 0.0, 0.0, McConfig(samples=100_000, seed=1))
    b = intensity_I1(pw, 1.0, 0.0, 0.0, McConfig(samples=100_000, seed=2))
    assert z_score(a, b) <= 3


def test_same_seed_is_bit_identical(bf):
    a = intensity_I4(bf, 2.0, McConfig(samples=30_000, seed=7, batch=10_000))
    b = intensity_I4(bf, 2.0, McConfig(samples=30_000, seed=7, batch=10_000))
    assert a.estimate == b.estimate and a.std_error == b.std_error


def test_bf_factorization_far_apart(bf):
    mc1, mc2, mc3 = (McConfig(samples=100_000, seed=k) for k in (1, 2, 3))
    i1 = intensity_I1(bf, 50.0, 0.5, -0.5, mc1)
    p, q = intensity_I3(bf, 0.5, mc2), intensity_I3(bf, -0.5, mc3)
    prod = p.estimate * q.estimate
    se = math.hypot(i1.std_error, math.hypot(p.estimate * q.std_error, q.estimate * p.std_error))
    assert abs(i1.estimate - prod) <= 3 * se


def test_bound_predict_baseline_and_monotone(pw):
    mc = McConfig(samples=10_000, seed=0)
    kw = dict(delta=1.0, mc=mc, n_r=16, n_heights=9)
    reps = [bound_predict(pw, 10.0, 0.0, w, **kw) for w in (0.02, 0.1, 0.5)]
    base = reps[1]
    for t in (base.term_off_diagonal, base.term_near_diagonal, base.term_on_diagonal):
        assert math.isfinite(t) and t > 0
    totals = [r.windowed for r in reps]
    assert totals == sorted(totals)
    # tiny windows sit in the windowed regime; the unwindowed term does not depend on the window
    assert reps[0].regime == "windowed"
    wide = bound_predict(pw, 10.0, -4.0, 4.0, **kw)
    assert wide.regime == "unwindowed"
    assert wide.unwindowed == pytest.approx(base.unwindowed, rel=1e-12)


@pytest.mark.parametrize("kind,det4,sig1", [("pw", 0.25, 1 / 3), ("bf", 2.0, 2 / 3)])
def test_near_diagonal_limits(pw, bf, kind, det4, sig1):
    m = pw if kind == "pw" else bf
    rep = near_diagonal_asymptotics(m, np.geomspace(1e-1, 1e-3, 9))
    assert rep.predicted_det4 == pytest.approx(det4, rel=1e-9)
    assert rep.predicted_sigma1_sq == pytest.approx(sig1, rel=1e-9)
    assert rep.limit_det4 == pytest.approx(det4, rel=1e-6)
    assert rep.limit_sigma1_sq == pytest.approx(sig1, rel=1e-6)
    assert max(rep.n_over_r2) / min(rep.n_over_r2) <= 3
    assert not any(rep.flagged)


def test_asymptotics_flags_tiny_radii(pw):
    rep = near_diagonal_asymptotics(pw, [1e-1, 3e-2, 1e-2, 1e-3, 5e-5])
    assert rep.flagged == [False, False, False, False, True]
    with pytest.raises(ValueError):
        near_diagonal_asymptotics(pw, [1.0, 0.1])
