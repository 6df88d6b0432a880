"""Acceptance criteria 1-11.

Each test records a one-line verdict that the terminal summary prints
under "acceptance criteria".  Slow studies carry the ``slow`` marker but
run by default.
"""
import json
import math
import time

import numpy as np
import pytest
from conftest import record

from critlab import gauss
from critlab.cli import run
from critlab.critpoints import count_in_window, find_critical_points
from critlab.intensity import (
    McConfig,
    intensity_I1,
    intensity_I2,
    intensity_I3,
    intensity_I4,
    intensity_I5,
    near_diagonal_asymptotics,
)
from critlab.kernel import bargmann_fock, normalize, plane_wave
from critlab.moments import crossover_check, simulate_replications, verify_first_moment, verify_second_moment_bound
from critlab.oned import (
    Ensemble1D,
    count_critical_1d,
    normalize_1d,
    process,
    simulate_replications_1d,
    verify_bound_1d,
    verify_first_moment_1d,
)
from critlab.simulate import WaveEnsemble

MC_POINT = 200_000


def test_c01_closed_form_lemma_suite():
    t0 = time.perf_counter()
    res = gauss.lemma_suite(trials=10_000, seed=0)
    dt = time.perf_counter() - t0
    ok = res["max_rel_err"] <= 1e-10 and dt < 5.0
    record(1, ok, f"max rel err {res['max_rel_err']:.2e} over 10^4 draws, {dt:.2f} s")
    assert ok


def test_c02_maximizer_suite():
    sup = gauss.det_sup_suite(trials=1000, seed=0, points=201)
    order = gauss.bound_order_suite(trials=1000, seed=0)
    ok = sup["max_rel_err"] <= 1e-6 and sup["grid_exceeds_closed"] == 0 and order["violations"] == 0
    record(2, ok, f"sup rel err {sup['max_rel_err']:.2e}, grid above closed form "
                  f"{sup['grid_exceeds_closed']}, bound order violations {order['violations']}")
    assert ok


def test_c03_regression_identities(pw, bf):
    worst = 0.0
    for m in (pw, bf):
        for r in np.geomspace(1e-3, 50, 40):
            s = gauss.assemble_sigma(m, (0.0, 0.0), (float(r), 0.0))
            worst = max(worst,
                        abs(s.det_sigma2 * s.det_sigma1 - s.det_sigma3) / abs(s.det_sigma3),
                        abs(s.sigma1_sq * s.det_sigma2 - s.det_sigma4) / abs(s.det_sigma4))
    ok = worst <= 1e-8
    record(3, ok, f"max rel deviation {worst:.2e} over 40 radii, both kernels")
    assert ok


def test_c04_near_diagonal_asymptotics(pw, bf):
    r_list = np.geomspace(1e-1, 1e-3, 9)
    parts, ok = [], True
    for name, m, det4, sig1 in (("pw", pw, 0.25, 1 / 3), ("bf", bf, 2.0, 2 / 3)):
        rep = near_diagonal_asymptotics(m, r_list)
        e_det = abs(rep.limit_det4 / det4 - 1)
        e_sig = abs(rep.limit_sigma1_sq / sig1 - 1)
        span = max(rep.n_over_r2) / min(rep.n_over_r2)
        # the targets themselves come from the spectral moments
        ok &= abs(rep.predicted_det4 - det4) < 1e-9 and abs(rep.predicted_sigma1_sq - sig1) < 1e-9
        ok &= e_det <= 0.02 and e_sig <= 0.02 and span <= 3
        parts.append(f"{name} det4/r^4 {rep.limit_det4:.6f} sigma1^2 {rep.limit_sigma1_sq:.6f} N/r^2 span {span:.3f}")
    record(4, ok, "; ".join(parts))
    assert ok


def _z(est, ref, se):
    return abs(est - ref) / se if se > 0 else (0.0 if est == ref else math.inf)


def _factorization(m, r, seed0):
    """Worst z-scores of I1(r,s,t) - I3(s)I3(t) and I4(r) - I5^2 with independent draws."""
    hs = (-1.0, 0.0, 1.0)
    i3 = {s: intensity_I3(m, s, McConfig(MC_POINT, seed0 + k)) for k, s in enumerate(hs)}
    i3b = {s: intensity_I3(m, s, McConfig(MC_POINT, seed0 + 10 + k)) for k, s in enumerate(hs)}
    worst1 = 0.0
    for k, (s, t) in enumerate([(s, t) for s in hs for t in hs]):
        v = intensity_I1(m, r, s, t, McConfig(MC_POINT, seed0 + 100 + k))
        p, q = i3[s], i3b[t]
        se = math.sqrt(v.std_error**2 + (p.estimate * q.std_error) ** 2 + (q.estimate * p.std_error) ** 2)
        worst1 = max(worst1, _z(v.estimate, p.estimate * q.estimate, se))
    i4 = intensity_I4(m, r, McConfig(MC_POINT, seed0 + 200))
    a, b = intensity_I5(m, McConfig(MC_POINT, seed0 + 201)), intensity_I5(m, McConfig(MC_POINT, seed0 + 202))
    se = math.sqrt(i4.std_error**2 + (a.estimate * b.std_error) ** 2 + (b.estimate * a.std_error) ** 2)
    return worst1, _z(i4.estimate, a.estimate * b.estimate, se)


def _i2_ratios(m, seed0):
    out = {}
    for k, s in enumerate((-1.0, 0.0, 1.0)):
        a = intensity_I2(m, 1e-2, s, McConfig(MC_POINT, seed0 + k))
        b = intensity_I2(m, 1e-3, s, McConfig(MC_POINT, seed0 + 10 + k))
        out[s] = a.estimate / b.estimate
    return out


@pytest.mark.slow
def test_c05_intensity_boundedness(bf):
    t0 = time.perf_counter()
    ratios = _i2_ratios(bf, 500)
    z1, z4 = _factorization(bf, 50.0, 700)
    dt = time.perf_counter() - t0
    ok_i2 = all(0.5 <= v <= 2.0 for v in ratios.values())
    ok = ok_i2 and z1 <= 3 and z4 <= 3 and dt < 600
    rr = ", ".join(f"s={s:+.0f}: {v:.3f}" for s, v in ratios.items())
    record(5, ok, f"bargmann-fock I2(1e-2)/I2(1e-3) [{rr}]; max z I1 vs I3 I3 {z1:.2f}, "
                  f"I4 vs I5^2 {z4:.2f} at r=50; {dt:.0f} s")
    assert ok


@pytest.mark.slow
def test_c05_plane_wave_supplement(pw):
    """Plane wave: conditioning on f = 0 makes the Hessian traceless, so
    I2(r, 0) vanishes like r^2 instead of staying comparable across r; only
    the absence of blow-up is checked there.  J0 correlations decay like
    r^-1/2, so factorization is checked far out."""
    ratios = _i2_ratios(pw, 900)
    assert 0.5 <= ratios[1.0] <= 2.0 and 0.5 <= ratios[-1.0] <= 2.0
    # no blow-up: I2 shrinks (roughly 100x) rather than grows as r decreases
    assert ratios[0.0] >= 0.5
    z1, z4 = _factorization(pw, 1e6, 1100)
    assert z1 <= 3 and z4 <= 3


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["plane-wave", "bargmann-fock"])
def test_c06_first_moment_consistency(kind):
    m = normalize(plane_wave() if kind == "plane-wave" else bargmann_fock())
    t0 = time.perf_counter()
    rep = verify_first_moment(m, 10.0, -0.5, 0.5, reps=400, seed=2024, M=500,
                              mc=McConfig(samples=MC_POINT, seed=1))
    dt = time.perf_counter() - t0
    ok = rep.passed and rep.moments.low_confidence_rate <= 0.02
    prev = _merge(6, ok, f"{kind} {rep.empirical:.3f}+-{rep.empirical_se:.3f} vs {rep.predicted:.3f} "
                          f"(tol {rep.tolerance:.3f}, {dt:.0f} s)")
    assert ok and dt < 900, prev


def _merge(criterion, ok, detail):
    """Criteria with several parametrized parts are reported on one line."""
    from conftest import ACCEPTANCE

    old_ok, old = ACCEPTANCE.get(criterion, (True, ""))
    record(criterion, old_ok and ok, f"{old}; {detail}" if old else detail)
    return detail


@pytest.mark.slow
def test_c07_bound_shape_study(pw):
    t0 = time.perf_counter()
    st = verify_second_moment_bound(pw, (5, 10, 20), (0.02, 0.1, 0.5, 2.0), reps=400, seed=7, M=500)
    dt = time.perf_counter() - t0
    ok = st.passed and not st.excluded and dt < 1800
    record(7, ok, f"plane-wave ratio span {st.ratio_span:.2f} (<= 10), slope at lambda=2 {st.slope:.3f} "
                  f"(4 +- 0.3), c* {st.c_star:.3g}, excluded {len(st.excluded)}, {dt:.0f} s")
    assert ok


@pytest.mark.slow
def test_c08_crossover(pw):
    t0 = time.perf_counter()
    reps = simulate_replications(pw, 10.0, 10_000, M=500, seed=8)
    res = crossover_check(reps.counts(10.0, -0.5e-4, 0.5e-4))
    dt = time.perf_counter() - t0
    record(8, res["passed"], f"plane-wave R=10 lambda=1e-4: E N^2/E N {res['ratio']:.4f} +- {res['se']:.4f}, "
                             f"P[N>=2] {res['p_ge2']:.4f}, E N {res['mean']:.4f}, {dt:.0f} s")
    assert res["passed"]


def test_c09_deterministic_detector():
    ens = WaveEnsemble(np.eye(2), np.zeros(2), 1.0, None, "cos")
    cps = find_critical_points(ens, 5.0)
    n, w = len(cps), count_in_window(cps, -0.5, 0.5)
    ok = n == 9 and w == 4
    record(9, ok, f"cos x1 + cos x2 in B_5: {n} critical points, {w} in [-0.5, 0.5]")
    assert ok


@pytest.mark.slow
def test_c10_one_dimensional_study():
    pm = normalize_1d(process(plane_wave()))
    reps = simulate_replications_1d(pm, 80.0, 400, seed=10)
    st = verify_bound_1d(pm, (20, 40, 80), replications=reps)
    fm = verify_first_moment_1d(pm, 20.0, -0.5, 0.5, rel=0.0, replications=reps)
    cos = Ensemble1D(np.array([1.0]), np.array([0.0]), 1.0)
    cos_ok = count_critical_1d(cos, 5.0, 0.5, 1.5) == 1 and count_critical_1d(cos, 5.0, -math.inf, math.inf) == 3
    ok = abs(st.slope - 2.0) <= 0.3 and fm.passed and cos_ok
    record(10, ok, f"slope at lambda=2 {st.slope:.3f} (2 +- 0.3); mean {fm.empirical:.3f}+-{fm.empirical_se:.3f} "
                   f"vs {fm.predicted:.3f}; cos counts {'exact' if cos_ok else 'wrong'}")
    assert ok


STOCHASTIC = [
    ["lemma", "check", "--trials", "200", "--det-trials", "20", "--seed", "3"],
    ["intensity", "eval", "--which", "1", "--r", "0.8", "--s", "0.1", "--t", "-0.2", "--samples", "20000", "--seed", "4"],
    ["bound", "predict", "--R", "5", "--a", "0", "--b", "0.1", "--delta", "1", "--samples", "4000", "--seed", "5"],
    ["simulate", "count", "--R", "5", "--seed", "6"],
    ["moments", "estimate", "--R", "3", "--reps", "50", "--M", "200", "--seed", "7"],
    ["verify", "first-moment", "--R", "3", "--reps", "50", "--M", "200", "--samples", "20000", "--seed", "8"],
    ["verify", "bound", "--R-list", "2,3,4", "--reps", "50", "--M", "200", "--seed", "9"],
    ["verify", "bound-1d", "--R-list", "5,10,20", "--reps", "50", "--M", "200", "--seed", "10"],
]


def test_c11_determinism(capsys):
    same = []
    for argv in STOCHASTIC:
        outs = []
        for _ in range(2):
            run(argv + ["--threads", "1"])
            outs.append(json.loads(capsys.readouterr().out))
        same.append(outs[0] == outs[1] and outs[0]["outputs"])
    ok = all(same)
    record(11, ok, f"{sum(map(bool, same))}/{len(same)} stochastic commands bit-identical across two runs")
    assert ok
