"""Kac-Rice intensities I1..I5 by conditional Monte Carlo.

Each intensity is a Gaussian density at (heights, 0) times a conditional
expectation of |det| of one or two Hessians.  The conditional law is
computed once per separation ``r`` at extended precision (see
:func:`hessian_law`) and then evaluated for any number of heights with
common random numbers, so estimates are smooth in the heights and in ``r``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
from scipy import optimize

from . import gauss
from .gauss import F, GRAD, HESS, observations
from .kernel import MP_DPS, KernelModel

R_FAR = 50.0


@dataclass
class McConfig:
    samples: int = 100_000
    seed: int = 0
    batch: int = 50_000
    antithetic: bool = True

    def __post_init__(self):
        if self.samples < 2 or self.batch < 2:
            raise ValueError("samples and batch must be >= 2")


@dataclass
class IntensityValue:
    estimate: float
    std_error: float
    samples: int
    seed: int
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = dict(self.inputs)
        out.update(estimate=self.estimate, std_error=self.std_error,
                   samples=self.samples, seed=self.seed)
        return out


# --------------------------------------------------------------------------
# conditional Hessian laws
# --------------------------------------------------------------------------


@dataclass
class HessianLaw:
    """Law of one or two Hessians given heights and vanishing gradients.

    ``density(h)`` is the Gaussian density of the conditioning vector at
    (h, 0); the Hessians given (h, 0) are ``mean_coef @ h + root @ z``.
    """

    n_hess: int
    n_heights: int
    log_norm: float
    height_quad: np.ndarray
    mean_coef: np.ndarray
    root: np.ndarray
    cond_cov: np.ndarray

    def density(self, heights: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(heights)
        if self.n_heights == 0:
            return np.full(h.shape[0], math.exp(self.log_norm))
        q = np.einsum("ni,ij,nj->n", h, self.height_quad, h)
        return np.exp(self.log_norm - 0.5 * q)


def hessian_law(model: KernelModel, r: float, heights: str, dps: int = MP_DPS) -> HessianLaw:
    """Build the conditional law for the pair x = 0, y = (r, 0).

    ``heights`` is ``"xy"`` (I1), ``"x"`` (I2, I3) or ``""`` (I4, I5).  For
    ``r == 0`` only the point x is used (I3, I5).
    """
    single = r == 0
    pts = [(0.0, 0.0), (float(r), 0.0)]
    cond_obs = []
    if "x" in heights:
        cond_obs += observations(0, F)
    if "y" in heights:
        if single:
            raise ValueError("height at y needs r > 0")
        cond_obs += observations(1, F)
    cond_obs += observations(0, GRAD)
    if not single:
        cond_obs += observations(1, GRAD)
    tgt_obs = observations(0, HESS) + ([] if single else observations(1, HESS))
    n_t, n_c, n_h = len(tgt_obs), len(cond_obs), len(heights)
    with mp.workdps(dps):
        joint = gauss.joint_covariance(model, pts, tgt_obs + cond_obs, exact=True)
        coef, cond = gauss.conditional_law(joint, n_t, exact=True)
        szz = gauss._block(joint, list(range(n_t, n_t + n_c)), list(range(n_t, n_t + n_c)))
        det_c = mp.det(szz)
        if not det_c > 0:
            raise gauss.DegenerateCovarianceError("conditioning vector is degenerate")
        log_norm = float(-0.5 * n_c * mp.log(2 * mp.pi) - 0.5 * mp.log(det_c))
        if n_h:
            inv_h = gauss._mp_solve(szz, gauss._block(mp.eye(n_c), list(range(n_c)), list(range(n_h))))
            height_quad = gauss.to_float(gauss._block(inv_h, list(range(n_h)), list(range(n_h))))
        else:
            height_quad = np.zeros((0, 0))
        coef_f = gauss.to_float(coef)[:, :n_h]
        cond_f = gauss.to_float(cond)
    cond_f = 0.5 * (cond_f + cond_f.T)
    w, v = np.linalg.eigh(cond_f)
    # rank-revealing square root: tiny negative eigenvalues from rounding are clipped
    w = np.where(w > 1e-14 * max(1.0, w.max()), w, 0.0)
    root = v * np.sqrt(w)
    return HessianLaw(
        n_hess=n_t // 3, n_heights=n_h, log_norm=log_norm,
        height_quad=0.5 * (height_quad + height_quad.T),
        mean_coef=coef_f, root=root, cond_cov=cond_f,
    )


def _batches(mc: McConfig):
    n_draw = mc.samples // 2 if mc.antithetic else mc.samples
    b = 0
    done = 0
    while done < n_draw:
        k = min(mc.batch, n_draw - done)
        rng = np.random.default_rng(np.random.SeedSequence(mc.seed, spawn_key=(b,)))
        yield rng, k
        done += k
        b += 1


def _abs_dets(law: HessianLaw, mu: np.ndarray, w: np.ndarray) -> np.ndarray:
    """|det H_x| (or |det H_x det H_y|) for H = mu + w, w of shape (n, 3k)."""
    h = w + mu
    out = np.abs(h[:, 0] * h[:, 2] - h[:, 1] ** 2)
    if law.n_hess == 2:
        out *= np.abs(h[:, 3] * h[:, 5] - h[:, 4] ** 2)
    return out


def conditional_abs_det(law: HessianLaw, heights, mc: McConfig):
    """Per-sample contributions of E[|det ...| | heights, grads = 0].

    Returns an array of shape (n_heights_points, n_samples_eff) whose row
    means are the conditional expectations; with antithetic pairing each
    column is already the average over a +-z pair.
    """
    h = np.atleast_2d(np.asarray(heights, dtype=float)).reshape(-1, law.n_heights) \
        if law.n_heights else np.zeros((1, 0))
    mus = h @ law.mean_coef.T if law.n_heights else np.zeros((1, law.root.shape[0]))
    chunks = []
    for rng, k in _batches(mc):
        z = rng.standard_normal((k, law.root.shape[1]))
        w = z @ law.root.T
        vals = np.empty((mus.shape[0], k))
        for i, mu in enumerate(mus):
            v = _abs_dets(law, mu, w)
            if mc.antithetic:
                v = 0.5 * (v + _abs_dets(law, mu, -w))
            vals[i] = v
        chunks.append(vals)
    return np.concatenate(chunks, axis=1)


def evaluate_law(law: HessianLaw, heights, mc: McConfig):
    """Intensity estimates and standard errors at each row of ``heights``."""
    vals = conditional_abs_det(law, heights, mc)
    h = np.atleast_2d(np.asarray(heights, dtype=float)).reshape(-1, law.n_heights) \
        if law.n_heights else np.zeros((1, 0))
    dens = law.density(h)
    n = vals.shape[1]
    est = dens * vals.mean(axis=1)
    se = dens * vals.std(axis=1, ddof=1) / math.sqrt(n)
    return est, se


def _value(est, se, mc, **inputs) -> IntensityValue:
    return IntensityValue(float(est), float(se), mc.samples, mc.seed, inputs)


def intensity_I3(model: KernelModel, s: float, mc: McConfig | None = None) -> IntensityValue:
    """gamma3(s, 0) * E[|det H(x)| | f(x) = s, grad f(x) = 0]."""
    mc = mc or McConfig()
    law = hessian_law(model, 0.0, "x")
    est, se = evaluate_law(law, [[s]], mc)
    return _value(est[0], se[0], mc, which=3, s=s)


def intensity_I5(model: KernelModel, mc: McConfig | None = None) -> IntensityValue:
    mc = mc or McConfig()
    law = hessian_law(model, 0.0, "")
    est, se = evaluate_law(law, None, mc)
    return _value(est[0], se[0], mc, which=5)


def intensity_I1(model: KernelModel, r: float, s: float, t: float,
                 mc: McConfig | None = None) -> IntensityValue:
    mc = mc or McConfig()
    if not r > 0:
        raise ValueError("r must be positive")
    law = hessian_law(model, r, "xy")
    est, se = evaluate_law(law, [[s, t]], mc)
    return _value(est[0], se[0], mc, which=1, r=r, s=s, t=t)


def intensity_I2(model: KernelModel, r: float, s: float, mc: McConfig | None = None) -> IntensityValue:
    mc = mc or McConfig()
    if not r > 0:
        raise ValueError("r must be positive")
    law = hessian_law(model, r, "x")
    est, se = evaluate_law(law, [[s]], mc)
    return _value(est[0], se[0], mc, which=2, r=r, s=s)


def intensity_I4(model: KernelModel, r: float, mc: McConfig | None = None) -> IntensityValue:
    mc = mc or McConfig()
    if not r > 0:
        raise ValueError("r must be positive")
    law = hessian_law(model, r, "")
    est, se = evaluate_law(law, None, mc)
    return _value(est[0], se[0], mc, which=4, r=r)


def intensity(model: KernelModel, which: int, r: float = 1.0, s: float = 0.0, t: float = 0.0,
              mc: McConfig | None = None) -> IntensityValue:
    if which == 1:
        return intensity_I1(model, r, s, t, mc)
    if which == 2:
        return intensity_I2(model, r, s, mc)
    if which == 3:
        return intensity_I3(model, s, mc)
    if which == 4:
        return intensity_I4(model, r, mc)
    if which == 5:
        return intensity_I5(model, mc)
    raise ValueError(f"no intensity I{which}")


# --------------------------------------------------------------------------
# Kac-Rice mean
# --------------------------------------------------------------------------

HEIGHT_CLIP = 10.0


def integrate_I3(model: KernelModel, a: float, b: float, mc: McConfig | None = None,
                 rtol: float = 1e-5, max_nodes: int = 512) -> IntensityValue:
    """int_a^b I3(s) ds by Gauss-Legendre with node doubling.

    All nodes share the same draws, so the estimator is a single Monte Carlo
    average and its standard error is exact for that average.
    """
    mc = mc or McConfig()
    if a > b:
        raise ValueError("need a <= b")
    lo, hi = max(a, -HEIGHT_CLIP), min(b, HEIGHT_CLIP)
    if hi <= lo:
        return _value(0.0, 0.0, mc, a=a, b=b)
    law = hessian_law(model, 0.0, "x")
    prev = None
    n = 16
    while True:
        x, w = np.polynomial.legendre.leggauss(n)
        s = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * w
        vals = conditional_abs_det(law, s[:, None], mc)
        per_sample = (w * law.density(s[:, None])) @ vals
        est = float(per_sample.mean())
        se = float(per_sample.std(ddof=1) / math.sqrt(per_sample.size))
        if prev is not None and abs(est - prev) <= rtol * abs(est) or 2 * n > max_nodes:
            return _value(est, se, mc, a=a, b=b, nodes=n)
        prev = est
        n *= 2


def mean_count(model: KernelModel, R: float, a: float, b: float,
               mc: McConfig | None = None) -> IntensityValue:
    """E N_R[a, b] = pi R^2 int_a^b I3(s) ds (stationarity)."""
    mc = mc or McConfig()
    if a > b:
        raise ValueError("need a <= b")
    if a == b:
        return _value(0.0, 0.0, mc, R=R, a=a, b=b)
    v = integrate_I3(model, a, b, mc)
    area = math.pi * R**2
    return _value(area * v.estimate, area * v.std_error, mc, R=R, a=a, b=b)


# --------------------------------------------------------------------------
# bound predictions
# --------------------------------------------------------------------------


@dataclass
class BoundReport:
    R: float
    a: float
    b: float
    delta: float
    term_off_diagonal: float
    term_near_diagonal: float
    term_on_diagonal: float
    windowed: float
    unwindowed: float
    sup_I1: float
    sup_I2: float
    sup_I3: float
    sup_I4: float
    I5: float
    argsup: dict
    caveat: str = ("sups are maxima over finite r and height grids with golden-section "
                   "refinement in r; they are lower estimates of the true suprema")

    @property
    def total(self) -> float:
        return min(self.windowed, self.unwindowed)

    @property
    def regime(self) -> str:
        return "windowed" if self.windowed <= self.unwindowed else "unwindowed"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(total=self.total, regime=self.regime)
        return d


def chebyshev_heights(a: float, b: float, n: int = 33) -> np.ndarray:
    if a == b:
        return np.array([a])
    k = np.arange(n)
    return 0.5 * (a + b) + 0.5 * (b - a) * np.cos(np.pi * (2 * k + 1) / (2 * n))[::-1]


def _sup_over_r(model, heights_kind, hpts, r_grid, mc, refine=True):
    """Max over r in r_grid (plus golden refinement) and over height points."""
    def best_at(r):
        law = hessian_law(model, r, heights_kind)
        est, _ = evaluate_law(law, hpts, mc)
        i = int(np.argmax(est))
        return float(est[i]), i

    vals = [best_at(r) for r in r_grid]
    i = int(np.argmax([v[0] for v in vals]))
    best, best_r, best_h = vals[i][0], float(r_grid[i]), vals[i][1]
    if refine and 0 < i < len(r_grid) - 1:
        lo, hi = math.log(r_grid[i - 1]), math.log(r_grid[i + 1])
        res = optimize.minimize_scalar(lambda lr: -best_at(math.exp(lr))[0],
                                       bracket=(lo, math.log(r_grid[i]), hi),
                                       method="golden", options={"xtol": 1e-2, "maxiter": 12})
        if -res.fun > best and lo <= res.x <= hi:
            best, best_r = float(-res.fun), float(math.exp(res.x))
            best_h = best_at(best_r)[1]
    return best, best_r, best_h


def choose_delta(model: KernelModel, candidates=(1.0, 0.5, 0.25), n_grid: int = 64,
                 r_max: float = R_FAR) -> float:
    """Largest delta for which no pair with r >= delta is flagged degenerate."""
    for delta in sorted(candidates, reverse=True):
        grid = np.geomspace(delta, r_max, n_grid)
        if not any(gauss.assemble_sigma(model, (0, 0), (r, 0), dps=30).degenerate for r in grid):
            return delta
    return min(candidates)


def bound_predict(model: KernelModel, R: float, a: float, b: float, delta: float | None = None,
                  mc: McConfig | None = None, n_r: int = 64, n_heights: int = 33,
                  r_min: float = 1e-3, r_max: float = R_FAR) -> BoundReport:
    """Evaluate the three windowed terms and the unwindowed pair (unit constants)."""
    mc = mc or McConfig(samples=20_000)
    if a > b:
        raise ValueError("need a <= b")
    if delta is None:
        delta = choose_delta(model)
    if not delta > 0:
        raise ValueError("delta must be positive")
    area = math.pi * R**2
    lam = b - a
    hs = chebyshev_heights(a, b, n_heights)
    hh = np.array([(s, t) for i, s in enumerate(hs) for t in hs[i:]])

    far = np.geomspace(delta, r_max, n_r)
    near = np.geomspace(r_min * delta, delta, n_r)
    full = np.geomspace(r_min, r_max, n_r)

    sup1, r1, i1 = _sup_over_r(model, "xy", hh, far, mc)
    sup2, r2, i2 = _sup_over_r(model, "x", hs[:, None], near, mc)
    law3 = hessian_law(model, 0.0, "x")
    est3, _ = evaluate_law(law3, hs[:, None], mc)
    sup3 = float(est3.max())
    # r -> infinity limit of I1 is I3(s) I3(t)
    prod = np.outer(est3, est3)
    if prod.max() > sup1:
        sup1, r1 = float(prod.max()), math.inf
    sup4, r4, _ = _sup_over_r(model, "", None, full, mc)
    i5 = evaluate_law(hessian_law(model, 0.0, ""), None, mc)[0][0]

    t1 = area**2 * lam**2 * sup1
    t2 = area * lam * sup2
    t3 = area * lam * sup3
    return BoundReport(
        R=R, a=a, b=b, delta=delta,
        term_off_diagonal=t1, term_near_diagonal=t2, term_on_diagonal=t3,
        windowed=t1 + t2 + t3, unwindowed=area**2 * sup4 + area * float(i5),
        sup_I1=sup1, sup_I2=sup2, sup_I3=sup3, sup_I4=sup4, I5=float(i5),
        argsup={"I1_r": r1, "I2_r": r2, "I4_r": r4,
                "I2_s": float(hs[i2]), "I3_s": float(hs[int(np.argmax(est3))])},
    )


# --------------------------------------------------------------------------
# near-diagonal asymptotics
# --------------------------------------------------------------------------


@dataclass
class AsymptoticsReport:
    kernel: str
    r: list
    det4_over_r4: list
    n_over_r2: list
    sigma1_sq: list
    flagged: list
    limit_det4: float
    limit_n: float
    limit_sigma1_sq: float
    predicted_det4: float
    predicted_sigma1_sq: float
    fit_c3: float
    fit_c5: float
    fit_residual: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def rows(self):
        return [
            {"r": r, "det4_over_r4": d, "n_over_r2": n, "sigma1_sq": s, "flagged": f}
            for r, d, n, s, f in zip(self.r, self.det4_over_r4, self.n_over_r2,
                                     self.sigma1_sq, self.flagged)
        ]


def _richardson(r1, g1, r2, g2):
    """Limit of g(r) = L + c r^2 from two samples."""
    return (r1**2 * g2 - r2**2 * g1) / (r1**2 - r2**2)


def near_diagonal_asymptotics(model: KernelModel, r_list, flag_below: float = 1e-4) -> AsymptoticsReport:
    r_list = sorted((float(r) for r in r_list), reverse=True)
    if not r_list or r_list[0] > 0.5 or r_list[-1] <= 0:
        raise ValueError("r_list must lie in (0, 0.5]")
    det4, nn, s1, flags = [], [], [], []
    for r in r_list:
        ss = gauss.assemble_sigma(model, (0.0, 0.0), (r, 0.0))
        det4.append(ss.det_sigma4 / r**4)
        nn.append(ss.n_value / r**2)
        s1.append(ss.sigma1_sq)
        flags.append(bool(r < flag_below))
    good = [i for i, f in enumerate(flags) if not f]
    if len(good) < 3:
        raise ValueError("need at least three unflagged radii")
    i1, i2 = good[-2], good[-1]
    rr = [r_list[i] for i in good[-3:]]
    dd = [det4[i] for i in good[-3:]]
    A = np.column_stack([np.ones(3), np.square(rr)])
    (c3, c5), *_ = np.linalg.lstsq(A, dd, rcond=None)
    resid = float(np.max(np.abs(A @ np.array([c3, c5]) - dd)))
    rho = model.spectral
    k40, k22 = rho.moment(4, 0), rho.moment(2, 2)
    return AsymptoticsReport(
        kernel=model.kind, r=r_list, det4_over_r4=det4, n_over_r2=nn, sigma1_sq=s1, flagged=flags,
        limit_det4=_richardson(r_list[i1], det4[i1], r_list[i2], det4[i2]),
        limit_n=_richardson(r_list[i1], nn[i1], r_list[i2], nn[i2]),
        limit_sigma1_sq=_richardson(r_list[i1], s1[i1], r_list[i2], s1[i2]),
        predicted_det4=(k40 - 1.0) * k22,
        predicted_sigma1_sq=(k40 - 1.0) / k40,
        fit_c3=float(c3), fit_c5=float(c5), fit_residual=resid,
    )
