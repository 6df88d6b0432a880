"""Stationary processes on an interval: critical points as zeros of f'.

A process model is the restriction of an isotropic planar kernel to a line,
so derivatives, normalization and Gaussian regression all reuse the planar
code with observations of the form d^(n, 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .gauss import conditional_law, gaussian_density, joint_covariance
from .kernel import KernelModel, normalize
from .moments import (
    MIN_REPS,
    BoundStudy,
    ConsistencyReport,
    Replications,
    consistency,
    report_from_counts,
    run_replications,
    study_from_replications,
)
from .simulate import MIN_WAVES, make_rng, replication_seed


@dataclass(frozen=True)
class ProcessModel:
    """kappa_1(t) = kappa((t, 0)) for an isotropic planar kernel kappa."""

    kernel: KernelModel

    @property
    def kind(self) -> str:
        return self.kernel.kind

    @property
    def normalized(self) -> bool:
        return self.kernel.normalized

    @property
    def rescale(self) -> float:
        return self.kernel.rescale

    @property
    def amplitude(self) -> float:
        return self.kernel.amplitude

    def derivative(self, n: int, t: float, exact: bool = False):
        return self.kernel.derivative((n, 0), (t, 0.0), exact=exact)

    def __call__(self, t: float) -> float:
        return self.derivative(0, t)

    def spectral_moment(self, n: int) -> float:
        """int s^n d rho_1(s); rho_1 is the first-coordinate marginal of rho."""
        return self.kernel.spectral.moment(n, 0)

    def to_config(self) -> dict:
        return {**self.kernel.to_config(), "dim": 1}


def process(model: KernelModel) -> ProcessModel:
    return ProcessModel(model)


def normalize_1d(pm: ProcessModel) -> ProcessModel:
    """Var f = 1 and Var f' = 1.

    For an isotropic kernel -kappa_1''(0) = -d_11 kappa(0), so this is the
    planar normalization.
    """
    return ProcessModel(normalize(pm.kernel))


@dataclass
class ConditionReport1D:
    var_f2: float

    @property
    def passed(self) -> bool:
        return self.var_f2 > 1.0

    def to_dict(self) -> dict:
        return {"var_f2": self.var_f2, "passed": self.passed}


def check_conditions_1d(pm: ProcessModel) -> ConditionReport1D:
    """Only Var f'' > 1 is needed on a line (after normalization)."""
    pm = pm if pm.normalized else normalize_1d(pm)
    return ConditionReport1D(float(pm.derivative(4, 0.0)))


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Ensemble1D:
    frequencies: np.ndarray
    phases: np.ndarray
    amplitude: float
    seed: object = None
    kernel_id: str = ""

    @property
    def M(self) -> int:
        return len(self.phases)

    def derivative(self, x, n: int = 0) -> np.ndarray:
        """n-th derivative of amplitude * sum_j cos(s_j x + phi_j)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        th = np.outer(x, self.frequencies) + self.phases + n * np.pi / 2
        return self.amplitude * (np.cos(th) @ self.frequencies**n)


def sample_process(pm: ProcessModel, M: int = 500, seed=0, stratified: bool = True,
                   allow_unnormalized: bool = False) -> Ensemble1D:
    if M < MIN_WAVES:
        raise ValueError(f"M must be at least {MIN_WAVES}")
    if not (pm.normalized or allow_unnormalized):
        raise ValueError("model must be normalized before sampling")
    rho = pm.kernel.spectral
    if not rho.sampleable:
        raise ValueError(f"spectral measure of {pm.kind!r} kernel is not sampleable")
    rng = make_rng(seed)
    s = rho.sample(rng, M, stratified=stratified)[:, 0]
    phases = 2 * np.pi * rng.random(M)
    return Ensemble1D(s, phases, math.sqrt(2.0 * rho.mass / M), seed, pm.kind)


# --------------------------------------------------------------------------
# critical points
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Detector1DConfig:
    grid_h: float = 0.3
    bisect_iter: int = 60
    tol_grad: float = 1e-9


@dataclass
class CriticalSet1D:
    locations: np.ndarray
    heights: np.ndarray
    second: np.ndarray
    R: float
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.heights)

    @property
    def flagged(self) -> bool:
        return self.diagnostics.get("unresolved", 0) > 0


def critical_points_1d(ens: Ensemble1D, R: float, cfg: Detector1DConfig | None = None) -> CriticalSet1D:
    """Zeros of f' in [-R, R]: grid sign changes, then bisection."""
    cfg = cfg or Detector1DConfig()
    n = int(math.ceil(2 * R / cfg.grid_h))
    xs = np.linspace(-R, R, n + 1)
    g = ens.derivative(xs, 1)
    exact = xs[g == 0.0]
    idx = np.flatnonzero(g[:-1] * g[1:] < 0)
    lo, hi = xs[idx], xs[idx + 1]
    glo = g[idx]
    for _ in range(cfg.bisect_iter):
        mid = 0.5 * (lo + hi)
        gm = ens.derivative(mid, 1)
        left = np.sign(gm) == np.sign(glo)
        lo = np.where(left, mid, lo)
        glo = np.where(left, gm, glo)
        hi = np.where(left, hi, mid)
    roots = np.sort(np.concatenate([exact, 0.5 * (lo + hi)]))
    resid = np.abs(ens.derivative(roots, 1)) if len(roots) else np.zeros(0)
    unresolved = int(np.count_nonzero(resid > cfg.tol_grad))
    heights = ens.derivative(roots, 0) if len(roots) else np.zeros(0)
    second = ens.derivative(roots, 2) if len(roots) else np.zeros(0)
    diag = {"cells_scanned": n, "brackets": int(len(idx)), "grid_hits": int(len(exact)),
            "unresolved": unresolved}
    return CriticalSet1D(roots, heights, second, float(R), diag)


def count_critical_1d(ens: Ensemble1D, R: float, a: float, b: float,
                      cfg: Detector1DConfig | None = None) -> int:
    if a > b:
        raise ValueError("need a <= b")
    h = critical_points_1d(ens, R, cfg).heights
    return int(np.count_nonzero((h >= a) & (h <= b)))


def pair_counts_1d(cs: CriticalSet1D, a: float, b: float, delta: float) -> tuple[int, int, int]:
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = cs.locations[(cs.heights >= a) & (cs.heights <= b)]
    n = len(x)
    d = np.abs(x[:, None] - x[None, :])
    off = ~np.eye(n, dtype=bool)
    return int(np.count_nonzero((d > delta) & off)), int(np.count_nonzero((d <= delta) & (d > 0) & off)), n


# --------------------------------------------------------------------------
# Kac-Rice on the line
# --------------------------------------------------------------------------


def folded_normal_mean(mu, sigma):
    """E|X| for X ~ N(mu, sigma^2)."""
    mu = np.asarray(mu, dtype=float)
    if sigma == 0:
        return np.abs(mu)
    z = mu / sigma
    return sigma * math.sqrt(2 / math.pi) * np.exp(-0.5 * z * z) + mu * special.erf(z / math.sqrt(2))


def intensity_1d(pm: ProcessModel, s) -> np.ndarray:
    """p_{f, f'}(s, 0) * E[|f''| | f = s, f' = 0]."""
    origin = [(0.0, 0.0)]
    obs = [(0, (2, 0)), (0, (0, 0)), (0, (1, 0))]
    joint = joint_covariance(pm.kernel, origin, obs)
    coef, cond = conditional_law(joint, 1)
    sigma = math.sqrt(max(float(cond[0, 0]), 0.0))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    mu = coef[0, 0] * s
    dens = np.array([gaussian_density(joint[1:, 1:], [v, 0.0]) for v in s])
    return dens * folded_normal_mean(mu, sigma)


def mean_count_1d(pm: ProcessModel, R: float, a: float, b: float) -> float:
    """E N_R[a, b] = 2R int_a^b intensity_1d(s) ds."""
    if a > b:
        raise ValueError("need a <= b")
    if a == b:
        return 0.0
    val, _ = integrate.quad(lambda s: float(intensity_1d(pm, s)[0]), a, b, epsabs=1e-13, epsrel=1e-11,
                            limit=200)
    return 2 * R * val


# --------------------------------------------------------------------------
# replication studies
# --------------------------------------------------------------------------


def _detect_1d(args):
    pm, R_max, M, seed, indices, cfg = args
    out = []
    for rep in indices:
        cs = critical_points_1d(sample_process(pm, M, replication_seed(seed, rep)), R_max, cfg)
        out.append((cs.heights, np.abs(cs.locations), cs.flagged))
    return out


def simulate_replications_1d(pm: ProcessModel, R_max: float, reps: int, M: int = 500, seed: int = 0,
                             cfg: Detector1DConfig | None = None, threads: int = 1) -> Replications:
    if reps < MIN_REPS:
        raise ValueError(f"reps must be at least {MIN_REPS}")
    res = run_replications(_detect_1d, ((pm, R_max, M, seed), (cfg,)), reps, threads)
    return Replications(pm.kind, float(R_max), M, int(seed), [r[0] for r in res],
                        [r[1] for r in res], np.array([r[2] for r in res]), dim=1)


def verify_first_moment_1d(pm: ProcessModel, R: float, a: float, b: float, reps: int = 400,
                           seed: int = 0, M: int = 500, n_se: float = 3.0, rel: float = 0.0,
                           replications: Replications | None = None,
                           threads: int = 1) -> ConsistencyReport:
    pm = pm if pm.normalized else normalize_1d(pm)
    reps_ = replications or simulate_replications_1d(pm, R, reps, M, seed, threads=threads)
    rep = report_from_counts(reps_.counts(R, a, b), pm.kind, R, a, b, reps_.M, reps_.seed,
                             reps_.low_confidence_rate, dim=1)
    return consistency(rep, mean_count_1d(pm, R, a, b), 0.0, n_se=n_se, rel=rel)


def verify_bound_1d(pm: ProcessModel, R_list=(20, 40, 80), lambda_list=(0.02, 0.1, 0.5, 2.0),
                    reps: int = 400, seed: int = 0, M: int = 500, center: float = 0.0,
                    replications: Replications | None = None,
                    threads: int = 1) -> BoundStudy:
    if not R_list or not lambda_list:
        raise ValueError("empty study grid")
    pm = pm if pm.normalized else normalize_1d(pm)
    reps_ = replications or simulate_replications_1d(pm, max(R_list), reps, M, seed, threads=threads)
    return study_from_replications(reps_, R_list, lambda_list, center)
