"""Replication harness for E N_R[a, b] and E N_R[a, b]^2."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .critpoints import DetectorConfig, find_critical_points
from .intensity import McConfig, mean_count
from .kernel import KernelModel, normalize
from .simulate import replication_seed, sample_field

MIN_REPS = 50
LOW_CONFIDENCE_LIMIT = 0.02


def bound_shape(R: float, lam: float, dim: int = 2) -> float:
    """min{R^{2d} lam^2 + R^d lam, R^{2d}} with unit constant."""
    v = R**dim
    return min(v * v * lam * lam + v * lam, v * v)


def jackknife_se(values: np.ndarray, stat) -> float:
    """Leave-one-out jackknife standard error of stat(values) over axis 0."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    total = values.sum(axis=0)
    loo = np.array([stat((total - values[i]) / (n - 1)) for i in range(n)])
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def _moment_stats(counts: np.ndarray):
    """(mean, m2, variance) and their jackknife errors from per-rep counts."""
    n = counts.astype(float)
    cols = np.column_stack([n, n * n])
    mean, m2 = cols.mean(axis=0)
    # jackknife of a sample mean reduces to the usual s/sqrt(n)
    se_mean = float(n.std(ddof=1) / math.sqrt(len(n)))
    se_m2 = float((n * n).std(ddof=1) / math.sqrt(len(n)))
    var = m2 - mean**2
    se_var = jackknife_se(cols, lambda c: c[1] - c[0] ** 2)
    return float(mean), float(m2), float(var), se_mean, se_m2, se_var


# --------------------------------------------------------------------------
# realizations
# --------------------------------------------------------------------------


@dataclass
class Replications:
    """Critical heights and radii of independent realizations, detected once in B_{R_max}.

    Counts for any R <= R_max and any window are read off without
    re-simulating, so study grids share realizations (common random numbers).
    """

    kernel: str
    R_max: float
    M: int
    seed: int
    heights: list
    radii: list
    low_confidence: np.ndarray
    dim: int = 2

    @property
    def reps(self) -> int:
        return len(self.heights)

    def counts(self, R: float, a: float, b: float) -> np.ndarray:
        if R > self.R_max:
            raise ValueError("R exceeds the detection radius")
        if a > b:
            raise ValueError("need a <= b")
        return np.array([
            int(np.count_nonzero((r <= R) & (h >= a) & (h <= b)))
            for h, r in zip(self.heights, self.radii)
        ])

    @property
    def low_confidence_rate(self) -> float:
        return float(np.mean(self.low_confidence)) if self.reps else 0.0


def _detect(args):
    model, R_max, M, seed, indices, cfg, allow_unnormalized = args
    out = []
    for rep in indices:
        ens = sample_field(model, M, replication_seed(seed, rep),
                           allow_unnormalized=allow_unnormalized)
        cps = find_critical_points(ens, R_max, cfg)
        out.append((cps.heights, np.hypot(cps.locations[:, 0], cps.locations[:, 1]),
                    cps.low_confidence))
    return out


def run_replications(worker, payload: tuple, reps: int, threads: int = 1) -> list:
    """worker(payload + (indices,) + tail) over replication indices, in index order.

    Each replication owns its seed, so the result does not depend on
    ``threads``; ``threads > 1`` uses worker processes.
    """
    head, tail = payload
    if threads <= 1:
        return worker(head + (range(reps),) + tail)
    from concurrent.futures import ProcessPoolExecutor

    chunks = [range(i, reps, threads) for i in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(worker, [head + (c,) + tail for c in chunks]))
    out = [None] * reps
    for c, part in zip(chunks, parts):
        for i, item in zip(c, part):
            out[i] = item
    return out


def simulate_replications(model: KernelModel, R_max: float, reps: int, M: int = 500,
                          seed: int = 0, cfg: DetectorConfig | None = None,
                          allow_unnormalized: bool = False, threads: int = 1) -> Replications:
    if reps < MIN_REPS:
        raise ValueError(f"reps must be at least {MIN_REPS}")
    res = run_replications(_detect, ((model, R_max, M, seed), (cfg, allow_unnormalized)), reps, threads)
    heights = [r[0] for r in res]
    radii = [r[1] for r in res]
    low = np.array([r[2] for r in res])
    return Replications(model.kind, float(R_max), M, int(seed), heights, radii, low)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class MomentReport:
    kernel: str
    R: float
    a: float
    b: float
    reps: int
    M: int
    seed: int
    mean: float
    second_moment: float
    variance: float
    se_mean: float
    se_second_moment: float
    se_variance: float
    p_ge1: float
    p_ge2: float
    bound_value: float
    low_confidence_rate: float = 0.0
    fitted_constant: float | None = None
    dim: int = 2

    @property
    def flagged(self) -> bool:
        return self.low_confidence_rate > LOW_CONFIDENCE_LIMIT

    @property
    def width(self) -> float:
        return self.b - self.a

    @property
    def ratio(self) -> float:
        return self.second_moment / self.bound_value if self.bound_value > 0 else math.nan

    def to_dict(self) -> dict:
        out = asdict(self)
        out["flagged"] = self.flagged
        return out


def report_from_counts(counts: np.ndarray, kernel: str, R: float, a: float, b: float,
                       M: int, seed: int, low_rate: float = 0.0, dim: int = 2) -> MomentReport:
    mean, m2, var, se_mean, se_m2, se_var = _moment_stats(counts)
    return MomentReport(
        kernel=kernel, R=float(R), a=float(a), b=float(b), reps=len(counts), M=M, seed=seed,
        mean=mean, second_moment=m2, variance=var,
        se_mean=se_mean, se_second_moment=se_m2, se_variance=se_var,
        p_ge1=float(np.mean(counts >= 1)), p_ge2=float(np.mean(counts >= 2)),
        bound_value=bound_shape(R, b - a, dim), low_confidence_rate=low_rate, dim=dim,
    )


def estimate_moments(model: KernelModel, R: float, a: float, b: float, reps: int = 400,
                     M: int = 500, seed: int = 0, cfg: DetectorConfig | None = None,
                     replications: Replications | None = None,
                     allow_unnormalized: bool = False, threads: int = 1) -> MomentReport:
    if a > b:
        raise ValueError("need a <= b")
    reps_ = replications or simulate_replications(model, R, reps, M, seed, cfg, allow_unnormalized,
                                                  threads)
    counts = reps_.counts(R, a, b)
    return report_from_counts(counts, model.kind, R, a, b, reps_.M, reps_.seed,
                              reps_.low_confidence_rate)


@dataclass
class ConsistencyReport:
    empirical: float
    empirical_se: float
    predicted: float
    predicted_se: float
    tolerance: float
    moments: MomentReport
    rel_allowance: float = 0.02

    @property
    def difference(self) -> float:
        return self.empirical - self.predicted

    @property
    def combined_se(self) -> float:
        return math.hypot(self.empirical_se, self.predicted_se)

    @property
    def passed(self) -> bool:
        return abs(self.difference) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "empirical": self.empirical, "empirical_se": self.empirical_se,
            "predicted": self.predicted, "predicted_se": self.predicted_se,
            "difference": self.difference, "combined_se": self.combined_se,
            "tolerance": self.tolerance, "passed": self.passed,
            "moments": self.moments.to_dict(),
        }


def consistency(report: MomentReport, predicted: float, predicted_se: float,
                n_se: float = 3.0, rel: float = 0.02) -> ConsistencyReport:
    comb = math.hypot(report.se_mean, predicted_se)
    tol = n_se * comb + rel * abs(predicted)
    return ConsistencyReport(report.mean, report.se_mean, predicted, predicted_se, tol, report, rel)


def verify_first_moment(model: KernelModel, R: float, a: float, b: float, reps: int = 400,
                        seed: int = 0, M: int = 500, mc: McConfig | None = None,
                        cfg: DetectorConfig | None = None,
                        skip_normalization: bool = False,
                        replications: Replications | None = None,
                        threads: int = 1) -> ConsistencyReport:
    """Empirical mean count against the Kac-Rice mean of the normalized kernel.

    ``skip_normalization`` simulates ``model`` exactly as given; it exists
    for negative controls, where the two sides should disagree.
    """
    target = model if model.normalized else normalize(model)
    sim = model if skip_normalization else target
    mc = mc or McConfig(samples=200_000, seed=seed)
    rep = estimate_moments(sim, R, a, b, reps, M, seed, cfg, replications,
                           allow_unnormalized=skip_normalization, threads=threads)
    pred = mean_count(target, R, a, b, mc)
    return consistency(rep, pred.estimate, pred.std_error)


# --------------------------------------------------------------------------
# bound-shape study
# --------------------------------------------------------------------------


@dataclass
class BoundStudy:
    cells: list
    kernel: str
    reps: int
    M: int
    seed: int
    center: float = 0.0
    dim: int = 2
    max_rel_se: float = 0.30
    slope_target: float = 4.0
    slope_tol: float = 0.3
    span_limit: float = 10.0
    excluded: list = field(default_factory=list)
    slope: float = math.nan
    slope_ci: tuple = (math.nan, math.nan)

    @property
    def included(self) -> list:
        return [c for c in self.cells if c not in self.excluded]

    @property
    def c_star(self) -> float:
        r = [c.ratio for c in self.included]
        return max(r) if r else math.nan

    @property
    def ratio_span(self) -> float:
        r = [c.ratio for c in self.included if c.ratio > 0]
        return max(r) / min(r) if r else math.inf

    @property
    def passed(self) -> bool:
        return (self.ratio_span <= self.span_limit
                and abs(self.slope - self.slope_target) <= self.slope_tol)

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            out.append({
                "dim": self.dim, "R": c.R, "lambda": c.width, "mean": c.mean,
                "m2": c.second_moment, "se_mean": c.se_mean, "se_m2": c.se_second_moment,
                "bound_value": c.bound_value, "ratio": c.ratio,
                "p_ge1": c.p_ge1, "p_ge2": c.p_ge2,
                "excluded": c in self.excluded,
            })
        return out

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel, "dim": self.dim, "reps": self.reps, "M": self.M,
            "seed": self.seed, "center": self.center, "c_star": self.c_star,
            "ratio_span": self.ratio_span, "slope": self.slope, "slope_ci": list(self.slope_ci),
            "slope_target": self.slope_target, "passed": self.passed,
            "excluded": [{"R": c.R, "lambda": c.width} for c in self.excluded],
            "cells": self.rows(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path) -> None:
        cols = ["dim", "R", "lambda", "mean", "m2", "se_mean", "se_m2", "bound_value", "ratio",
                "p_ge1", "p_ge2", "excluded"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def study_from_replications(reps_: Replications, R_list, lambda_list, center: float = 0.0,
                            slope_target: float | None = None) -> BoundStudy:
    dim = reps_.dim
    cells, excluded = [], []
    for R in sorted(R_list):
        for lam in sorted(lambda_list):
            a, b = center - lam / 2, center + lam / 2
            rep = report_from_counts(reps_.counts(R, a, b), reps_.kernel, R, a, b, reps_.M,
                                     reps_.seed, reps_.low_confidence_rate, dim)
            cells.append(rep)
            if rep.second_moment <= 0 or rep.se_second_moment > 0.30 * rep.second_moment:
                excluded.append(rep)
    study = BoundStudy(cells, reps_.kernel, reps_.reps, reps_.M, reps_.seed, center, dim,
                       slope_target=slope_target or 2.0 * dim, excluded=excluded)
    c_star = study.c_star
    for c in cells:
        c.fitted_constant = c_star
    fit = scaling_fit(study)
    lam_max = max(lambda_list)
    if lam_max in fit["slope_in_R"]:
        s = fit["slope_in_R"][lam_max]
        study.slope, study.slope_ci = s["slope"], tuple(s["ci95"])
    return study


def verify_second_moment_bound(model: KernelModel, R_list=(5, 10, 20), lambda_list=(0.02, 0.1, 0.5, 2.0),
                               reps: int = 400, seed: int = 0, M: int = 500, center: float = 0.0,
                               cfg: DetectorConfig | None = None,
                               replications: Replications | None = None,
                               threads: int = 1) -> BoundStudy:
    if not R_list or not lambda_list:
        raise ValueError("empty study grid")
    reps_ = replications or simulate_replications(model, max(R_list), reps, M, seed, cfg,
                                                  threads=threads)
    return study_from_replications(reps_, R_list, lambda_list, center)


def _loglog_fit(x, y):
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    res = stats.linregress(x, y)
    if len(x) > 2:
        half = stats.t.ppf(0.975, len(x) - 2) * res.stderr
    else:
        half = math.nan
    return {"slope": float(res.slope), "intercept": float(res.intercept),
            "ci95": [float(res.slope - half), float(res.slope + half)], "points": len(x)}


def scaling_fit(study: BoundStudy) -> dict:
    """Per-lambda slope of log E N^2 in log R and per-R slope in log lambda.

    Cells with a zero estimate are dropped; a fit needs at least two points
    (three for a finite confidence interval).
    """
    good = [c for c in study.cells if c.second_moment > 0]
    by_lam, by_R = {}, {}
    for c in good:
        by_lam.setdefault(c.width, []).append(c)
        by_R.setdefault(c.R, []).append(c)
    out = {"slope_in_R": {}, "slope_in_lambda": {}}
    for lam, cs in sorted(by_lam.items()):
        if len(cs) >= 2:
            out["slope_in_R"][lam] = _loglog_fit([c.R for c in cs], [c.second_moment for c in cs])
    for R, cs in sorted(by_R.items()):
        if len(cs) >= 2:
            out["slope_in_lambda"][R] = _loglog_fit([c.width for c in cs], [c.second_moment for c in cs])
    return out


def crossover_check(counts, n_se: float = 3.0, p_limit: float = 0.01) -> dict:
    """E N^2 / E N in [1, 1 + n_se SE] and P[N >= 2] < p_limit, from per-rep counts.

    The SE of the ratio is a jackknife over replications; it is zero when no
    replication has N >= 2, in which case the ratio is exactly one.
    """
    n = np.asarray(counts, dtype=float)
    if n.sum() == 0:
        return {"ratio": math.nan, "se": math.nan, "p_ge2": 0.0, "mean": 0.0, "second_moment": 0.0,
                "passed": False}
    cols = np.column_stack([n, n * n])
    m, m2 = cols.mean(axis=0)
    ratio = float(m2 / m)
    se = jackknife_se(cols, lambda c: c[1] / c[0] if c[0] > 0 else 1.0)
    p2 = float(np.mean(n >= 2))
    ok = ratio >= 1.0 and ratio <= 1.0 + n_se * se + 1e-12 and p2 < p_limit
    return {"ratio": ratio, "se": se, "p_ge2": p2, "mean": float(m), "second_moment": float(m2),
            "passed": bool(ok)}
