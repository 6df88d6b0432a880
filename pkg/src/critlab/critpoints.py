"""Critical points of a wave ensemble in a disc.

Newton's method on grad f = 0 is started from the centre of every grid cell
in the padded disc B_{R + 2h}; converged points are deduplicated and kept if
they lie in the closed disc B_R.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .simulate import WaveEnsemble

DEGENERATE_DET = 1e-10
# coarse phase stops here; float32 gradients are good to about 1e-5
COARSE_TOL = 1e-4


@dataclass(frozen=True)
class DetectorConfig:
    grid_h: float = 0.3
    tol_grad: float = 1e-9
    newton_max_iter: int = 40
    dedupe_radius: float = 1e-4
    max_failure_rate: float = 0.05

    def __post_init__(self):
        if not 0 < self.grid_h <= 0.4:
            raise ValueError("grid_h must lie in (0, 0.4]")


@dataclass
class CriticalPointSet:
    locations: np.ndarray
    heights: np.ndarray
    hessians: np.ndarray
    types: list
    grad_norms: np.ndarray
    R: float
    config: DetectorConfig
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.heights)

    @property
    def low_confidence(self) -> bool:
        return bool(self.diagnostics.get("low_confidence", False))

    def restrict(self, R: float) -> "CriticalPointSet":
        """Points inside the smaller closed disc B_R."""
        if R > self.R:
            raise ValueError("cannot enlarge the detection disc")
        keep = np.hypot(self.locations[:, 0], self.locations[:, 1]) <= R
        return CriticalPointSet(
            self.locations[keep], self.heights[keep], self.hessians[keep],
            [t for t, k in zip(self.types, keep) if k], self.grad_norms[keep],
            R, self.config, dict(self.diagnostics),
        )

    def counts_by_type(self) -> dict:
        out = {"max": 0, "min": 0, "saddle": 0, "degenerate": 0}
        for t in self.types:
            out[t] += 1
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "height", "h11", "h12", "h22", "type"])
            for (x, y), h, hs, t in zip(self.locations, self.heights, self.hessians, self.types):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(h)),
                            *(repr(float(v)) for v in hs), t])


def classify(hess: np.ndarray) -> list:
    det = hess[:, 0] * hess[:, 2] - hess[:, 1] ** 2
    tr = hess[:, 0] + hess[:, 2]
    out = []
    for d, t in zip(det, tr):
        if abs(d) < DEGENERATE_DET:
            out.append("degenerate")
        elif d < 0:
            out.append("saddle")
        elif t < 0:
            out.append("max")
        else:
            out.append("min")
    return out


def seed_axes(R: float, h: float) -> np.ndarray:
    n = int(math.ceil((R + 2 * h) / h))
    return (np.arange(-n, n) + 0.5) * h


def seed_mask(R: float, h: float) -> np.ndarray:
    """Cells of the h-grid (x-major) whose centres lie within B_{R+3h}, a cover of B_{R+2h}."""
    c = seed_axes(R, h)
    xx, yy = np.meshgrid(c, c, indexing="ij")
    return (np.hypot(xx, yy) <= R + 3 * h).ravel()


def seed_points(R: float, h: float) -> np.ndarray:
    """Cell centres of the h-grid whose cells meet the padded disc B_{R+2h}."""
    c = seed_axes(R, h)
    xx, yy = np.meshgrid(c, c, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return pts[seed_mask(R, h)]


def _newton_step(g: np.ndarray, hs: np.ndarray) -> np.ndarray:
    det = hs[:, 0] * hs[:, 2] - hs[:, 1] ** 2
    safe = np.where(det == 0.0, np.finfo(float).tiny, det)
    dx = -(hs[:, 2] * g[:, 0] - hs[:, 1] * g[:, 1]) / safe
    dy = -(-hs[:, 1] * g[:, 0] + hs[:, 0] * g[:, 1]) / safe
    return np.column_stack([dx, dy])


def newton(ensemble: WaveEnsemble, x0: np.ndarray, cfg: DetectorConfig, bound: float,
           tol: float | None = None, single: bool = False, max_backtrack: int = 6,
           capture: float = 1e-3, window: int = 5, start=None):
    """Newton on grad f = 0 from many starting points at once.

    The Newton direction is a descent direction for |grad f|^2, so steps
    (capped at length ``grid_h``) are halved until that merit decreases.
    A seed whose line search cannot decrease the merit sits at a nonzero
    local minimum of |grad f|^2 (singular Hessian, no root in its basin)
    and is retired as stalled; so is a seed whose merit has not halved
    over ``window`` iterations while |grad f| is still above ``capture``.  An iterate with |grad f| < ``capture``
    lying within ``capture`` of an already converged root is in that root's
    quadratic basin and is retired onto it.

    ``tol`` defaults to ``cfg.tol_grad``; ``single`` selects float32
    evaluation; ``capture=0`` disables capturing; ``start`` optionally
    supplies (grad, hessian) at ``x0``.
    Returns a :class:`NewtonResult`.
    """
    x = np.array(x0, dtype=float)
    n = len(x)
    status = np.zeros(n, np.int8)  # 0 running/failed, 1 converged, 2 escaped, 3 stalled, 4 captured
    active = np.arange(n)
    tol = cfg.tol_grad if tol is None else tol
    if start is None:
        _, g, hs = ensemble.value_grad_hess(x, single)
    else:
        g, hs = (np.array(v, dtype=float) for v in start)
    evals = n
    roots = np.zeros((0, 2))
    history = np.full((window, n), np.inf)
    for it in range(cfg.newton_max_iter + 1):
        gn2 = g[:, 0] ** 2 + g[:, 1] ** 2
        slot = it % window
        slow = (gn2 > 0.25 * history[slot, active]) & (gn2 > max(capture, COARSE_TOL) ** 2)
        history[slot, active] = gn2
        done = gn2 <= tol ** 2
        if done.any():
            status[active[done]] = 1
            roots = np.concatenate([roots, x[active[done]]])
        near = ~done & (gn2 < capture ** 2)
        if near.any() and len(roots):
            dist, _ = cKDTree(roots).query(x[active[near]], distance_upper_bound=capture)
            hit = np.flatnonzero(near)[np.isfinite(dist)]
            status[active[hit]] = 4
            done[hit] = True
        slow &= ~done
        status[active[slow]] = 3
        keep = ~done & ~slow
        active, g, hs, gn2 = active[keep], g[keep], hs[keep], gn2[keep]
        if active.size == 0:
            break
        d = _newton_step(g, hs)
        step = np.hypot(d[:, 0], d[:, 1])
        t = np.minimum(1.0, cfg.grid_h / np.maximum(step, 1e-300))
        base = x[active]
        new_g = np.empty_like(g)
        new_h = np.empty_like(hs)
        moved = np.zeros(active.size, bool)
        todo = np.arange(active.size)
        for _k in range(max_backtrack + 1):
            trial = base[todo] + t[todo, None] * d[todo]
            _, tg, th = ensemble.value_grad_hess(trial, single)
            evals += len(todo)
            ok = (tg[:, 0] ** 2 + tg[:, 1] ** 2) <= (1 - 1e-4 * t[todo]) * gn2[todo]
            acc = todo[ok]
            x[active[acc]] = trial[ok]
            new_g[acc], new_h[acc] = tg[ok], th[ok]
            moved[acc] = True
            todo = todo[~ok]
            if todo.size == 0:
                break
            t[todo] *= 0.5
        status[active[~moved]] = 3
        out = moved & (np.hypot(x[active, 0], x[active, 1]) > bound)
        status[active[out]] = 2
        live = moved & ~out
        active, g, hs = active[live], new_g[live], new_h[live]
        if active.size == 0:
            break
    return NewtonResult(x, status, evals)


@dataclass
class NewtonResult:
    points: np.ndarray
    status: np.ndarray
    evaluations: int

    @property
    def converged(self) -> np.ndarray:
        return self.status == 1

    def count(self, code: int) -> int:
        return int(np.count_nonzero(self.status == code))


def dedupe(points: np.ndarray, radius: float):
    """Greedy clustering in canonical (lexicographic) order; returns kept indices and merges."""
    if len(points) == 0:
        return np.zeros(0, int), 0
    order = np.lexsort((points[:, 1], points[:, 0]))
    pts = points[order]
    tree = cKDTree(pts)
    taken = np.zeros(len(pts), bool)
    keep = []
    for i in range(len(pts)):
        if taken[i]:
            continue
        nb = tree.query_ball_point(pts[i], radius)
        taken[nb] = True
        keep.append(i)
    keep = np.array(keep, dtype=int)
    return order[keep], len(points) - len(keep)


def find_critical_points(ensemble: WaveEnsemble, R: float, cfg: DetectorConfig | None = None) -> CriticalPointSet:
    cfg = cfg or DetectorConfig()
    if R < 1:
        raise ValueError("R must be >= 1")
    seeds = seed_points(R, cfg.grid_h)
    axis = seed_axes(R, cfg.grid_h)
    mask = seed_mask(R, cfg.grid_h)
    _, g0, h0 = ensemble.grid_value_grad_hess(axis, axis)
    bound = R + 4 * cfg.grid_h
    coarse = newton(ensemble, seeds, cfg, bound, tol=max(COARSE_TOL, cfg.tol_grad), single=True,
                    start=(g0[mask], h0[mask]))
    cand = coarse.points[coarse.converged]
    reps, merges = dedupe(cand, cfg.dedupe_radius)
    fine = newton(ensemble, cand[reps], cfg, bound, capture=0.0)
    pts = fine.points[fine.converged]
    kept, merges2 = dedupe(pts, cfg.dedupe_radius)
    pts = pts[kept]
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= R]
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(pts):
        f, g, hs = ensemble.value_grad_hess(pts)
    else:
        f, g, hs = np.zeros(0), np.zeros((0, 2)), np.zeros((0, 3))
    gn = np.hypot(g[:, 0], g[:, 1])
    failed = coarse.count(0) + fine.count(0) + fine.count(3)
    rate = failed / max(len(seeds), 1)
    diag = {
        "cells_scanned": int(len(seeds)),
        "evaluations": coarse.evaluations + fine.evaluations,
        "newton_failures": failed,
        "stalled": coarse.count(3),
        "escaped": coarse.count(2) + fine.count(2),
        "captured": coarse.count(4),
        "dedupe_merges": int(merges + merges2) + coarse.count(4),
        "failure_rate": rate,
        "low_confidence": bool(rate > cfg.max_failure_rate),
    }
    return CriticalPointSet(pts, f, hs, classify(hs), gn, float(R), cfg, diag)


def count_in_window(points: CriticalPointSet, a: float, b: float) -> int:
    """Number of critical values in the closed interval [a, b]."""
    if a > b:
        raise ValueError("need a <= b")
    h = points.heights
    return int(np.count_nonzero((h >= a) & (h <= b)))


def pair_counts(points: CriticalPointSet, a: float, b: float, delta: float) -> tuple[int, int, int]:
    """Ordered-pair decomposition (far, near, diagonal) of N[a, b]^2."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    h = points.heights
    sel = points.locations[(h >= a) & (h <= b)]
    n = len(sel)
    if n < 2:
        return 0, 0, n
    d = pdist(sel)
    far = int(np.count_nonzero(d > delta))
    near = int(np.count_nonzero((d > 0) & (d <= delta)))
    return 2 * far, 2 * near, n


# --------------------------------------------------------------------------
# independent oracle: sign-change cells + quadtree bisection
# --------------------------------------------------------------------------


def sign_change_oracle(ensemble: WaveEnsemble, R: float, h: float = 0.075,
                       min_size: float = 1e-8, pad: float = 0.0) -> np.ndarray:
    """Critical points located by subdividing cells where both gradient
    components change sign at the corners.

    Used only to cross-check :func:`find_critical_points`.
    """
    rad = R + pad
    n = int(math.ceil(rad / h)) + 1
    ax = np.arange(-n, n + 1) * h
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    g = ensemble.gradient(np.column_stack([xx.ravel(), yy.ravel()])).reshape(len(ax), len(ax), 2)

    def changes(c):
        # c: (..., 4, 2) corner gradients
        return (c.min(axis=-2) <= 0).all(axis=-1) & (c.max(axis=-2) >= 0).all(axis=-1)

    corners = np.stack([g[:-1, :-1], g[1:, :-1], g[:-1, 1:], g[1:, 1:]], axis=2)
    cand = np.argwhere(changes(corners))
    boxes = np.column_stack([ax[cand[:, 0]], ax[cand[:, 1]], np.full(len(cand), h)])
    found = []
    while len(boxes):
        size = boxes[:, 2]
        fine = size <= min_size
        if fine.any():
            found.append(boxes[fine, :2] + 0.5 * boxes[fine, 2:3])
            boxes = boxes[~fine]
            if not len(boxes):
                break
        half = boxes[:, 2:3] / 2
        kids = np.concatenate([
            np.column_stack([boxes[:, :2] + half * off, half[:, 0]])
            for off in (np.array([0, 0]), np.array([1, 0]), np.array([0, 1]), np.array([1, 1]))
        ])
        x0, y0, s = kids[:, 0], kids[:, 1], kids[:, 2]
        cpts = np.stack([np.column_stack([x0 + dx * s, y0 + dy * s])
                         for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1))], axis=1)
        cg = ensemble.gradient(cpts.reshape(-1, 2)).reshape(-1, 4, 2)
        boxes = kids[changes(cg)]
        if len(boxes) > 200_000:
            raise RuntimeError("sign-change oracle exploded; lower min_size")
    if not found:
        return np.zeros((0, 2))
    pts = np.concatenate(found)
    keep, _ = dedupe(pts, 1e-6)
    pts = pts[keep]
    return pts[np.hypot(pts[:, 0], pts[:, 1]) <= R]
