"""Gaussian covariance algebra for field values and derivatives at point pairs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .kernel import MP_DPS, KernelModel

DEGENERATE_COND = 1e12
PSD_TOL = 1e-10

F = [(0, 0)]
GRAD = [(1, 0), (0, 1)]
HESS = [(2, 0), (1, 1), (0, 2)]


class DegenerateCovarianceError(np.linalg.LinAlgError):
    def __init__(self, message: str, cond: float = math.inf):
        super().__init__(f"{message} (condition estimate {cond:.3e})")
        self.cond = cond


class NotPSDError(ValueError):
    pass


class SingularLemmaDenominator(ZeroDivisionError):
    pass


# --------------------------------------------------------------------------
# joint covariances
# --------------------------------------------------------------------------


def observations(point: int, alphas) -> list[tuple[int, tuple[int, int]]]:
    return [(point, tuple(a)) for a in alphas]


def joint_covariance(model: KernelModel, points, obs, exact: bool = False):
    """Covariance matrix of (d^alpha_i f(p_i))_i.

    Cov[d^a f(p), d^b f(q)] = (-1)^|a| d^(a+b) kappa(q - p).  With
    ``exact=True`` the entries are mpmath numbers and an ``mp.matrix`` is
    returned.
    """
    n = len(obs)
    cache: dict = {}
    out = mp.matrix(n, n) if exact else np.empty((n, n))
    for i, (pi, ai) in enumerate(obs):
        for j in range(i, n):
            pj, aj = obs[j]
            diff = (points[pj][0] - points[pi][0], points[pj][1] - points[pi][1])
            key = (ai[0] + aj[0], ai[1] + aj[1], diff)
            if key not in cache:
                cache[key] = model.derivative(key[:2], diff, exact=exact)
            v = cache[key] * (-1) ** (ai[0] + ai[1])
            out[i, j] = v
            out[j, i] = v
    return out


def _sym_psd(a: np.ndarray) -> np.ndarray:
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if w.size and w.min() < -PSD_TOL * max(1.0, abs(w).max()):
        raise NotPSDError(f"conditional covariance has eigenvalue {w.min():.3e}")
    if w.size and w.min() < 0:
        w = np.where(w < 0, 0.0, w)
        a = (v * w) @ v.T
        a = 0.5 * (a + a.T)
    return a


def _mp_solve(a, b):
    """Solve a X = b column by column at the current mpmath precision."""
    cols = []
    for j in range(b.cols):
        cols.append(mp.lu_solve(a, b[:, j]))
    out = mp.matrix(b.rows, b.cols)
    for j, c in enumerate(cols):
        for i in range(b.rows):
            out[i, j] = c[i]
    return out


def _block(m, rows, cols):
    out = mp.matrix(len(rows), len(cols))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            out[a, b] = m[i, j]
    return out


def to_float(m) -> np.ndarray:
    return np.array(m.tolist(), dtype=float)


def conditional_law(joint, n_y: int, exact: bool = False):
    """Regression of Y = first ``n_y`` coordinates on the rest.

    Returns ``(coef, cond_cov)`` with E[Y | Z=z] = coef @ z.
    """
    if exact:
        n = joint.rows
        y, z = list(range(n_y)), list(range(n_y, n))
        szz = _block(joint, z, z)
        syz = _block(joint, y, z)
        syy = _block(joint, y, y)
        coef_t = _mp_solve(szz, syz.T)
        cond = syy - syz * coef_t
        return coef_t.T, cond
    joint = np.asarray(joint, dtype=float)
    syy = joint[:n_y, :n_y]
    syz = joint[:n_y, n_y:]
    szz = joint[n_y:, n_y:]
    if szz.size == 0:
        return np.zeros((n_y, 0)), _sym_psd(syy.copy())
    cond_num = np.linalg.cond(szz)
    if not np.isfinite(cond_num) or cond_num > 1.0 / np.finfo(float).eps:
        raise DegenerateCovarianceError("conditioning block is singular", cond_num)
    coef = np.linalg.solve(szz, syz.T).T
    return coef, _sym_psd(syy - coef @ syz.T)


def gaussian_regression(joint, n_y: int, exact: bool = False):
    """Covariance of Y | Z: S_YY - S_YZ S_ZZ^-1 S_ZY."""
    return conditional_law(joint, n_y, exact=exact)[1]


def gaussian_density(cov, point) -> float:
    """Centred multivariate normal density."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    x = np.atleast_1d(np.asarray(point, dtype=float))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("density of a singular covariance", np.linalg.cond(cov)) from exc
    w = np.linalg.solve(chol, x)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    k = x.size
    return float(np.exp(-0.5 * w @ w - 0.5 * logdet - 0.5 * k * math.log(2 * math.pi)))


# --------------------------------------------------------------------------
# Sigma_1 ... Sigma_7 at a point pair
# --------------------------------------------------------------------------


@dataclass
class SigmaSet:
    """Covariance matrices of field, gradient and Hessian at a pair (x, y).

    Determinants and conditional variances are computed at extended
    precision before rounding, so they remain accurate for |x - y| down to
    ~1e-4 where the float matrices themselves are numerically singular.
    """

    x: tuple
    y: tuple
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma3: np.ndarray
    sigma4: np.ndarray
    sigma5: np.ndarray
    sigma6: np.ndarray
    sigma7: np.ndarray
    m11: np.ndarray
    m12: np.ndarray
    m22: np.ndarray
    sigma1_sq: float
    sigma2_sq: float
    det_sigma1: float
    det_sigma2: float
    det_sigma3: float
    det_sigma4: float
    det_sigma7: float
    hess_cond_second_moments: np.ndarray
    n_value: float
    cond_sigma2: float
    degenerate: bool = field(default=False)

    @property
    def r(self) -> float:
        return float(math.hypot(self.y[0] - self.x[0], self.y[1] - self.x[1]))

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        out["r"] = self.r
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def largest_two_product(entries) -> float:
    e = sorted((float(v) for v in np.ravel(entries)), reverse=True)
    return e[0] * e[1]


def assemble_sigma(model: KernelModel, x, y, dps: int = MP_DPS) -> SigmaSet:
    """Build Sigma_1..Sigma_7, M-blocks and derived quantities at (x, y)."""
    x = (float(x[0]), float(x[1]))
    y = (float(y[0]), float(y[1]))
    with mp.workdps(dps):
        pts = [x, y]
        # order: f(x), f(y), grad f(x), grad f(y), hess f(x)
        obs = (observations(0, F) + observations(1, F) + observations(0, GRAD)
               + observations(1, GRAD) + observations(0, HESS))
        c = joint_covariance(model, pts, obs, exact=True)
        i_f = [0, 1]
        i_g = [2, 3, 4, 5]
        i_h = [6, 7, 8]
        m11 = _block(c, i_f, i_f)
        m12 = _block(c, i_f, i_g)
        m22 = _block(c, i_g, i_g)
        s3 = _block(c, i_f + i_g, i_f + i_g)
        s4 = _block(c, [0] + i_g, [0] + i_g)
        s5 = _block(c, i_g, i_h)
        s6 = _block(c, i_h, i_h)
        s7 = _block(c, [0, 2, 3], [0, 2, 3])
        s1 = m11 - m12 * _mp_solve(m22, m12.T)
        sigma1_sq = s1[0, 0]
        sigma2_sq = s7[0, 0] - (_block(s7, [0], [1, 2]) * _mp_solve(
            _block(s7, [1, 2], [1, 2]), _block(s7, [1, 2], [0])))[0, 0]
        hess_cond = s6 - s5.T * _mp_solve(m22, s5)
        d = [hess_cond[i, i] for i in range(3)]
        hmat = np.array([[float(d[0]), float(d[1])], [float(d[1]), float(d[2])]])
        ev = mp.eigsy(m22, eigvals_only=True)
        ev = [float(v) for v in ev]
        cond2 = max(ev) / min(ev) if min(ev) > 0 else math.inf
        out = SigmaSet(
            x=x, y=y,
            sigma1=to_float(s1), sigma2=to_float(m22), sigma3=to_float(s3),
            sigma4=to_float(s4), sigma5=to_float(s5), sigma6=to_float(s6),
            sigma7=to_float(s7), m11=to_float(m11), m12=to_float(m12), m22=to_float(m22),
            sigma1_sq=float(sigma1_sq), sigma2_sq=float(sigma2_sq),
            det_sigma1=float(mp.det(s1)), det_sigma2=float(mp.det(m22)),
            det_sigma3=float(mp.det(s3)), det_sigma4=float(mp.det(s4)),
            det_sigma7=float(mp.det(s7)),
            hess_cond_second_moments=hmat,
            n_value=largest_two_product(hmat),
            cond_sigma2=float(cond2),
            degenerate=bool(cond2 > DEGENERATE_COND),
        )
    return out


# --------------------------------------------------------------------------
# the A1/A2/A3 matrix lemma
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LemmaMatrixParams:
    a1: float
    a2: float
    a3: float
    b1: float = 0.0
    b2: float = 0.0


def lemma_matrices(p: LemmaMatrixParams):
    """Dense A1 (5x5), A2 (4x4), A3 (4x3)."""
    a1, a2, a3, b1, b2 = p.a1, p.a2, p.a3, p.b1, p.b2
    A1 = np.array([
        [1, 0, 0, -a1, 0],
        [0, 1, 0, 1 - a2, 0],
        [0, 0, 1, 0, 1 - a3],
        [-a1, 1 - a2, 0, 1, 0],
        [0, 0, 1 - a3, 0, 1],
    ], dtype=float)
    A2 = np.array([
        [1, 0, 1 - a2, 0],
        [0, 1, 0, 1 - a3],
        [1 - a2, 0, 1, 0],
        [0, 1 - a3, 0, 1],
    ], dtype=float)
    A3 = np.array([
        [0, 0, 0],
        [0, 0, 0],
        [b1, 0, b2],
        [0, b2, 0],
    ], dtype=float)
    return A1, A2, A3


def matrix_lemma_dets(p: LemmaMatrixParams) -> tuple[float, float]:
    det1 = (2 * p.a2 - p.a1**2 - p.a2**2) * (2 * p.a3 - p.a3**2)
    det2 = p.a2 * p.a3 * (2 - p.a2) * (2 - p.a3)
    return det1, det2


def matrix_lemma_diag(p: LemmaMatrixParams) -> tuple[float, float, float]:
    """Diagonal of A3^T A2^-1 A3 in closed form."""
    den2 = 2 * p.a2 - p.a2**2
    den3 = 2 * p.a3 - p.a3**2
    if den2 == 0 or den3 == 0:
        raise SingularLemmaDenominator(f"a2={p.a2}, a3={p.a3} make A2 singular")
    return p.b1**2 / den2, p.b2**2 / den3, p.b2**2 / den2


# --------------------------------------------------------------------------
# determinant-moment bound
# --------------------------------------------------------------------------


def default_det_constant(n: int) -> float:
    return (2 * n / math.e) ** n * 8


@dataclass
class DetBoundSetup:
    """Joint covariance of (X11, X12, X21, X22, Y_1..Y_d, Z_1..Z_k)."""

    cov: np.ndarray
    d: int

    @property
    def k(self) -> int:
        return self.cov.shape[0] - 4 - self.d

    def idx(self):
        x = list(range(4))
        y = list(range(4, 4 + self.d))
        z = list(range(4 + self.d, self.cov.shape[0]))
        return x, y, z


def det_bound_terms(setup: DetBoundSetup, n: int) -> dict:
    if setup.d not in (1, 2):
        raise ValueError(f"d must be 1 or 2, got {setup.d}")
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    cov = np.asarray(setup.cov, dtype=float)
    ix, iy, iz = setup.idx()
    yz = iy + iz
    sig = cov[np.ix_(yz, yz)]
    det_sig = float(np.linalg.det(sig))
    if not det_sig > 0:
        raise DegenerateCovarianceError("(Y, Z) is degenerate", np.linalg.cond(sig))
    xz = ix + iz
    x_given_z = gaussian_regression(cov[np.ix_(xz, xz)], 4) if iz else cov[np.ix_(ix, ix)]
    y_given_z = gaussian_regression(cov[np.ix_(iy + iz, iy + iz)], setup.d) if iz else cov[np.ix_(iy, iy)]
    ey2 = np.diag(cov)[iy]
    factor = max(1.0, float(np.max(ey2)) ** (2 * n) / float(np.linalg.det(y_given_z)) ** n)
    return {
        "det_sigma": det_sig,
        "x_cond_second_moments": np.diag(x_given_z).reshape(2, 2),
        "x_second_moments": np.diag(cov)[ix].reshape(2, 2),
        "y_given_z": y_given_z,
        "factor": factor,
    }


def det_bound(setup: DetBoundSetup, n: int, form: str = "sharp", c: float | None = None) -> float:
    """Upper bound on sup_y phi(y,0) E[|det X|^n | Y=y, Z=0].

    ``form="sharp"`` uses the product of the two largest conditional second
    moments of the entries of X; ``form="crude"`` the cruder maximal
    unconditional second moment.
    """
    t = det_bound_terms(setup, n)
    c = default_det_constant(n) if c is None else c
    pre = c / math.sqrt(t["det_sigma"])
    if form == "sharp":
        core = largest_two_product(t["x_cond_second_moments"]) ** (n / 2)
    elif form == "crude":
        core = float(np.max(t["x_second_moments"])) ** n
    else:
        raise ValueError(f"unknown form {form!r}")
    return pre * core * t["factor"]


def det_bound_lhs(setup: DetBoundSetup, n: int, grid: int = 41, samples: int = 4000,
                  seed: int = 0) -> float:
    """Monte Carlo estimate of sup_y phi(y,0) E[|det X|^n | Y=y, Z=0] on a grid of y."""
    cov = np.asarray(setup.cov, dtype=float)
    ix, iy, iz = setup.idx()
    yz = iy + iz
    coef, cond = conditional_law(cov[np.ix_(ix + yz, ix + yz)], 4)
    sig = cov[np.ix_(yz, yz)]
    sd = np.sqrt(np.diag(cov)[iy])
    axes = [np.linspace(-6 * s, 6 * s, grid) for s in sd]
    ys = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, setup.d)
    w, v = np.linalg.eigh(cond)
    root = v * np.sqrt(np.clip(w, 0, None))
    z = np.random.default_rng(seed).standard_normal((samples, 4)) @ root.T
    best = 0.0
    for yv in ys:
        full = np.concatenate([yv, np.zeros(len(iz))])
        mu = coef @ full
        xs = mu + z
        dets = np.abs(xs[:, 0] * xs[:, 3] - xs[:, 1] * xs[:, 2]) ** n
        best = max(best, gaussian_density(sig, full) * float(dets.mean()))
    return best


def det_sup_closed_form(s, lam, n: int):
    """Maximum of (S^T L^-1 y)^(2n) exp(-y^T L^-1 y / 2), L = diag(lam).

    Returns ``(value, maximizer)``; the maximizer is one of the two
    symmetric points +-sqrt(2n) S / |L^-1/2 S|.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    q = float(np.sum(s**2 / lam))
    if q == 0.0:
        return 0.0, np.zeros_like(s)
    value = (2 * n / math.e) ** n * q**n
    return value, math.sqrt(2 * n) * s / math.sqrt(q)


def _det_objective(ys, s, lam, n):
    lin = ys @ (s / lam)
    quad = np.sum(ys**2 / lam, axis=-1)
    return lin ** (2 * n) * np.exp(-0.5 * quad)


def det_sup_grid(s, lam, n: int, points: int = 201, levels: int = 5) -> float:
    """Grid search for the same supremum, independent of the closed form.

    A ``points``-per-axis grid over a box that contains the maximizer is
    searched, then the box is shrunk around the best node and searched
    again, ``levels`` times in all.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    d = s.size
    half = np.full(d, 1.5 * math.sqrt(2 * n * lam.max()))
    center = np.zeros(d)
    best = -np.inf
    for _ in range(levels):
        axes = [np.linspace(center[k] - half[k], center[k] + half[k], points) for k in range(d)]
        ys = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        vals = _det_objective(ys, s, lam, n)
        i = int(np.argmax(vals))
        best = max(best, float(vals[i]))
        center = ys[i]
        half = half * 4.0 / (points - 1)
    return best


# --------------------------------------------------------------------------
# property suites (used by tests and `lemma check`)
# --------------------------------------------------------------------------


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def random_lemma_params(rng: np.random.Generator) -> LemmaMatrixParams:
    a1 = rng.uniform(-1, 1)
    a2, a3 = rng.uniform(0, 2, size=2)
    b1, b2 = rng.uniform(-1, 1, size=2)
    return LemmaMatrixParams(a1, a2, a3, b1, b2)


def lemma_suite(trials: int = 10_000, seed: int = 0) -> dict:
    """Closed forms of the matrix lemma against dense determinants and solves."""
    rng = np.random.default_rng(seed)
    worst_det = worst_diag = 0.0
    for _ in range(trials):
        p = random_lemma_params(rng)
        A1, A2, A3 = lemma_matrices(p)
        d1, d2 = matrix_lemma_dets(p)
        worst_det = max(worst_det, _rel(d1, np.linalg.det(A1)), _rel(d2, np.linalg.det(A2)))
        dense = np.diag(A3.T @ np.linalg.solve(A2, A3))
        for c, v in zip(matrix_lemma_diag(p), dense):
            worst_diag = max(worst_diag, _rel(c, v))
    return {"trials": trials, "seed": seed, "max_rel_err_dets": worst_det,
            "max_rel_err_diag": worst_diag, "max_rel_err": max(worst_det, worst_diag)}


def random_det_instance(rng: np.random.Generator):
    d = int(rng.integers(1, 3))
    n = int(rng.integers(1, 3))
    s = rng.normal(size=d)
    lam = rng.uniform(0.2, 3.0, size=d)
    return s, lam, n


def det_sup_suite(trials: int = 1000, seed: int = 0, points: int = 201) -> dict:
    """Closed-form supremum against the zoomed grid search."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    exceeded = 0
    for _ in range(trials):
        s, lam, n = random_det_instance(rng)
        closed, _ = det_sup_closed_form(s, lam, n)
        grid = det_sup_grid(s, lam, n, points=points)
        worst = max(worst, _rel(closed, grid))
        if grid > closed * (1 + 1e-12):
            exceeded += 1
    return {"trials": trials, "seed": seed, "max_rel_err": worst, "grid_exceeds_closed": exceeded}


def random_det_setup(rng: np.random.Generator, d: int | None = None) -> DetBoundSetup:
    d = int(rng.integers(1, 3)) if d is None else d
    k = int(rng.integers(0, 3))
    dim = 4 + d + k
    a = rng.normal(size=(dim, dim + 2))
    cov = a @ a.T / (dim + 2)
    return DetBoundSetup(cov, d)


def bound_order_suite(trials: int = 1000, seed: int = 0) -> dict:
    """The cruder bound form never undercuts the sharper one."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst = math.inf
    for _ in range(trials):
        setup = random_det_setup(rng)
        n = int(rng.integers(1, 3))
        b1 = det_bound(setup, n, "sharp")
        b2 = det_bound(setup, n, "crude")
        worst = min(worst, b2 / b1)
        if b1 > b2 * (1 + 1e-12):
            violations += 1
    return {"trials": trials, "seed": seed, "violations": violations, "min_ratio_crude_over_sharp": worst}
