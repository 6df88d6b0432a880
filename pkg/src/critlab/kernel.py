"""Stationary isotropic covariance kernels and their spectral measures.

A kernel is stored as ``kappa(x) = amplitude * phi(|x|^2 / length_scale^2)``
where ``phi`` is a radial profile written as a function of the squared
radius ``u = r^2``.  Working in ``u`` keeps every partial derivative of
``kappa`` a polynomial in ``x`` times derivatives of ``phi``, so there is no
removable singularity at the origin:

    d^n/dx^n phi(x^2) = sum_k n! / (k! (n-2k)!) (2x)^(n-2k) phi^(n-k)(x^2)

and the two-dimensional mixed partials factor over the coordinates.

Every profile can evaluate its derivatives either in float64 or with
``mpmath`` at extended precision (``exact=True``).  The extended path is what
the Gaussian algebra uses for nearly coincident point pairs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import mpmath as mp
import numpy as np
from scipy import integrate, special

MAX_ORDER = 6
MP_DPS = 50

__all__ = [
    "UnsupportedOrderError",
    "DegenerateKernelError",
    "RadialProfile",
    "GaussianProfile",
    "BesselProfile",
    "SeriesProfile",
    "SpectralMeasure",
    "KernelModel",
    "ConditionReport",
    "plane_wave",
    "bargmann_fock",
    "user_radial",
    "kernel_from_config",
    "load_kernel",
    "kernel_derivative",
    "normalize",
    "spectral_moment",
    "check_conditions",
]


class UnsupportedOrderError(ValueError):
    """Derivative order beyond what the kernel tables support."""


class DegenerateKernelError(ValueError):
    """(f(0), grad f(0)) is degenerate, so the kernel cannot be normalized."""


# --------------------------------------------------------------------------
# radial profiles phi(u), u = r^2
# --------------------------------------------------------------------------


class RadialProfile:
    """Base class: subclasses return ``[phi(u), phi'(u), ..., phi^(m)(u)]``."""

    name = "profile"

    def derivs(self, u, m_max: int, exact: bool = False) -> list:
        raise NotImplementedError

    def to_config(self) -> dict:
        return {}


class GaussianProfile(RadialProfile):
    """phi(u) = exp(-u/2), i.e. kappa(x) = exp(-|x|^2/2)."""

    name = "bargmann-fock"

    def derivs(self, u, m_max, exact=False):
        e = mp.exp(-mp.mpf(u) / 2) if exact else math.exp(-u / 2)
        half = mp.mpf(-0.5) if exact else -0.5
        return [half**m * e for m in range(m_max + 1)]


class BesselProfile(RadialProfile):
    """phi(u) = J0(sqrt(u)), the random plane wave.

    Uses d^m/du^m J0(sqrt u) = (-1/2)^m z^-m J_m(z) with z = sqrt(u).  In
    float64 the power series is summed for z < 8 and scipy's ``jv`` is used
    beyond; with ``exact=True`` mpmath does both at extended precision.
    """

    name = "plane-wave"
    series_cutoff = 8.0

    def derivs(self, u, m_max, exact=False):
        if exact:
            return self._derivs_mp(mp.mpf(u), m_max)
        z = math.sqrt(u)
        if z < self.series_cutoff:
            return [self._series(u, m) for m in range(m_max + 1)]
        return [(-0.5) ** m * special.jv(m, z) / z**m for m in range(m_max + 1)]

    @staticmethod
    def _series(u: float, m: int) -> float:
        # sum_k (-1/4)^(k+m) u^k / (k! (k+m)!)
        term = (-0.25) ** m / math.factorial(m)
        total = term
        k = 0
        while True:
            k += 1
            term *= -0.25 * u / (k * (k + m))
            total += term
            if abs(term) < 1e-17 * max(abs(total), 1e-300) and k > 2:
                return total
            if k > 200:
                return total

    @staticmethod
    def _derivs_mp(u, m_max):
        z = mp.sqrt(u)
        out = []
        for m in range(m_max + 1):
            if z < 1:
                term = mp.mpf(-0.25) ** m / mp.factorial(m)
                total = term
                k = 0
                while abs(term) > mp.mpf(10) ** (-mp.mp.dps - 5) * max(abs(total), mp.mpf(10) ** -300):
                    k += 1
                    term *= -u / 4 / (k * (k + m))
                    total += term
                out.append(total)
            else:
                out.append(mp.mpf(-0.5) ** m * mp.besselj(m, z) / z**m)
        return out


class SeriesProfile(RadialProfile):
    """phi(u) = sum_k c_k u^k with c_0 = 1 (user-supplied radial profile)."""

    name = "user-radial"

    def __init__(self, coeffs: Sequence[float]):
        coeffs = [float(c) for c in coeffs]
        if not coeffs or coeffs[0] == 0.0:
            raise ValueError("profile_series needs a nonzero constant term")
        self.coeffs = tuple(c / coeffs[0] for c in coeffs)

    def derivs(self, u, m_max, exact=False):
        conv = mp.mpf if exact else float
        u = conv(u)
        out = []
        for m in range(m_max + 1):
            total = conv(0)
            for k in range(m, len(self.coeffs)):
                total += conv(self.coeffs[k]) * conv(math.perm(k, m)) * u ** (k - m)
            out.append(total)
        return out

    def to_config(self):
        return {"profile_series": list(self.coeffs)}


# --------------------------------------------------------------------------
# spectral measures
# --------------------------------------------------------------------------


def _angular_mean(a: int, b: int) -> float:
    """(1/2pi) int cos^a sin^b dtheta for even a, b."""
    return _double_factorial(a - 1) * _double_factorial(b - 1) / _double_factorial(a + b)


def _double_factorial(n: int) -> int:
    return 1 if n <= 0 else n * _double_factorial(n - 2)


@dataclass(frozen=True)
class SpectralMeasure:
    """Spectral measure rho with kappa(x) = int exp(i<x,s>) d rho(s).

    ``kind`` is one of

    * ``"circle"``: uniform on the circle of the given radius;
    * ``"gaussian"``: rotation-invariant normal density with std ``scale``;
    * ``"atoms"``: finitely many symmetric atoms (synthetic test measures);
    * ``"moments"``: only moments are known, obtained from derivatives of the
      kernel at 0 (user-radial profiles).  Not sampleable.
    """

    kind: str
    mass: float = 1.0
    radius: float = 1.0
    scale: float = 1.0
    atoms: tuple = ()
    weights: tuple = ()
    moment_source: object = field(default=None, compare=False, repr=False)

    def radial_density(self, r):
        """Density of |s| (w.r.t. dr), mass included; only for ``gaussian``."""
        if self.kind != "gaussian":
            raise ValueError(f"no radial density for {self.kind!r} measure")
        sig2 = self.scale**2
        return self.mass * r / sig2 * np.exp(-(r**2) / (2 * sig2))

    def moment(self, a: int, b: int) -> float:
        if a < 0 or b < 0 or a + b > MAX_ORDER:
            raise UnsupportedOrderError(f"moment order ({a},{b}) unsupported")
        if a % 2 or b % 2:
            return 0.0
        if self.kind == "circle":
            return self.mass * self.radius ** (a + b) * _angular_mean(a, b)
        if self.kind == "gaussian":
            radial, _ = integrate.quad(
                lambda r: self.radial_density(r) * r ** (a + b), 0, np.inf, epsabs=0, epsrel=1e-13
            )
            angular, _ = integrate.quad(
                lambda t: np.cos(t) ** a * np.sin(t) ** b, 0, 2 * np.pi, epsabs=0, epsrel=1e-13
            )
            return radial * angular / (2 * np.pi)
        if self.kind == "atoms":
            pts = np.asarray(self.atoms, dtype=float)
            w = np.asarray(self.weights, dtype=float)
            return float(np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b))
        if self.kind == "moments":
            # int s^alpha d rho = (-1)^(|alpha|/2) d^alpha kappa(0)
            return (-1) ** ((a + b) // 2) * self.moment_source.derivative((a, b), (0.0, 0.0))
        raise ValueError(f"unknown spectral measure kind {self.kind!r}")

    @property
    def sampleable(self) -> bool:
        return self.kind in ("circle", "gaussian", "atoms")

    def sample(self, rng: np.random.Generator, m: int, stratified: bool = True) -> np.ndarray:
        """Draw ``m`` wavevectors from rho / mass."""
        if self.kind == "circle":
            if stratified:
                theta = 2 * np.pi * (np.arange(m) + rng.random(m)) / m
            else:
                theta = 2 * np.pi * rng.random(m)
            return self.radius * np.column_stack([np.cos(theta), np.sin(theta)])
        if self.kind == "gaussian":
            return self.scale * rng.standard_normal((m, 2))
        if self.kind == "atoms":
            w = np.asarray(self.weights, dtype=float)
            idx = rng.choice(len(w), size=m, p=w / w.sum())
            return np.asarray(self.atoms, dtype=float)[idx]
        raise ValueError(f"spectral measure of kind {self.kind!r} is not sampleable")


# --------------------------------------------------------------------------
# kernel model
# --------------------------------------------------------------------------


def _coef(n: int, k: int) -> int:
    return math.factorial(n) // (math.factorial(k) * math.factorial(n - 2 * k))


@dataclass(frozen=True)
class KernelModel:
    """kappa(x) = amplitude * phi(|x|^2 / length_scale^2).

    ``rescale`` accumulates the spatial factor applied by :func:`normalize`:
    kappa_new(x) = kappa_old(rescale * x) / kappa_old(0), so a length L in
    normalized units is ``rescale * L`` in the original units.
    """

    kind: str
    profile: RadialProfile
    length_scale: float = 1.0
    amplitude: float = 1.0
    rescale: float = 1.0
    normalized: bool = False
    base_spectral: SpectralMeasure | None = field(default=None, compare=False)

    @property
    def name(self) -> str:
        return self.kind

    def derivative(self, alpha, x, exact: bool = False):
        a, b = int(alpha[0]), int(alpha[1])
        if a < 0 or b < 0:
            raise ValueError("negative multi-index")
        if a + b > MAX_ORDER:
            raise UnsupportedOrderError(f"|alpha| = {a + b} > {MAX_ORDER}")
        if exact:
            ell = mp.mpf(self.length_scale)
            y1, y2 = mp.mpf(x[0]) / ell, mp.mpf(x[1]) / ell
            amp = mp.mpf(self.amplitude)
        else:
            ell = float(self.length_scale)
            y1, y2 = float(x[0]) / ell, float(x[1]) / ell
            amp = float(self.amplitude)
        d = self.profile.derivs(y1 * y1 + y2 * y2, a + b, exact=exact)
        total = 0
        for k in range(a // 2 + 1):
            px = _coef(a, k) * (2 * y1) ** (a - 2 * k)
            for l in range(b // 2 + 1):
                py = _coef(b, l) * (2 * y2) ** (b - 2 * l)
                total += px * py * d[a + b - k - l]
        return amp * total / ell ** (a + b)

    def __call__(self, x) -> float:
        return self.derivative((0, 0), x)

    @property
    def spectral(self) -> SpectralMeasure:
        base = self.base_spectral
        if base is None:
            return SpectralMeasure("moments", mass=self.amplitude, moment_source=self)
        return replace(
            base,
            mass=self.amplitude * base.mass,
            radius=base.radius / self.length_scale,
            scale=base.scale / self.length_scale,
            atoms=tuple(tuple(np.asarray(p) / self.length_scale) for p in base.atoms),
        )

    def to_config(self) -> dict:
        cfg = {
            "kind": self.kind,
            "length_scale": self.length_scale,
            "amplitude": self.amplitude,
        }
        cfg.update(self.profile.to_config())
        return cfg


def plane_wave(length_scale: float = 1.0, amplitude: float = 1.0) -> KernelModel:
    """kappa(x) = amplitude * J0(|x| / length_scale)."""
    return KernelModel(
        "plane-wave", BesselProfile(), length_scale, amplitude,
        base_spectral=SpectralMeasure("circle", radius=1.0),
    )


def bargmann_fock(length_scale: float = 1.0, amplitude: float = 1.0) -> KernelModel:
    """kappa(x) = amplitude * exp(-|x|^2 / (2 length_scale^2))."""
    return KernelModel(
        "bargmann-fock", GaussianProfile(), length_scale, amplitude,
        base_spectral=SpectralMeasure("gaussian", scale=1.0),
    )


def user_radial(coeffs, length_scale: float = 1.0, amplitude: float = 1.0,
                spectral: SpectralMeasure | None = None) -> KernelModel:
    """Kernel from power-series coefficients of phi(u) = sum c_k u^k.

    The constant term is folded into ``amplitude``.
    """
    coeffs = list(coeffs)
    prof = SeriesProfile(coeffs)
    return KernelModel("user-radial", prof, length_scale, amplitude * float(coeffs[0]),
                       base_spectral=spectral)


def kernel_from_config(cfg: dict) -> KernelModel:
    kind = cfg.get("kind")
    ell = float(cfg.get("length_scale", 1.0))
    amp = float(cfg.get("amplitude", 1.0))
    if ell <= 0 or amp <= 0:
        raise ValueError("length_scale and amplitude must be positive")
    if kind == "plane-wave":
        return plane_wave(ell, amp)
    if kind == "bargmann-fock":
        return bargmann_fock(ell, amp)
    if kind == "user-radial":
        if "profile_series" not in cfg:
            raise ValueError("user-radial kernel needs profile_series")
        return user_radial(cfg["profile_series"], ell, amp)
    raise ValueError(f"unknown kernel kind {kind!r}")


def load_kernel(path: str | Path) -> KernelModel:
    with open(path, encoding="utf-8") as fh:
        return kernel_from_config(json.load(fh))


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def kernel_derivative(model: KernelModel, alpha, x, exact: bool = False):
    """Partial derivative d^alpha kappa(x) for |alpha| <= 6."""
    return model.derivative(alpha, x, exact=exact)


def normalize(model: KernelModel) -> KernelModel:
    """Rescale so that Var f = 1 and Cov[grad f, grad f] = Id."""
    k0 = model.derivative((0, 0), (0.0, 0.0))
    lam2 = -model.derivative((2, 0), (0.0, 0.0))
    if not (k0 > 0 and lam2 > 0):
        raise DegenerateKernelError(f"kappa(0) = {k0}, -d11 kappa(0) = {lam2}")
    # kappa_new(x) = kappa(c x) / kappa(0) with c^2 lam2 / kappa(0) = 1
    c = math.sqrt(k0 / lam2)
    return replace(
        model,
        length_scale=model.length_scale / c,
        amplitude=1.0,
        rescale=model.rescale * c,
        normalized=True,
    )


def spectral_moment(measure: SpectralMeasure, a: int, b: int) -> float:
    """int s1^a s2^b d rho(s)."""
    return measure.moment(a, b)


@dataclass
class ConditionReport:
    margin_20: float
    margin_11: float
    argmin_20: float
    argmin_11: float
    far_decay: float
    far_radius: float
    var_10_max_dev: float
    condition1_decay: bool
    condition2: bool
    decay_tol: float

    @property
    def passed(self) -> bool:
        return self.condition1_decay and self.condition2

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def check_conditions(model: KernelModel, v_grid: int = 360, far_radius: float = 50.0,
                     decay_tol: float = 0.25, margin_tol: float = 1e-9) -> ConditionReport:
    """Report the directional Hessian-variance margins and the decay of kappa.

    ``margin_20`` is inf_v Var[d_v^(2,0) f] - 1 and ``margin_11`` is
    inf_v Var[d_v^(1,1) f], both over ``v_grid`` directions; they vanish
    exactly when rho sits on two parallel lines or on the coordinate cross.
    """
    rho = model.spectral
    m4 = [rho.moment(j, 4 - j) for j in range(5)]
    m2 = [rho.moment(j, 2 - j) for j in range(3)]
    theta = np.linspace(0.0, np.pi, v_grid, endpoint=False)
    c, d = np.cos(theta), np.sin(theta)
    var20 = sum(math.comb(4, j) * c**j * d ** (4 - j) * m4[j] for j in range(5))
    var10 = c**2 * m2[2] + 2 * c * d * m2[1] + d**2 * m2[0]
    # (c s1 + d s2)^2 (-d s1 + c s2)^2, coefficient of s1^j s2^(4-j) at q[j]
    q = [
        c**2 * d**2,
        2 * c * d * (c**2 - d**2),
        c**4 + d**4 - 4 * c**2 * d**2,
        2 * c * d * (d**2 - c**2),
        c**2 * d**2,
    ]
    var11 = sum(q[j] * m4[j] for j in range(5))
    i20, i11 = int(np.argmin(var20)), int(np.argmin(var11))
    margin_20 = float(var20[i20] - 1.0)
    margin_11 = float(var11[i11])

    shell = far_radius + np.linspace(0.0, 2 * np.pi * model.length_scale, 64)
    alphas = [(0, 0), (1, 0), (2, 0), (1, 1)]
    far = max(abs(model.derivative(al, (float(rr), 0.0))) for rr in shell for al in alphas)
    return ConditionReport(
        margin_20=margin_20,
        margin_11=margin_11,
        argmin_20=float(theta[i20]),
        argmin_11=float(theta[i11]),
        far_decay=float(far),
        far_radius=far_radius,
        var_10_max_dev=float(np.max(np.abs(var10 - 1.0))),
        condition1_decay=bool(far < decay_tol),
        condition2=bool(margin_20 > margin_tol and margin_11 > margin_tol),
        decay_tol=decay_tol,
    )
