"""Random-wave realizations of a normalized stationary field.

f(x) = sqrt(2 A / M) * sum_j cos(<s_j, x> + phi_j), with s_j drawn from the
spectral measure and phi_j uniform.  Every realization is a finite cosine
sum, so derivatives are exact term-wise derivatives and Newton refinement
can evaluate the field anywhere without a mesh.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .kernel import KernelModel, kernel_from_config

MAX_EVAL_ORDER = 2


def make_rng(seed) -> np.random.Generator:
    """Generator from an int seed or a ``SeedSequence``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def replication_seed(master: int, index: int) -> np.random.SeedSequence:
    """Counter-based child seed: the same (master, index) always gives the same stream."""
    return np.random.SeedSequence(int(master), spawn_key=(int(index),))


@dataclass(frozen=True)
class WaveEnsemble:
    wavevectors: np.ndarray
    phases: np.ndarray
    amplitude: float
    seed: object
    kernel_id: str
    kernel_config: dict | None = None
    stratified: bool = True

    @property
    def M(self) -> int:
        return len(self.phases)

    def to_record(self) -> dict:
        seed = self.seed
        if isinstance(seed, np.random.SeedSequence):
            seed = {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
        return {
            "seed": seed,
            "M": self.M,
            "kernel": self.kernel_config,
            "kernel_id": self.kernel_id,
            "stratified": self.stratified,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    # -- evaluation -------------------------------------------------------

    def _phase(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.wavevectors.T + self.phases

    def value(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self.amplitude * np.cos(self._phase(pts)).sum(axis=1)

    def gradient(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return -self.amplitude * np.sin(self._phase(pts)) @ self.wavevectors

    def value_grad_hess(self, pts, single: bool = False):
        """f, grad f (n, 2) and Hessian entries (h11, h12, h22) (n, 3) in one pass.

        ``single`` evaluates the trigonometric sums in float32 (phases are
        still formed in float64); about 1e-5 absolute accuracy, used only
        for coarse Newton steps.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        th = self._phase(pts)
        k = self.wavevectors
        quad = np.column_stack([k[:, 0] ** 2, k[:, 0] * k[:, 1], k[:, 1] ** 2])
        if single:
            th = th.astype(np.float32)
            k = k.astype(np.float32)
            quad = quad.astype(np.float32)
        c, s = np.cos(th), np.sin(th)
        a = self.amplitude
        f, g, h = c.sum(axis=1), s @ k, c @ quad
        if single:
            f, g, h = f.astype(float), g.astype(float), h.astype(float)
        return a * f, -a * g, -a * h

    def grid_value_grad_hess(self, xs, ys):
        """Same as :meth:`value_grad_hess` on the tensor grid xs x ys (x-major order).

        e^{i<s, x>} factorizes over coordinates, so the grid sums are
        matrix products instead of one transcendental per (point, wave).
        """
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        k = self.wavevectors
        ex = np.exp(1j * np.outer(xs, k[:, 0]))
        ey = np.exp(1j * np.outer(ys, k[:, 1]))
        w = self.amplitude * np.exp(1j * self.phases)
        weights = [np.ones(len(w)), k[:, 0], k[:, 1], k[:, 0] ** 2, k[:, 0] * k[:, 1], k[:, 1] ** 2]
        z = [((ex * (w * q)) @ ey.T).ravel() for q in weights]
        f = z[0].real
        g = -np.column_stack([z[1].imag, z[2].imag])
        h = -np.column_stack([z[3].real, z[4].real, z[5].real])
        return f, g, h


MIN_WAVES = 16


def sample_field(model: KernelModel, M: int = 500, seed=0, stratified: bool = True,
                 allow_unnormalized: bool = False) -> WaveEnsemble:
    """Random-wave ensemble with covariance kappa (in expectation over seeds).

    ``allow_unnormalized`` exists for negative controls only.
    """
    if M < MIN_WAVES:
        raise ValueError(f"M must be at least {MIN_WAVES}")
    if not (model.normalized or allow_unnormalized):
        raise ValueError("model must be normalized before sampling")
    rho = model.spectral
    if not rho.sampleable:
        raise ValueError(f"spectral measure of {model.kind!r} kernel is not sampleable")
    rng = make_rng(seed)
    k = rho.sample(rng, M, stratified=stratified)
    phases = 2 * np.pi * rng.random(M)
    return WaveEnsemble(
        wavevectors=k,
        phases=phases,
        amplitude=math.sqrt(2.0 * rho.mass / M),
        seed=seed,
        kernel_id=model.kind,
        kernel_config={**model.to_config(), "normalized": model.normalized},
        stratified=stratified,
    )


def ensemble_from_record(rec: dict) -> WaveEnsemble:
    cfg = dict(rec["kernel"])
    normalized = cfg.pop("normalized", False)
    # the stored parameters are already normalized; normalizing again would
    # perturb length_scale in the last bit and break bit-exact replay
    model = replace(kernel_from_config(cfg), normalized=bool(normalized))
    seed = rec["seed"]
    if isinstance(seed, dict):
        seed = np.random.SeedSequence(seed["entropy"], spawn_key=tuple(seed["spawn_key"]))
    return sample_field(model, rec["M"], seed, rec.get("stratified", True), allow_unnormalized=True)


def eval(ensemble: WaveEnsemble, x, alpha=(0, 0)) -> np.ndarray:  # noqa: A001
    """d^alpha f at the point(s) x for |alpha| <= 2."""
    a, b = int(alpha[0]), int(alpha[1])
    if a < 0 or b < 0 or a + b > MAX_EVAL_ORDER:
        raise ValueError(f"unsupported derivative order {alpha}")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    th = ensemble._phase(pts)
    k = ensemble.wavevectors
    weight = k[:, 0] ** a * k[:, 1] ** b
    # d^n/dth^n cos(th) = cos(th + n pi/2)
    vals = np.cos(th + (a + b) * np.pi / 2) @ weight
    out = ensemble.amplitude * vals
    return out[0] if np.ndim(x) == 1 else out
