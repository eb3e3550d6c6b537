"""Minimal central configurations: minima of U on {I = 1, G = 0}."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mass_geometry import (
    Configuration,
    Masses,
    center_of_mass_array,
    dual_norm,
    min_pair_distance,
    moment_of_inertia,
    potential_array,
    potential_gradient_array,
    potential_hessian_array,
)

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
DESCENT_GTOL = 1e-7
STALL_ITERS = 100
POLISH_TOL = 1e-13


class CentralConfigError(RuntimeError):
    """Optimizer did not converge; ``best`` holds the best iterate seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class MinimalConfiguration:
    a: Configuration
    U0: float
    lagrange_residual: float
    multistart_count: int
    history: tuple = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        doc = self.a.to_dict()
        doc.update(U0=self.U0, residual=self.lagrange_residual, seeds=self.multistart_count)
        return doc

    @classmethod
    def from_configuration(cls, a: Configuration, tol: float = 1e-6) -> "MinimalConfiguration":
        """Wrap a user-supplied configuration after normalizing and certifying it."""
        r = _normalize(a.r, a.m)
        res = _residual(r, a.m)
        if res > tol:
            raise ValueError(f"configuration is not central (residual {res:.3g})")
        a = a.with_positions(r)
        return cls(a, float(potential_array(r, a.m)), res, 0)


def _normalize(r: np.ndarray, m: np.ndarray) -> np.ndarray:
    r = r - center_of_mass_array(r, m)
    return r / math.sqrt(np.einsum("i,ij,ij->", m, r, r))


def _residual_vector(r, m):
    return potential_gradient_array(r, m) + potential_array(r, m) * m[:, None] * r


def _residual(r, m) -> float:
    return dual_norm(_residual_vector(r, m), m)


def centrality_residual(x: Configuration, sphere_tol: float = 1e-8) -> float:
    """Dual-norm residual of the Lagrange condition ``grad U = -U M x`` on I = 1."""
    i = moment_of_inertia(x)
    if abs(i - 1.0) > sphere_tol:
        raise ValueError(f"configuration must satisfy I = 1 (got I = {i:.12g})")
    return _residual(x.r, x.m)


def _sphere_gradient(r, m):
    """Mass-metric gradient of U projected onto the tangent space of {I=1, G=0}."""
    g = potential_gradient_array(r, m) / m[:, None]
    g = g - center_of_mass_array(g, m)
    return g - np.einsum("i,ij,ij->", m, g, r) * r


def _descend(r, m, max_iter):
    """Projected gradient descent with Armijo backtracking; U is non-increasing.

    The gradient tolerance is relative to U. Once U has not moved for
    ``STALL_ITERS`` steps the iterate is at round-off level and the Newton
    polish takes over.
    """
    u = float(potential_array(r, m))
    history = [u]
    step = 0.1
    for it in range(max_iter):
        g = _sphere_gradient(r, m)
        gn2 = float(np.einsum("i,ij,ij->", m, g, g))
        if math.sqrt(gn2) < DESCENT_GTOL * u:
            return r, history, True
        if len(history) > STALL_ITERS and history[-STALL_ITERS - 1] <= u:
            return r, history, True
        while True:
            trial = _normalize(r - step * g, m)
            if min_pair_distance(trial) > 0:
                ut = float(potential_array(trial, m))
                if ut <= u - ARMIJO * step * gn2:
                    break
            step *= 0.5
            if step < 1e-16:
                return r, history, False
        r, u = trial, ut
        history.append(u)
        step *= 2.0
    return r, history, False


def _polish(r, m, iters=20):
    """Least-squares Newton on the centrality residual, renormalizing each step."""
    n, d = r.shape
    for _ in range(iters):
        f = _residual_vector(r, m)
        if dual_norm(f, m) < POLISH_TOL:
            break
        u = potential_array(r, m)
        gu = potential_gradient_array(r, m)
        mx = (m[:, None] * r).ravel()
        jac = potential_hessian_array(r, m) + np.outer(mx, gu.ravel()) + u * np.diag(np.repeat(m, d))
        # scale rows by m^{-1/2} so the least-squares norm is the dual norm
        w = np.repeat(1.0 / np.sqrt(m), d)
        step, *_ = np.linalg.lstsq(w[:, None] * jac, -w * f.ravel(), rcond=1e-10)
        trial = _normalize(r + step.reshape(n, d), m)
        if _residual(trial, m) >= dual_norm(f, m):
            break
        r = trial
    return r


def _random_start(n, d, m, rng):
    min_sep = 0.1 / math.sqrt(n)
    while True:
        r = _normalize(rng.standard_normal((n, d)), m)
        if min_pair_distance(r) > min_sep:
            return r


def canonical_frame(r: np.ndarray) -> np.ndarray:
    """Rotate so body 1 lies on the positive first axis, body 2 in the upper half-plane, etc.

    Uses the QR factorization of the position matrix. When the positions span
    all of R^d the orientation cannot always be fixed by a rotation; then the
    frame may include a reflection, which also preserves U and I.
    """
    n, d = r.shape
    q, rr = np.linalg.qr(r.T)
    signs = np.sign(np.diag(rr))
    signs[signs == 0] = 1.0
    q = q * signs
    rank = np.linalg.matrix_rank(r, tol=1e-10)
    if np.linalg.det(q) < 0 and rank < d:
        q[:, -1] = -q[:, -1]
    out = r @ q
    out[np.abs(out) < 1e-15] = 0.0
    return out


def _single_start(masses: Masses, d: int, rng_seed: int, index: int, max_iter: int):
    rng = np.random.default_rng([rng_seed, index])
    m = masses.m
    r0 = _random_start(masses.n, d, m, rng)
    r, history, ok = _descend(r0, m, max_iter)
    r = _polish(r, m)
    return r, float(potential_array(r, m)), history, ok


def minimize_on_sphere(
    masses: Masses,
    d: int,
    seeds: int = 32,
    rng_seed: int = 0,
    max_iter: int = 20000,
    tol: float = 1e-8,
    threads: int = 1,
) -> MinimalConfiguration:
    """Best local minimum of U on {I=1, G=0} over ``seeds`` random starts."""
    if not isinstance(masses, Masses):
        masses = Masses(masses)
    if d < 2:
        raise ValueError("dimension must be at least 2")
    if seeds < 1:
        raise ValueError("need at least one start")
    m = masses.m
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        runs = list(pool.map(lambda k: _single_start(masses, d, rng_seed, k, max_iter), range(seeds)))
    # deterministic reduction: smallest U, ties broken by start index
    best = min(range(seeds), key=lambda k: (runs[k][1], k))
    r, u0, history, _ = runs[best]
    res = _residual(r, m)
    a = Configuration(canonical_frame(r), masses)
    result = MinimalConfiguration(a, float(potential_array(a.r, m)), res, seeds, tuple(history))
    if res > tol:
        raise CentralConfigError(
            f"no start reached centrality residual {tol:g} (best {res:.3g})", best=result
        )
    logger.info("minimal configuration: U0=%.12g residual=%.2e", u0, res)
    return result
