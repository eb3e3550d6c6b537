"""Discrete trajectories, the Lagrangian action and the free-time action potential.

``phi(x, y)`` is the infimum of the action ``int 1/2 |v|^2 + U`` over curves
from ``x`` to ``y`` with free duration. Two independent discretizations are
provided:

* ``jacobi``: a geometric path minimizing length in the metric
  ``sqrt(2U) * |dx|`` (the zero-energy Maupertuis reformulation). The
  objective is the discrete path energy ``sum_k L_k^2``, whose minimizers are
  geodesics with equidistributed segment lengths; time is recovered afterwards
  from the zero-energy condition.
* ``time``: the time-domain action on a fixed relative time grid, minimized
  over interior nodes for each total duration, then over the duration.

Both inner problems have block-tridiagonal Hessians and are solved with
damped Newton steps (see ``_banded``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.optimize

from ._banded import newton_banded
from .mass_geometry import (
    CollisionError,
    Configuration,
    Masses,
    center_of_mass_array,
    config_scale,
    mean_center,
    potential_array,
    potential_gradient_array,
    potential_hessian_array,
)

logger = logging.getLogger(__name__)


class PhiSolverError(RuntimeError):
    """The action potential solver failed; ``result`` holds the last iterate if any."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class Trajectory:
    """Nodes ``(K+1, N, d)`` at strictly increasing times ``(K+1,)``."""

    nodes: np.ndarray
    times: np.ndarray
    masses: Masses

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        times = np.array(self.times, dtype=float)
        masses = self.masses if isinstance(self.masses, Masses) else Masses(self.masses)
        if nodes.ndim != 3 or nodes.shape[1] != masses.n:
            raise ValueError(f"nodes must have shape (K+1, {masses.n}, d), got {nodes.shape}")
        if times.shape != (nodes.shape[0],):
            raise ValueError("one time per node is required")
        if nodes.shape[0] > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        nodes.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "masses", masses)

    @property
    def m(self) -> np.ndarray:
        return self.masses.m

    def __len__(self):
        return self.nodes.shape[0]

    def configuration(self, k: int) -> Configuration:
        return Configuration(self.nodes[k], self.masses)

    def midpoint_velocities(self) -> tuple[np.ndarray, np.ndarray]:
        """Segment midpoints and finite-difference velocities."""
        dt = np.diff(self.times)[:, None, None]
        return 0.5 * (self.nodes[1:] + self.nodes[:-1]), np.diff(self.nodes, axis=0) / dt

    def node_velocities(self) -> np.ndarray:
        """Velocities at the nodes, second-order accurate on uneven time grids."""
        t, x = self.times, self.nodes
        v = np.empty_like(x)
        h0 = (t[1:-1] - t[:-2])[:, None, None]
        h1 = (t[2:] - t[1:-1])[:, None, None]
        # second-order three-point formula on an uneven grid
        v[1:-1] = (h0**2 * x[2:] - h1**2 * x[:-2] + (h1**2 - h0**2) * x[1:-1]) / (h0 * h1 * (h0 + h1))
        v[0] = _one_sided_derivative(t[:3], x[:3])
        v[-1] = _one_sided_derivative(t[::-1][:3], x[::-1][:3])
        return v

    def to_dict(self) -> dict:
        d = self.nodes.shape[2]
        return {
            "times": self.times.tolist(),
            "nodes": [
                {"d": d, "masses": self.m.tolist(), "positions": n.tolist()} for n in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Trajectory":
        nodes = [Configuration.from_dict(n) for n in doc["nodes"]]
        return cls(np.stack([n.r for n in nodes]), doc["times"], nodes[0].masses)


def _one_sided_derivative(t, x):
    """Second-order derivative at ``t[0]`` from three (possibly uneven) samples."""
    h1, h2 = t[1] - t[0], t[2] - t[0]
    return (-(h1 + h2) / (h1 * h2) * x[0] + h2 / (h1 * (h2 - h1)) * x[1] - h1 / (h2 * (h2 - h1)) * x[2])


def _as_path(path, masses=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(path, Trajectory):
        return path.nodes, path.m
    if isinstance(path, np.ndarray):
        if masses is None:
            raise ValueError("masses are required with an array path")
        return np.asarray(path, dtype=float), masses.m if isinstance(masses, Masses) else np.asarray(masses)
    configs = list(path)
    return np.stack([c.r for c in configs]), configs[0].m


# --- functionals on given curves ------------------------------------------


def action(gamma: Trajectory) -> float:
    """Composite action: segment finite-difference kinetic term, midpoint-rule U."""
    if len(gamma) < 2:
        return 0.0
    interior = gamma.nodes[1:-1]
    if interior.size and np.any(_min_pair_distance(interior) <= 0.0):
        raise CollisionError("trajectory has an interior collision")
    mid, vel = gamma.midpoint_velocities()
    dt = np.diff(gamma.times)
    kinetic = 0.5 * np.einsum("i,kij,kij->k", gamma.m, vel, vel)
    return float(np.sum(dt * (kinetic + potential_array(mid, gamma.m))))


def _min_pair_distance(nodes):
    n = nodes.shape[-2]
    i, j = np.triu_indices(n, 1)
    dist = np.linalg.norm(nodes[..., i, :] - nodes[..., j, :], axis=-1).min(axis=-1)
    return dist


def jacobi_length(path, masses=None) -> float:
    """``sum_k sqrt(2 U(midpoint_k)) * |dx_k|`` in the mass metric."""
    x, m = _as_path(path, masses)
    if x.shape[0] < 2:
        return 0.0
    return float(np.sum(_segment_lengths(x, m)))


def _segment_lengths(x, m):
    mid = 0.5 * (x[1:] + x[:-1])
    dx = np.diff(x, axis=0)
    ds = np.sqrt(np.einsum("i,kij,kij->k", m, dx, dx))
    return np.sqrt(2.0 * potential_array(mid, m)) * ds


def reparametrize_energy_zero(path, masses=None, t0: float = 0.0) -> Trajectory:
    """Assign times with ``dt = |dx| / sqrt(2 U(midpoint))`` (zero total energy)."""
    x, m = _as_path(path, masses)
    mid = 0.5 * (x[1:] + x[:-1])
    dx = np.diff(x, axis=0)
    ds = np.sqrt(np.einsum("i,kij,kij->k", m, dx, dx))
    dt = ds / np.sqrt(2.0 * potential_array(mid, m))
    return Trajectory(x, t0 + np.concatenate([[0.0], np.cumsum(dt)]), Masses(m))


def energy_residual(gamma: Trajectory) -> float:
    """Max relative zero-energy defect ``|1/2|v|^2 - U| / U`` at interior nodes.

    Velocities come from ``node_velocities``; at segment midpoints an energy-zero
    reparametrized path has no defect by construction, so nodes are used.
    """
    x = gamma.nodes[1:-1]
    if x.shape[0] == 0:
        return 0.0
    v = gamma.node_velocities()[1:-1]
    u = potential_array(x, gamma.m)
    kinetic = 0.5 * np.einsum("i,kij,kij->k", gamma.m, v, v)
    return float(np.max(np.abs(kinetic - u) / u))


def newton_residual(gamma: Trajectory) -> float:
    """Max over interior nodes of ``|M x'' - grad U|_* / |grad U|_*``."""
    if len(gamma) < 3:
        raise ValueError("newton residual needs at least three nodes")
    t, x, m = gamma.times, gamma.nodes, gamma.m
    h0 = (t[1:-1] - t[:-2])[:, None, None]
    h1 = (t[2:] - t[1:-1])[:, None, None]
    acc = 2.0 * ((x[2:] - x[1:-1]) / h1 - (x[1:-1] - x[:-2]) / h0) / (h0 + h1)
    force = potential_gradient_array(x[1:-1], m)
    defect = m[:, None] * acc - force
    w = 1.0 / m
    num = np.sqrt(np.einsum("i,kij,kij->k", w, defect, defect))
    den = np.sqrt(np.einsum("i,kij,kij->k", w, force, force))
    return float(np.max(num / den))


def center_of_mass_drift(gamma: Trajectory) -> float:
    """Max deviation of the center of mass from its best linear-in-time fit."""
    g = center_of_mass_array(gamma.nodes, gamma.m)
    if len(gamma) < 3:
        return 0.0
    t = gamma.times
    basis = np.stack([np.ones_like(t), t - t.mean()], axis=1)
    coef, *_ = np.linalg.lstsq(basis, g, rcond=None)
    return float(np.max(np.linalg.norm(g - basis @ coef, axis=1)))


# --- discrete objectives ---------------------------------------------------


def _segment_data(x, m):
    k, n, d = x.shape[0] - 1, x.shape[1], x.shape[2]
    mid = 0.5 * (x[1:] + x[:-1])
    dx = np.diff(x, axis=0).reshape(k, n * d)
    u = potential_array(mid, m)
    g = potential_gradient_array(mid, m).reshape(k, n * d)
    h = potential_hessian_array(mid, m)
    return dx, u, g, h


def _barrier_terms(xi, m, beta, eps):
    """``beta * sum max(0, eps - r_ij)^2`` at interior nodes, with gradient and Hessian blocks."""
    kk, n, d = xi.shape
    value = 0.0
    grad = np.zeros((kk, n * d))
    hess = np.zeros((kk, n * d, n * d))
    if beta <= 0.0:
        return value, grad, hess
    eye = np.eye(d)
    for a in range(n):
        for b in range(a + 1, n):
            diff = xi[:, a] - xi[:, b]
            r = np.linalg.norm(diff, axis=1)
            act = r < eps
            if not act.any():
                continue
            ra, da = r[act], diff[act]
            uhat = da / ra[:, None]
            gap = eps - ra
            value += beta * float(np.sum(gap**2))
            ga = -2.0 * beta * gap[:, None] * uhat
            proj = uhat[:, :, None] * uhat[:, None, :]
            blk = 2.0 * beta * proj - (2.0 * beta * gap / ra)[:, None, None] * (eye - proj)
            sa, sb = slice(a * d, (a + 1) * d), slice(b * d, (b + 1) * d)
            idx = act.nonzero()[0]
            grad[idx, sa] += ga
            grad[idx, sb] -= ga
            hess[idx, sa, sa] += blk
            hess[idx, sb, sb] += blk
            hess[idx, sa, sb] -= blk
            hess[idx, sb, sa] -= blk
    return value, grad, hess


class _PathProblem:
    """Shared plumbing: endpoints fixed, interior nodes are the unknowns."""

    def __init__(self, x0, x1, m, beta=0.0, eps=0.0):
        self.x0, self.x1, self.m = x0, x1, m
        self.n, self.d = x0.shape
        self.mvec = np.repeat(m, self.d)
        self.beta, self.eps = beta, eps

    def full(self, z):
        xi = z.reshape(-1, self.n, self.d)
        return np.concatenate([self.x0[None], xi, self.x1[None]])

    def safe_value(self, z):
        try:
            return self.value(z)
        except CollisionError:
            return np.inf

    def _assemble(self, seg_a, seg_b, haa, hbb, hab, xi):
        grad = seg_b[:-1] + seg_a[1:]
        dblk = hbb[:-1] + haa[1:]
        oblk = hab[1:-1]
        bv, bg, bh = _barrier_terms(xi, self.m, self.beta, self.eps)
        return bv, grad + bg, dblk + bh, oblk


class _JacobiEnergy(_PathProblem):
    """``E = sum_k w_k 2 U(mid_k) |dx_k|_M^2``.

    Stationary points are geodesics whose segment lengths satisfy
    ``L_k proportional to 1 / w_k``, so the weights fix the node grading.
    """

    def __init__(self, x0, x1, m, weights, beta=0.0, eps=0.0):
        super().__init__(x0, x1, m, beta, eps)
        self.w = weights

    def value(self, z):
        x = self.full(z)
        mid = 0.5 * (x[1:] + x[:-1])
        dx = np.diff(x, axis=0)
        q = np.einsum("i,kij,kij->k", self.m, dx, dx)
        bv = _barrier_terms(x[1:-1], self.m, self.beta, self.eps)[0] if self.beta > 0 else 0.0
        return float(np.sum(2.0 * self.w * potential_array(mid, self.m) * q)) + bv

    def __call__(self, z):
        x = self.full(z)
        dx, u, g, h = _segment_data(x, self.m)
        w = self.w
        # weights enter linearly: fold them into U and its derivatives
        u, g, h = w * u, w[:, None] * g, w[:, None, None] * h
        mdx = dx * self.mvec
        q = np.sum(dx * mdx, axis=1)
        uq = u[:, None]
        seg_a = g * q[:, None] - 4.0 * uq * mdx
        seg_b = g * q[:, None] + 4.0 * uq * mdx
        half = 0.5 * q[:, None, None] * h
        gm = g[:, :, None] * mdx[:, None, :]
        mg = mdx[:, :, None] * g[:, None, :]
        diag_m = (4.0 * u)[:, None, None] * np.diag(self.mvec)[None]
        haa = half - 2.0 * gm - 2.0 * mg + diag_m
        hbb = half + 2.0 * gm + 2.0 * mg + diag_m
        hab = half + 2.0 * gm - 2.0 * mg - diag_m
        bv, grad, dblk, oblk = self._assemble(seg_a, seg_b, haa, hbb, hab, x[1:-1])
        value = float(np.sum(2.0 * u * q)) + bv
        return value, grad, dblk, oblk


class _TimeAction(_PathProblem):
    """``A = sum_k |dx_k|_M^2 / (2 dt_k) + dt_k U(mid_k)`` for fixed ``dt``."""

    def __init__(self, x0, x1, m, dt, beta=0.0, eps=0.0):
        super().__init__(x0, x1, m, beta, eps)
        self.dt = dt

    def value(self, z):
        x = self.full(z)
        mid = 0.5 * (x[1:] + x[:-1])
        dx = np.diff(x, axis=0)
        q = np.einsum("i,kij,kij->k", self.m, dx, dx)
        bv = _barrier_terms(x[1:-1], self.m, self.beta, self.eps)[0] if self.beta > 0 else 0.0
        return float(np.sum(0.5 * q / self.dt + self.dt * potential_array(mid, self.m))) + bv

    def __call__(self, z):
        x = self.full(z)
        dx, u, g, h = _segment_data(x, self.m)
        dt = self.dt
        mdx = dx * self.mvec
        q = np.sum(dx * mdx, axis=1)
        seg_a = -mdx / dt[:, None] + 0.5 * dt[:, None] * g
        seg_b = mdx / dt[:, None] + 0.5 * dt[:, None] * g
        quarter = 0.25 * dt[:, None, None] * h
        mass = (1.0 / dt)[:, None, None] * np.diag(self.mvec)[None]
        bv, grad, dblk, oblk = self._assemble(
            seg_a, seg_b, quarter + mass, quarter + mass, quarter - mass, x[1:-1]
        )
        value = float(np.sum(0.5 * q / dt + dt * u)) + bv
        return value, grad, dblk, oblk


# --- initialization --------------------------------------------------------


def _monitor(pts, m, log_weight: float) -> np.ndarray:
    """Per-segment grading density: a blend of Jacobi length and log-radius increments."""
    jac = _segment_lengths(pts, m)
    mid = 0.5 * (pts[1:] + pts[:-1])
    dx = np.diff(pts, axis=0)
    ds = np.sqrt(np.einsum("i,kij,kij->k", m, dx, dx))
    radius = np.sqrt(np.einsum("i,kij,kij->k", m, mid, mid))
    logs = ds / np.maximum(radius, 1e-300)
    out = (1.0 - log_weight) * jac / jac.sum()
    if log_weight > 0 and logs.sum() > 0:
        out = out + log_weight * logs / logs.sum()
    return out


def _graded_nodes(curve, m, nodes: int, samples: int, log_weight: float) -> np.ndarray:
    """Sample ``curve(s)``, s in [0, 1], at equal increments of the grading monitor."""
    s = np.linspace(0.0, 1.0, samples)
    pts = curve(s)
    cum = np.concatenate([[0.0], np.cumsum(_monitor(pts, m, log_weight))])
    levels = np.linspace(0.0, cum[-1], nodes + 1)
    out = curve(np.interp(levels, cum, s))
    out[0], out[-1] = pts[0], pts[-1]
    return out


def _grading_weights(path, m) -> np.ndarray:
    """Weights that keep the current segment-length proportions at a geodesic."""
    seg = _segment_lengths(path, m)
    return seg.mean() / seg


def _fine_clearance(curve, samples: int) -> float:
    return float(_min_pair_distance(curve(np.linspace(0.0, 1.0, samples))[1:-1]).min())


def initial_path(x0, x1, m, nodes: int, eps: float, seed: int = 0, bump: float | None = None,
                 log_weight: float = 0.8):
    """Straight segment, bent away from collisions if needed, with graded nodes.

    ``log_weight`` blends equal-action spacing (0) with equal log-radius
    spacing (1); the latter refines the inner end of paths that span many
    length scales.
    """
    delta = x1 - x0
    scale = max(math.sqrt(np.einsum("i,ij,ij->", m, x0, x0) / m.sum()),
                math.sqrt(np.einsum("i,ij,ij->", m, x1, x1) / m.sum()))
    samples = max(20 * nodes, 2000)

    def straight(s):
        return x0[None] + s[:, None, None] * delta[None]

    if bump is None and _fine_clearance(straight, samples) > eps:
        return _graded_nodes(straight, m, nodes, samples, log_weight)

    rng = np.random.default_rng(seed)
    amps = [bump] if bump is not None else [0.5, 1.0, 2.0, 4.0]
    for attempt, amp in enumerate(amps):
        b = rng.standard_normal(x0.shape)
        b -= center_of_mass_array(b, m)
        dn = np.einsum("i,ij,ij->", m, delta, delta)
        if dn > 0:
            b -= np.einsum("i,ij,ij->", m, b, delta) / dn * delta
        b *= amp * scale / math.sqrt(np.einsum("i,ij,ij->", m, b, b) / m.sum())

        def bent(s, b=b):
            return straight(s) + np.sin(np.pi * s)[:, None, None] * b[None]

        if _fine_clearance(bent, samples) > eps or bump is not None:
            return _graded_nodes(bent, m, nodes, samples, log_weight)
    raise PhiSolverError("could not find a collision-free initial path")


def swept_path(x0, x1, m, nodes: int, turns: int, log_weight: float = 0.8):
    """Straight segment rotated through ``turns`` full turns in the first coordinate plane.

    The rotation angle follows the fraction of log-radius travelled, so the
    winding happens where the configuration is small and the detour is cheap.
    Straight and swept starts wind differently around collisions and so reach
    minimizers in different homotopy classes.
    """
    samples = max(20 * nodes, 2000)
    fine = np.linspace(0.0, 1.0, samples)
    lin = x0[None] + fine[:, None, None] * (x1 - x0)[None]
    cum = np.concatenate([[0.0], np.cumsum(_monitor(lin, m, 1.0))])
    frac = cum / cum[-1]

    def curve(s):
        ang = 2.0 * math.pi * turns * np.interp(s, fine, frac)
        out = x0[None] + s[:, None, None] * (x1 - x0)[None]
        c, sn = np.cos(ang)[:, None], np.sin(ang)[:, None]
        p, q = out[..., 0].copy(), out[..., 1].copy()
        out[..., 0], out[..., 1] = c * p - sn * q, sn * p + c * q
        return out

    return _graded_nodes(curve, m, nodes, samples, log_weight), _fine_clearance(curve, samples)


# --- the potential ---------------------------------------------------------


@dataclass(frozen=True)
class PhiOptions:
    nodes: int = 200
    backend: str = "jacobi"
    rtol: float = 1e-13
    max_iter: int = 200
    barrier_eps: float = 0.05
    barrier_stages: tuple = (1.0, 1e-2, 0.0)
    n_starts: int = 3
    seed: int = 0
    log_grading: float = 0.8
    newton_tol: float = 5e-2
    clearance_tol: float = 1e-6

    def __post_init__(self):
        if self.nodes < 4:
            raise ValueError("need at least 4 nodes")
        if not 0.0 <= self.log_grading <= 1.0:
            raise ValueError("log_grading must lie in [0, 1]")
        if self.backend not in ("jacobi", "time"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.rtol <= 0 or self.barrier_eps <= 0 or not self.newton_tol > 0:
            raise ValueError("tolerances must be positive")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["barrier_stages"] = list(self.barrier_stages)
        return doc


@dataclass(frozen=True)
class MinimizerResult:
    phi: float
    trajectory: Trajectory | None
    backend: str
    newton_residual: float
    energy_residual: float
    converged: bool
    com_drift: float = 0.0
    offsets: tuple = ((), ())
    iterations: int = 0
    decrement: float = 0.0
    min_clearance: float = math.inf
    multiplicity: bool = False
    duration: float = 0.0
    message: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self, with_trajectory: bool = True) -> dict:
        doc = {
            "phi": float(self.phi),
            "backend": self.backend,
            "newton_residual": float(self.newton_residual),
            "energy_residual": float(self.energy_residual),
            "com_drift": float(self.com_drift),
            "converged": bool(self.converged),
            "offsets": [list(map(float, o)) for o in self.offsets],
            "iterations": int(self.iterations),
            "decrement": float(self.decrement),
            "min_clearance": float(self.min_clearance),
            "multiplicity": bool(self.multiplicity),
            "duration": float(self.duration),
            "message": self.message,
        }
        doc.update(self.extra)
        if with_trajectory and self.trajectory is not None:
            doc["trajectory"] = self.trajectory.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MinimizerResult":
        known = {f for f in cls.__dataclass_fields__}
        traj = Trajectory.from_dict(doc["trajectory"]) if doc.get("trajectory") else None
        kwargs = {k: v for k, v in doc.items() if k in known and k not in ("trajectory", "offsets")}
        kwargs["offsets"] = tuple(tuple(o) for o in doc.get("offsets", ((), ())))
        extra = {k: v for k, v in doc.items() if k not in known and k != "trajectory"}
        return cls(trajectory=traj, extra=extra, **kwargs)


def segment_clearance(nodes: np.ndarray) -> float:
    """Smallest mutual distance along the piecewise-linear path, endpoints excluded."""
    n = nodes.shape[1]
    i, j = np.triu_indices(n, 1)
    p = nodes[:, i, :] - nodes[:, j, :]
    p0, p1 = p[:-1], p[1:]
    dp = p1 - p0
    denom = np.einsum("kpj,kpj->kp", dp, dp)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.clip(-np.einsum("kpj,kpj->kp", p0, dp) / denom, 0.0, 1.0)
    s = np.where(denom > 0, s, 0.0)
    # first and last segments touch the fixed endpoints; measure only their interior halves
    s[0] = np.maximum(s[0], 0.5)
    s[-1] = np.minimum(s[-1], 0.5)
    closest = p0 + s[..., None] * dp
    return float(np.linalg.norm(closest, axis=-1).min())


def _solve_staged(make_problem, z0, opts: PhiOptions, eps, base_value):
    z = z0
    res = None
    for stage in opts.barrier_stages:
        beta = stage * base_value / eps**2 if stage > 0 else 0.0
        prob = make_problem(beta)
        res = newton_banded(prob, z, prob.safe_value, rtol=opts.rtol, max_iter=opts.max_iter)
        z = res.x
    return res


def _endpoint_arrays(x: Configuration, y: Configuration):
    if x.masses != y.masses:
        raise ValueError("endpoints carry different masses")
    if x.d != y.d:
        raise ValueError("endpoints live in different dimensions")
    xc, gx = mean_center(x)
    yc, gy = mean_center(y)
    for c in (xc, yc):
        if not c.is_collision_free():
            raise CollisionError("endpoint has a collision")
    return xc, yc, (tuple(gx), tuple(gy))


def phi(
    x: Configuration,
    y: Configuration,
    opts: PhiOptions | None = None,
    initial: np.ndarray | None = None,
) -> MinimizerResult:
    """Free-time action potential between two configurations.

    Endpoints are mean-centered first; the removed offsets are reported. An
    ``initial`` array of shape ``(K+1, N, d)`` warm-starts the interior nodes.
    """
    opts = opts or PhiOptions()
    xc, yc, offsets = _endpoint_arrays(x, y)
    if np.array_equal(xc.r, yc.r):
        return MinimizerResult(0.0, None, opts.backend, 0.0, 0.0, True, offsets=offsets,
                               message="equal endpoints: infimum not attained")
    if opts.backend == "time":
        return _phi_time(xc, yc, opts, offsets, initial)
    return _phi_jacobi(xc, yc, opts, offsets, initial)


def _scales(xc, yc):
    return min(config_scale(xc), config_scale(yc))


def _starts(xc, yc, opts, eps, initial):
    m = xc.m
    if initial is not None:
        init = np.array(initial, dtype=float)
        if init.shape != (opts.nodes + 1,) + xc.r.shape:
            init = _resample(init, opts.nodes, m, opts.log_grading)
        init[0], init[-1] = xc.r, yc.r
        yield init
    else:
        yield initial_path(xc.r, yc.r, m, opts.nodes, eps, seed=opts.seed, log_weight=opts.log_grading)
    # then the two opposite windings, then random bends
    sweeps = [1, -1] if xc.d >= 2 else []
    for k in range(1, opts.n_starts):
        while sweeps:
            path, clearance = swept_path(xc.r, yc.r, m, opts.nodes, sweeps.pop(0), opts.log_grading)
            if clearance > eps:
                yield path
                break
        else:
            yield initial_path(xc.r, yc.r, m, opts.nodes, eps, seed=opts.seed + k, bump=0.5,
                               log_weight=opts.log_grading)


def _resample(path, nodes, m, log_weight):
    """Re-grade an existing path to ``nodes`` segments."""
    path = np.asarray(path, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(_monitor(path, m, log_weight))])
    s = cum / cum[-1]
    levels = np.linspace(0.0, 1.0, nodes + 1)
    flat = path.reshape(path.shape[0], -1)
    out = np.stack([np.interp(levels, s, flat[:, c]) for c in range(flat.shape[1])], axis=1)
    return out.reshape((nodes + 1,) + path.shape[1:])


def _finish(path, xc, opts, backend, newton_res, phi_value, extra=None, times=None, multiplicity=False):
    scale = config_scale(xc)
    if times is None:
        traj = reparametrize_energy_zero(path, xc.masses)
    else:
        traj = Trajectory(path, times, xc.masses)
    clearance = segment_clearance(path)
    nres = newton_residual(traj) if len(traj) >= 3 else 0.0
    eres = energy_residual(traj)
    drift = center_of_mass_drift(traj)
    clear_ok = clearance > opts.clearance_tol * scale
    ok = newton_res.converged and clear_ok and nres <= opts.newton_tol
    msg = []
    if not newton_res.converged:
        msg.append("optimizer did not converge")
    if not clear_ok:
        msg.append(f"path passes within {clearance:.3g} of a collision")
    if nres > opts.newton_tol:
        msg.append(f"newton residual {nres:.3g} above {opts.newton_tol:g}")
    return MinimizerResult(
        phi=float(phi_value),
        trajectory=traj,
        backend=backend,
        newton_residual=nres,
        energy_residual=eres,
        converged=bool(ok),
        com_drift=drift,
        iterations=newton_res.iterations,
        decrement=newton_res.decrement,
        min_clearance=clearance,
        multiplicity=multiplicity,
        duration=float(traj.times[-1] - traj.times[0]),
        message="; ".join(msg),
        extra=extra or {},
    )


def _phi_jacobi(xc, yc, opts, offsets, initial):
    m = xc.m
    eps = opts.barrier_eps * _scales(xc, yc)
    candidates = []
    w = None
    for init in _starts(xc, yc, opts, eps, initial):
        z0 = init[1:-1].reshape(opts.nodes - 1, -1)
        if w is None:
            # one grading for all starts, so that equal minimizers coincide node by node
            w = _grading_weights(init, m)
        base = _JacobiEnergy(xc.r, yc.r, m, w).safe_value(z0)
        res = _solve_staged(lambda beta: _JacobiEnergy(xc.r, yc.r, m, w, beta, eps), z0, opts, eps, base)
        path = _JacobiEnergy(xc.r, yc.r, m, w).full(res.x)
        candidates.append((jacobi_length(path, xc.masses), path, res))
    # prefer converged solves; among them the shortest
    candidates.sort(key=lambda c: (not c[2].converged, c[0]))
    value, path, res = candidates[0]
    multiple = len(candidates) > 1 and abs(candidates[1][0] - value) <= 1e-6 * value and (
        np.max(np.abs(candidates[1][1] - path)) > 1e-3 * config_scale(xc)
    )
    out = _finish(path, xc, opts, "jacobi", res, value, multiplicity=multiple,
                  extra={"path_energy": res.value})
    return replace(out, offsets=offsets)


def _phi_time(xc, yc, opts, offsets, initial):
    """Time-domain action, minimized over nodes for each duration, then over duration."""
    m = xc.m
    eps = opts.barrier_eps * _scales(xc, yc)
    init = next(_starts(xc, yc, opts, eps, initial))
    guide = reparametrize_energy_zero(init, xc.masses)
    tau0 = float(guide.times[-1])
    frac = np.diff(guide.times) / tau0
    state = {"z": init[1:-1].reshape(opts.nodes - 1, -1)}
    results = {}

    def inner(log_tau):
        dt = math.exp(log_tau) * frac
        base = _TimeAction(xc.r, yc.r, m, dt).safe_value(state["z"])
        res = _solve_staged(lambda beta: _TimeAction(xc.r, yc.r, m, dt, beta, eps),
                            state["z"], opts, eps, base)
        state["z"] = res.x
        results[log_tau] = res
        return res.value

    lo, hi = math.log(tau0) - 1.5, math.log(tau0) + 1.5
    opt = scipy.optimize.minimize_scalar(inner, bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-9, "maxiter": 200})
    log_tau = float(opt.x)
    if log_tau not in results:
        inner(log_tau)
    res = results[log_tau]
    tau = math.exp(log_tau)
    times = np.concatenate([[0.0], np.cumsum(tau * frac)])
    path = _TimeAction(xc.r, yc.r, m, tau * frac).full(res.x)
    at_bound = min(log_tau - lo, hi - log_tau) < 1e-3
    out = _finish(path, xc, opts, "time", res, res.value, times=times,
                  extra={"tau_at_bound": bool(at_bound)})
    if at_bound:
        out = replace(out, converged=False, message=(out.message + "; duration hit search bound").lstrip("; "))
    return replace(out, offsets=offsets)
