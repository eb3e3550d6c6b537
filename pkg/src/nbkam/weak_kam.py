"""Finite-horizon Busemann weak KAM solutions and their calibrating curves.

For a minimal central configuration ``a`` with homothetic orbit ``gamma0``,

    u_a(x) ~ phi(x, gamma0(T)) - A(gamma0 | [0, T])

for a large horizon ``T``. The normalizer is the closed-form orbit action,
which equals ``phi(0, gamma0(T))`` because the orbit minimizes free-time action
from the origin. Rotated fields move the target, ``u_{theta,a} = u_{R_theta a}``,
and the invariant field is the infimum of those over a connected subgroup of
SO(d) given by skew generators.

Gradients follow the calibration convention ``u(x) - u(alpha(t)) = A``, so the
covector of ``u`` at the start of a calibrating curve is ``-M alpha'(0)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .action_path import (
    MinimizerResult,
    PhiOptions,
    PhiSolverError,
    Trajectory,
    action,
    phi,
)
from .cache import PhiCache, phi_key
from .homothetic import HomotheticOrbit, orbit_action, orbit_at
from .mass_geometry import (
    Configuration,
    GroupGenerators,
    angular_momentum_array,
    check_rotation,
    config_scale,
    dual_norm,
    exp_skew,
    mass_norm,
    mean_center,
    momentum_map_array,
    potential,
    potential_array,
    rotate,
    so_basis,
)

logger = logging.getLogger(__name__)

MODES = ("fixed", "rotated", "invariant")


@dataclass(frozen=True)
class WeakKamSpec:
    orbit: HomotheticOrbit
    mode: str = "fixed"
    horizon: float = 1000.0
    richardson: bool = False
    theta: np.ndarray | None = None
    generators: GroupGenerators | None = None
    phi_options: PhiOptions = field(default_factory=lambda: PhiOptions(nodes=400))
    scan_points: int = 64
    scan_nodes: int = 64
    group_samples: int = 240
    polish_starts: int = 5
    angle_tol: float = 1e-7
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.mode == "rotated":
            if self.theta is None:
                raise ValueError("rotated mode needs a rotation")
            object.__setattr__(self, "theta", check_rotation(self.theta))
        if self.mode == "invariant":
            gens = self.generators or GroupGenerators.full(self.orbit.a.d)
            if gens.d != self.orbit.a.d:
                raise ValueError("generators do not match the spatial dimension")
            object.__setattr__(self, "generators", gens)

    @property
    def normalizer(self) -> float:
        return orbit_action(self.orbit, 0.0, self.horizon)

    def with_horizon(self, horizon: float) -> "WeakKamSpec":
        return replace(self, horizon=horizon)

    def with_nodes(self, nodes: int) -> "WeakKamSpec":
        return replace(self, phi_options=replace(self.phi_options, nodes=nodes))


@dataclass
class FieldSample:
    x: Configuration
    u: float
    gradient: np.ndarray | None = None
    optimal_rotation: np.ndarray | None = None
    error_estimate: float = 0.0
    phi_result: MinimizerResult | None = None
    angle: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "x": self.x.to_dict(),
            "u": self.u,
            "error_estimate": self.error_estimate,
            "angle": self.angle,
        }
        if self.gradient is not None:
            doc["gradient"] = np.asarray(self.gradient).tolist()
        if self.optimal_rotation is not None:
            doc["optimal_rotation"] = np.asarray(self.optimal_rotation).tolist()
        if self.phi_result is not None:
            doc["phi"] = self.phi_result.to_dict(with_trajectory=False)
        doc.update(self.extra)
        return doc


def solve_phi(x: Configuration, y: Configuration, opts: PhiOptions, cache: PhiCache | None = None):
    """``phi`` through the cache; raises ``PhiSolverError`` on a failed solve."""
    if cache is None:
        result = phi(x, y, opts)
    else:
        result = cache.get_or_compute(phi_key(x, y, opts), lambda: phi(x, y, opts))
    if not result.converged:
        raise PhiSolverError(f"phi solve failed: {result.message}", result)
    return result


def _target(spec: WeakKamSpec, rotation=None, horizon=None) -> Configuration:
    orbit = spec.orbit if rotation is None else spec.orbit.rotated(rotation)
    return orbit_at(orbit, spec.horizon if horizon is None else horizon)


def _is_origin(x: Configuration) -> bool:
    xc, _ = mean_center(x)
    return not np.any(xc.r)


def _fixed_value(x, spec, rotation, cache, horizon=None, nodes=None, single_start=False):
    opts = spec.phi_options
    if nodes is not None:
        # coarse scans only rank candidates; their discretization residual is not a failure
        opts = replace(opts, nodes=nodes, newton_tol=math.inf, n_starts=1)
    elif single_start:
        opts = replace(opts, n_starts=1)
    horizon = spec.horizon if horizon is None else horizon
    res = solve_phi(x, _target(spec, rotation, horizon), opts, cache)
    return res.phi - orbit_action(spec.orbit, 0.0, horizon), res


def busemann(x: Configuration, spec: WeakKamSpec, cache: PhiCache | None = None) -> FieldSample:
    """``u_a(x) ~ phi(x, gamma0(T)) - A(gamma0|[0,T])``; the origin maps to 0."""
    if spec.mode == "invariant":
        return invariant_busemann(x, spec, cache)
    if spec.mode == "rotated":
        return busemann_rotated(x, spec.theta, replace(spec, mode="fixed", theta=None), cache)
    if _is_origin(x):
        return FieldSample(x, 0.0)
    u, res = _fixed_value(x, spec, None, cache)
    err = 0.0
    extra = {}
    if spec.richardson:
        u4, _ = _fixed_value(x, spec, None, cache, horizon=4.0 * spec.horizon)
        err = abs(u4 - u)
        extra["u_4T"] = u4
    return FieldSample(x, u, error_estimate=err, phi_result=res, extra=extra)


def busemann_rotated(
    x: Configuration,
    theta,
    spec: WeakKamSpec,
    cache: PhiCache | None = None,
    via_target: bool = False,
) -> FieldSample:
    """``u_{theta,a}(x) = u_a(R_theta^{-1} x)``, or directly with target ``R_theta a``."""
    theta = check_rotation(theta)
    base = replace(spec, mode="fixed", theta=None)
    if via_target:
        if _is_origin(x):
            return FieldSample(x, 0.0, optimal_rotation=theta)
        u, res = _fixed_value(x, base, theta, cache)
        return FieldSample(x, u, optimal_rotation=theta, phi_result=res)
    sample = busemann(rotate(x, theta.T), base, cache)
    return replace(sample, x=x, optimal_rotation=theta)


# --- infimum over a subgroup ------------------------------------------------


def _normalized_generator(g: np.ndarray) -> np.ndarray:
    """Scale a skew generator so that its fastest rotation has unit angular speed."""
    w = np.abs(np.linalg.eigvals(g).imag).max()
    return g / w


def _group_element(coef, gens):
    return exp_skew(sum(c * g for c, g in zip(coef, gens)))


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi_ = math.pi * (3.0 - math.sqrt(5.0)) * k
    rho = np.sqrt(1.0 - z**2)
    return np.stack([rho * np.cos(phi_), rho * np.sin(phi_), z], axis=1)


def _group_samples(gens, n: int, seed: int) -> np.ndarray:
    """Coefficient vectors covering the subgroup: axis-angle grid for SO(3), random otherwise."""
    k = len(gens)
    if k == 3 and gens[0].shape == (3, 3) and np.linalg.matrix_rank(np.array([g.ravel() for g in gens])) == 3:
        angles = np.array([0.25, 0.5, 0.75, 1.0]) * math.pi
        dirs = _fibonacci_sphere(max(1, (n - 1) // len(angles)))
        # express axis-angle vectors in the generator basis
        basis = np.array([[g[2, 1], g[0, 2], g[1, 0]] for g in gens]).T
        coefs = [np.zeros(3)] + [np.linalg.solve(basis, a * d) for a in angles for d in dirs]
        return np.array(coefs)
    rng = np.random.default_rng(seed)
    return np.vstack([np.zeros(k), rng.uniform(-math.pi, math.pi, size=(n - 1, k))])


def invariant_busemann(x: Configuration, spec: WeakKamSpec, cache: PhiCache | None = None) -> FieldSample:
    """Infimum of ``u_{theta,a}(x)`` over the subgroup generated by ``spec.generators``."""
    if spec.mode != "invariant":
        spec = replace(spec, mode="invariant")
    gens = spec.generators
    if _is_origin(x):
        return FieldSample(x, 0.0, optimal_rotation=np.eye(x.d), angle=0.0)
    if len(gens) == 1:
        sample = _circle_search(x, spec, _normalized_generator(gens.generators[0]), cache)
    else:
        sample = _group_search(x, spec, gens.generators, cache)
    if spec.richardson:
        u4, _ = _fixed_value(x, spec, sample.optimal_rotation, cache, horizon=4.0 * spec.horizon)
        sample.error_estimate = abs(u4 - sample.u)
        sample.extra["u_4T"] = u4
    return sample


def _circle_search(x, spec, gen, cache):
    n = spec.scan_points
    grid = 2.0 * math.pi * np.arange(n) / n
    coarse = np.array([_fixed_value(x, spec, exp_skew(t * gen), cache, nodes=spec.scan_nodes)[0] for t in grid])
    # refine around every local minimum of the scan within a small margin of the best
    is_min = (coarse <= np.roll(coarse, 1)) & (coarse <= np.roll(coarse, -1))
    spread = max(coarse.max() - coarse.min(), 1e-12)
    picks = [i for i in np.flatnonzero(is_min) if coarse[i] <= coarse.min() + 0.05 * spread]
    picks = sorted(picks, key=lambda i: coarse[i])[:3]
    step = 2.0 * math.pi / n
    memo = {}

    def f(t):
        if t not in memo:
            memo[t] = _fixed_value(x, spec, exp_skew(t * gen), cache, single_start=True)
        return memo[t][0]

    best = None
    for i in picks:
        t0 = grid[i]
        a, c = t0 - step, t0 + step
        b = t0
        # golden-section needs f(b) < f(a), f(c); fall back to a bounded search otherwise
        if f(b) < f(a) and f(b) < f(c):
            t = scipy.optimize.golden(f, brack=(a, b, c), tol=spec.angle_tol)
        else:
            t = scipy.optimize.minimize_scalar(
                f, bounds=(a, c), method="bounded", options={"xatol": spec.angle_tol}
            ).x
        val = f(t)
        if best is None or val < best[0]:
            best = (val, t)
    t = best[1]
    theta = exp_skew(t * gen)
    # the search ran single-start; the reported value uses every start
    u, res = _fixed_value(x, spec, theta, cache)
    t_wrapped = float(math.remainder(t, 2.0 * math.pi))
    return FieldSample(x, u, optimal_rotation=theta, phi_result=res, angle=t_wrapped,
                       extra={"scan_resolution": step, "scan_min": float(coarse.min())})


def _group_search(x, spec, gens, cache):
    samples = _group_samples(gens, spec.group_samples, spec.phi_options.seed)
    coarse = np.array(
        [_fixed_value(x, spec, _group_element(c, gens), cache, nodes=spec.scan_nodes)[0] for c in samples]
    )
    order = np.argsort(coarse, kind="stable")[: spec.polish_starts]
    memo = {}

    def f(c):
        key = tuple(np.round(c, 15))
        if key not in memo:
            memo[key] = _fixed_value(x, spec, _group_element(c, gens), cache, single_start=True)
        return memo[key][0]

    best = None
    for i in order:
        opt = scipy.optimize.minimize(
            f, samples[i], method="Nelder-Mead",
            options={"xatol": spec.angle_tol * 10, "fatol": 1e-12, "maxiter": 2000,
                     "initial_simplex": samples[i] + 0.15 * np.vstack([np.zeros(len(gens)), np.eye(len(gens))])},
        )
        if best is None or opt.fun < best[0]:
            best = (float(opt.fun), opt.x)
    coef = best[1]
    theta = _group_element(coef, gens)
    u, res = _fixed_value(x, spec, theta, cache)
    return FieldSample(x, u, optimal_rotation=theta, phi_result=res, angle=float(np.linalg.norm(coef)),
                       extra={"coefficients": coef.tolist(), "scan_min": float(coarse.min())})


# --- calibrating curves -----------------------------------------------------


@dataclass
class CalibrationReport:
    curve: Trajectory
    u_start: float
    calibration_defect: float
    relative_defect: float
    max_angmom: float
    momentum_components: dict
    asymptotic_error: list
    com_drift: float
    checkpoints: list
    exponent: float
    target_rotation: np.ndarray
    u_decreasing: bool

    def to_dict(self, with_curve: bool = False) -> dict:
        doc = {
            "u_start": self.u_start,
            "calibration_defect": self.calibration_defect,
            "relative_defect": self.relative_defect,
            "max_angmom": self.max_angmom,
            "momentum_components": self.momentum_components,
            "asymptotic_error": self.asymptotic_error,
            "com_drift": self.com_drift,
            "checkpoints": self.checkpoints,
            "exponent": self.exponent,
            "target_rotation": np.asarray(self.target_rotation).tolist(),
            "u_decreasing": self.u_decreasing,
        }
        if with_curve:
            doc["curve"] = self.curve.to_dict()
        return doc


def curve_momenta(curve: Trajectory, gens) -> np.ndarray:
    """Momentum map components at the interior nodes of ``curve``: ``(K-1, k)``."""
    v = curve.node_velocities()
    return momentum_map_array(curve.nodes[1:-1], v[1:-1], curve.m, list(gens))


def max_angular_momentum(curve: Trajectory) -> float:
    v = curve.node_velocities()
    c = angular_momentum_array(curve.nodes[1:-1], v[1:-1], curve.m)
    return float(np.max(np.linalg.norm(c, axis=(-2, -1)) / math.sqrt(2.0)))


def power_law_exponent(curve: Trajectory, window: float = 10.0) -> float:
    """Slope of log|alpha(t)| against log t over the last factor ``window`` of the curve."""
    t = curve.times
    norms = np.sqrt(np.einsum("i,kij,kij->k", curve.m, curve.nodes, curve.nodes))
    sel = t >= t[-1] / window
    return float(np.polyfit(np.log(t[sel]), np.log(norms[sel]), 1)[0])


def asymptotic_errors(curve: Trajectory, c: float, a: np.ndarray) -> list:
    """``|alpha(t) t^(-2/3) - c a|`` at dyadic times inside the curve."""
    out = []
    t_end = curve.times[-1]
    j = 0
    flat = curve.nodes.reshape(len(curve), -1)
    while 2.0**j <= t_end:
        t = 2.0**j
        pos = np.array([np.interp(t, curve.times, flat[:, k]) for k in range(flat.shape[1])])
        diff = pos.reshape(curve.nodes.shape[1:]) * t ** (-2.0 / 3.0) - c * a
        out.append([t, mass_norm(diff, curve.masses)])
        j += 1
    return out


def calibrating_curve(
    x: Configuration,
    spec: WeakKamSpec,
    horizon: float | None = None,
    cache: PhiCache | None = None,
    checkpoints=(1 / 16, 1 / 8, 1 / 4, 1 / 2),
) -> CalibrationReport:
    """Approximate calibrating ray from ``x``: the minimizer towards the (rotated) target.

    The calibration identity is checked at nodes where the accumulated action
    reaches the given fractions of the total, with ``u`` re-evaluated there by
    independent solves.
    """
    if horizon is not None:
        spec = spec.with_horizon(horizon)
    xc, _ = mean_center(x)
    sample = busemann(xc, spec, cache)
    res = sample.phi_result
    if res is None or res.trajectory is None:
        raise PhiSolverError("no calibrating curve at this point")
    theta = sample.optimal_rotation if sample.optimal_rotation is not None else np.eye(x.d)
    curve = res.trajectory
    seg_action = np.concatenate([[0.0], np.cumsum(_segment_actions(curve))])
    total = seg_action[-1]

    rows = []
    defect = 0.0
    values = [sample.u]
    for frac in checkpoints:
        k = int(np.searchsorted(seg_action, frac * total))
        k = min(max(k, 1), len(curve) - 2)
        head = Trajectory(curve.nodes[: k + 1], curve.times[: k + 1], curve.masses)
        a_head = action(head)
        u_k = busemann(curve.configuration(k), spec, cache).u
        gap = sample.u - u_k - a_head
        defect = max(defect, abs(gap))
        values.append(u_k)
        rows.append({"t": float(curve.times[k]), "u": u_k, "action": a_head, "defect": gap})

    gens = list(spec.generators) if spec.generators is not None else []
    mom = {"so_d": np.max(np.abs(curve_momenta(curve, so_basis(x.d))), axis=0).tolist()}
    if gens:
        mom["subgroup"] = np.max(np.abs(curve_momenta(curve, gens)), axis=0).tolist()
    a_target = spec.orbit.a.r @ np.asarray(theta).T
    return CalibrationReport(
        curve=curve,
        u_start=sample.u,
        calibration_defect=float(defect),
        relative_defect=float(defect / max(abs(sample.u), 1e-300)),
        max_angmom=max_angular_momentum(curve),
        momentum_components=mom,
        asymptotic_error=asymptotic_errors(curve, spec.orbit.c, a_target),
        com_drift=res.com_drift,
        checkpoints=rows,
        exponent=power_law_exponent(curve),
        target_rotation=np.asarray(theta),
        u_decreasing=bool(np.all(np.diff(values) < 0)),
    )


def _segment_actions(curve: Trajectory) -> np.ndarray:
    mid, vel = curve.midpoint_velocities()
    dt = np.diff(curve.times)
    kin = 0.5 * np.einsum("i,kij,kij->k", curve.m, vel, vel)
    return dt * (kin + potential_array(mid, curve.m))


# --- derivatives and diagnostics -------------------------------------------


@dataclass
class GradientEstimate:
    finite_difference: np.ndarray
    legendre: np.ndarray
    disagreement: float
    suspect: bool
    u: float
    sample: FieldSample

    def eikonal_residual(self, x: Configuration) -> float:
        u2 = 2.0 * potential(x)
        return abs(dual_norm(self.finite_difference, x.masses) ** 2 - u2) / u2


def gradient_u(x: Configuration, spec: WeakKamSpec, cache: PhiCache | None = None) -> GradientEstimate:
    """Two estimates of ``Du(x)``: central differences and ``-M alpha'(0)``.

    In invariant mode the finite differences are taken at the optimal
    rotation (the infimum's derivative equals that of the active member).
    """
    xc, _ = mean_center(x)
    sample = busemann(xc, spec, cache)
    h = spec.fd_step * config_scale(xc)
    fixed = spec if spec.mode == "fixed" else replace(spec, mode="fixed", theta=None, richardson=False)
    rot = sample.optimal_rotation if spec.mode != "fixed" else None
    grad = np.zeros_like(xc.r)
    for i in range(xc.n):
        for k in range(xc.d):
            vals = []
            for sgn in (1.0, -1.0):
                r = xc.r.copy()
                r[i, k] += sgn * h
                vals.append(_fixed_value(xc.with_positions(r), fixed, rot, cache)[0])
            grad[i, k] = (vals[0] - vals[1]) / (2.0 * h)
    curve = sample.phi_result.trajectory
    v0 = curve.node_velocities()[0]
    legendre = -xc.m[:, None] * v0
    dis = dual_norm(grad - legendre, xc.masses) / max(dual_norm(grad, xc.masses), 1e-300)
    sample.gradient = grad
    return GradientEstimate(grad, legendre, float(dis), bool(dis > 0.05), sample.u, sample)


def rotation_directional_derivative(x: Configuration, spec: WeakKamSpec, generator=None,
                                    cache: PhiCache | None = None, step: float = 1e-3) -> float:
    """Central difference of ``u`` along the rotation orbit ``t -> exp(t xi) x``."""
    xi = generator if generator is not None else so_basis(x.d)[0]
    xp = rotate(x, exp_skew(step * xi))
    xm = rotate(x, exp_skew(-step * xi))
    return (busemann(xp, spec, cache).u - busemann(xm, spec, cache).u) / (2.0 * step)


@dataclass
class DominationReport:
    slacks: list
    min_slack: float
    min_relative_slack: float
    skipped: list

    def to_dict(self) -> dict:
        return {"slacks": self.slacks, "min_slack": self.min_slack,
                "min_relative_slack": self.min_relative_slack, "skipped": self.skipped}


def domination_check(pairs, spec: WeakKamSpec, cache: PhiCache | None = None) -> DominationReport:
    """Slack ``phi(x, y) - (u(y) - u(x))`` for each pair; failed solves are skipped."""
    slacks, rel, skipped = [], [], []
    for idx, (x, y) in enumerate(pairs):
        try:
            xc, yc = mean_center(x)[0], mean_center(y)[0]
            if np.array_equal(xc.r, yc.r):
                slacks.append(0.0)
                rel.append(0.0)
                continue
            p = solve_phi(xc, yc, spec.phi_options, cache).phi
            s = p - (busemann(yc, spec, cache).u - busemann(xc, spec, cache).u)
        except PhiSolverError as exc:
            skipped.append({"index": idx, "reason": str(exc)})
            continue
        slacks.append(float(s))
        rel.append(float(s / p))
    return DominationReport(
        slacks=slacks,
        min_slack=min(slacks) if slacks else math.nan,
        min_relative_slack=min(rel) if rel else math.nan,
        skipped=skipped,
    )


@dataclass
class EikonalReport:
    residuals: list
    flagged: list
    max: float
    median: float

    def to_dict(self) -> dict:
        return {"residuals": self.residuals, "flagged": self.flagged, "max": self.max, "median": self.median}


def eikonal_residual(points, spec: WeakKamSpec, cache: PhiCache | None = None) -> EikonalReport:
    """Relative residual of ``|Du|_*^2 = 2U`` per point; suspected kinks are excluded."""
    residuals, flagged = [], []
    for idx, x in enumerate(points):
        est = gradient_u(x, spec, cache)
        r = est.eikonal_residual(mean_center(x)[0])
        if est.suspect:
            flagged.append({"index": idx, "residual": r, "disagreement": est.disagreement})
        else:
            residuals.append(r)
    arr = np.array(residuals)
    return EikonalReport(
        residuals=residuals,
        flagged=flagged,
        max=float(arr.max()) if arr.size else math.nan,
        median=float(np.median(arr)) if arr.size else math.nan,
    )
