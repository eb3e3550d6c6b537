"""The parabolic homothetic motion ``gamma0(t) = c t^(2/3) a`` of a central configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .action_path import Trajectory, newton_residual
from .central_config import MinimalConfiguration
from .mass_geometry import Configuration, moment_of_inertia, potential


@dataclass(frozen=True)
class HomotheticOrbit:
    a: Configuration
    U0: float
    c: float

    @classmethod
    def from_minimal(cls, mc: MinimalConfiguration) -> "HomotheticOrbit":
        return cls.from_configuration(mc.a)

    @classmethod
    def from_configuration(cls, a: Configuration) -> "HomotheticOrbit":
        if abs(moment_of_inertia(a) - 1.0) > 1e-10:
            raise ValueError("the central configuration must satisfy I(a) = 1")
        u0 = potential(a)
        return cls(a, u0, (4.5 * u0) ** (1.0 / 3.0))

    def rotated(self, theta) -> "HomotheticOrbit":
        return HomotheticOrbit(self.a.with_positions(self.a.r @ np.asarray(theta).T), self.U0, self.c)

    @property
    def action_coefficient(self) -> float:
        """``4c^2/3``: the action from the origin up to time t is this times t^(1/3)."""
        return 4.0 * self.c**2 / 3.0


def orbit_at(h: HomotheticOrbit, t: float) -> Configuration:
    if t < 0:
        raise ValueError("the homothetic orbit is defined for t >= 0")
    return h.a.with_positions(h.c * t ** (2.0 / 3.0) * h.a.r)


def orbit_velocity(h: HomotheticOrbit, t: float) -> np.ndarray:
    if t <= 0:
        raise ValueError("velocity is unbounded at t = 0")
    return (2.0 * h.c / 3.0) * t ** (-1.0 / 3.0) * h.a.r


def orbit_action(h: HomotheticOrbit, t0: float, t1: float) -> float:
    """Closed-form action of the orbit on ``[t0, t1]``: ``(4c^2/3)(t1^(1/3) - t0^(1/3))``."""
    if t0 < 0 or t1 < t0:
        raise ValueError("need 0 <= t0 <= t1")
    return h.action_coefficient * (t1 ** (1.0 / 3.0) - t0 ** (1.0 / 3.0))


def sample(h: HomotheticOrbit, times) -> Trajectory:
    times = np.asarray(times, dtype=float)
    nodes = h.c * times[:, None, None] ** (2.0 / 3.0) * h.a.r[None]
    return Trajectory(nodes, times, h.a.masses)


def verify_solution(h: HomotheticOrbit, grid) -> float:
    """Newton-equation residual of the orbit sampled on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("grid must lie in (0, inf)")
    return newton_residual(sample(h, grid))


def energy_defect(h: HomotheticOrbit, t: float) -> float:
    """Relative zero-energy defect ``|1/2 |v|^2 - U| / U`` at time t."""
    v = orbit_velocity(h, t)
    x = orbit_at(h, t)
    kinetic = 0.5 * float(np.einsum("i,ij,ij->", x.m, v, v))
    u = potential(x)
    return abs(kinetic - u) / u


def homothetic_report(h: HomotheticOrbit, t0: float = 1.0, t1: float = 8.0, nodes: int = 400) -> dict:
    grid = np.linspace(t0, t1, nodes + 1)
    coarse = np.linspace(t0, t1, nodes // 2 + 1)
    return {
        "U0": h.U0,
        "c": h.c,
        "c3_minus_9U0_over_2": h.c**3 - 4.5 * h.U0,
        "energy_defect": max(energy_defect(h, t) for t in (0.1, 1.0, 10.0)),
        "newton_residual": verify_solution(h, grid),
        "newton_residual_coarse": verify_solution(h, coarse),
        "action": orbit_action(h, t0, t1),
        "interval": [t0, t1],
        "nodes": nodes,
        "scaling_exponent": _scaling_exponent(h),
    }


def _scaling_exponent(h: HomotheticOrbit) -> float:
    t = np.logspace(0, 3, 13)
    a = [orbit_action(h, 0.0, s) for s in t]
    return float(np.polyfit(np.log(t), np.log(a), 1)[0])


def two_body_orbit(m1: float = 1.0, m2: float = 1.0, d: int = 2) -> HomotheticOrbit:
    """Homothetic orbit of the (unique up to rotation) two-body central configuration."""
    m = np.array([m1, m2])
    r = np.zeros((2, d))
    # m1 r1 + m2 r2 = 0 and m1 r1^2 + m2 r2^2 = 1
    rho = 1.0 / math.sqrt(m1 * m2 / (m1 + m2))
    r[0, 0] = rho * m2 / (m1 + m2)
    r[1, 0] = -rho * m1 / (m1 + m2)
    return HomotheticOrbit.from_configuration(Configuration(r, m))
