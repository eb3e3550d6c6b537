from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import two_body_phi

from nbkam.action_path import (
    MinimizerResult,
    PhiOptions,
    Trajectory,
    action,
    center_of_mass_drift,
    energy_residual,
    jacobi_length,
    newton_residual,
    phi,
    reparametrize_energy_zero,
)
from nbkam.homothetic import orbit_action, orbit_at, sample, two_body_orbit
from nbkam.mass_geometry import (
    CollisionError,
    Configuration,
    planar_rotation,
    potential,
    rotate,
)

OPTS = PhiOptions(nodes=200)


def _pair(z, masses=(1.0, 1.0)):
    """Two bodies with relative vector z (complex), centered."""
    m1, m2 = masses
    d = np.array([z.real, z.imag])
    return Configuration([m2 / (m1 + m2) * d, -m1 / (m1 + m2) * d], masses)


def test_ray_matches_homothetic_action():
    h = two_body_orbit()
    res = phi(orbit_at(h, 1.0), orbit_at(h, 8.0), OPTS)
    exact = orbit_action(h, 1.0, 8.0)
    assert res.converged
    # [DERIVED] phi(gamma(1), gamma(8)) = (4c^2/3)(8^(1/3) - 1), about 2.8845
    assert exact == pytest.approx(2.8845, abs=1e-4)
    assert abs(res.phi - exact) / exact <= 5e-3
    backend = phi(orbit_at(h, 1.0), orbit_at(h, 8.0), PhiOptions(nodes=200, backend="time"))
    assert abs(backend.phi - res.phi) / res.phi <= 1e-2


@pytest.mark.parametrize("zx,zy", [
    (1.0 + 0.5j, -2.0 + 1.0j),
    (0.3 - 1.2j, 4.0 + 3.0j),
    (-1.0 + 0.1j, -1.0 - 0.1j),
    (2.0j, 50.0 - 20.0j),
])
def test_two_body_against_closed_form(zx, zy):
    # [DERIVED] the square-root map flattens the two-body Jacobi metric
    x, y = _pair(zx), _pair(zy)
    res = phi(x, y, PhiOptions(nodes=400))
    exact = two_body_phi(x, y)
    assert res.converged
    assert res.phi == pytest.approx(exact, rel=1e-4)


def test_unequal_masses_closed_form():
    x, y = _pair(1.0 + 1.0j, (1.0, 3.0)), _pair(-3.0 + 0.5j, (1.0, 3.0))
    assert phi(x, y, PhiOptions(nodes=400)).phi == pytest.approx(two_body_phi(x, y), rel=1e-4)


def test_second_order_convergence():
    h = two_body_orbit()
    exact = orbit_action(h, 1.0, 8.0)
    errs = [abs(phi(orbit_at(h, 1.0), orbit_at(h, 8.0), PhiOptions(nodes=k)).phi - exact) for k in (50, 100)]
    assert errs[0] / errs[1] >= 3.0


def test_equal_endpoints_and_symmetry(rng):
    x = Configuration(rng.standard_normal((3, 2)), [1, 1, 1])
    y = Configuration(rng.standard_normal((3, 2)), [1, 1, 1])
    assert phi(x, x, OPTS).phi == 0.0
    a, b = phi(x, y, OPTS), phi(y, x, OPTS)
    assert abs(a.phi - b.phi) / a.phi <= 2e-4


def test_translation_and_rotation_invariance(rng):
    x = Configuration(rng.standard_normal((3, 2)), [1, 2, 1])
    y = Configuration(rng.standard_normal((3, 2)), [1, 2, 1])
    base = phi(x, y, OPTS)
    shift = np.array([3.0, -1.0])
    moved = phi(x.with_positions(x.r + shift), y, OPTS)
    assert moved.phi == pytest.approx(base.phi, rel=1e-8)
    assert np.allclose(np.asarray(moved.offsets[0]) - np.asarray(base.offsets[0]), shift)
    q = planar_rotation(0.7)
    assert phi(rotate(x, q), rotate(y, q), OPTS).phi == pytest.approx(base.phi, rel=1e-6)


def test_minimizer_diagnostics(rng):
    x = Configuration(rng.standard_normal((3, 2)), [1, 1, 1])
    y = Configuration(3 * rng.standard_normal((3, 2)), [1, 1, 1])
    res = phi(x, y, PhiOptions(nodes=400))
    tr = res.trajectory
    assert res.converged
    assert res.energy_residual <= 1e-3
    assert center_of_mass_drift(tr) <= 1e-8
    assert np.allclose(tr.nodes[0], x.r - x.r.T @ x.m / x.m.sum())
    # the action of the reported curve is the reported value
    assert action(tr) == pytest.approx(res.phi, rel=1e-3)
    assert jacobi_length(tr) == pytest.approx(res.phi, rel=1e-3)


def test_time_reparametrization():
    h = two_body_orbit()
    path = sample(h, np.linspace(1.0, 8.0, 201)).nodes
    tr = reparametrize_energy_zero(path, h.a.masses, t0=1.0)
    # [DERIVED] the homothetic orbit is already at zero energy: times are recovered
    assert np.allclose(tr.times, np.linspace(1.0, 8.0, 201), rtol=1e-3)
    assert energy_residual(tr) <= 1e-3


def test_result_roundtrip():
    h = two_body_orbit()
    res = phi(orbit_at(h, 1.0), orbit_at(h, 2.0), PhiOptions(nodes=32))
    back = MinimizerResult.from_dict(res.to_dict())
    assert back.phi == res.phi
    assert np.array_equal(back.trajectory.nodes, res.trajectory.nodes)
    tr = Trajectory.from_dict(res.trajectory.to_dict())
    assert np.array_equal(tr.times, res.trajectory.times)


def test_errors():
    good = _pair(1.0 + 0j)
    with pytest.raises(CollisionError):
        phi(Configuration([[0, 0], [0, 0]], [1, 1]), good, OPTS)
    with pytest.raises(ValueError):
        phi(good, Configuration([[0, 0], [1, 0]], [1, 2]), OPTS)
    with pytest.raises(ValueError):
        phi(good, Configuration([[0, 0, 0], [1, 0, 0]], [1, 1]), OPTS)
    for bad in (dict(nodes=2), dict(backend="other"), dict(log_grading=1.5), dict(rtol=0.0)):
        with pytest.raises(ValueError):
            PhiOptions(**bad)
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2, 2)), [0.0, 1.0, 1.0], [1, 1])


@settings(max_examples=6, deadline=None)
@given(
    st.tuples(*[st.floats(-2, 2) for _ in range(6)]),
)
def test_triangle_inequality_property(vals):
    # [DERIVED] two-body values through the closed form, checked against the solver
    zs = [complex(vals[2 * i], vals[2 * i + 1]) for i in range(3)]
    if min(abs(z) for z in zs) < 0.2 or min(abs(zs[i] - zs[j]) for i, j in ((0, 1), (0, 2), (1, 2))) < 0.2:
        return
    x, y, z = (_pair(w) for w in zs)
    opts = PhiOptions(nodes=100)
    xy, yz, xz = phi(x, y, opts).phi, phi(y, z, opts).phi, phi(x, z, opts).phi
    assert xz <= xy + yz + 2e-4 * max(xz, 1.0)
    assert xy == pytest.approx(two_body_phi(x, y), rel=2e-3)


def test_spatial_three_body_runs(rng):
    x = Configuration(rng.standard_normal((3, 3)), [1, 1, 1])
    y = Configuration(2 * rng.standard_normal((3, 3)), [1, 1, 1])
    res = phi(x, y, OPTS)
    assert res.converged and math.isfinite(res.phi) and res.phi > 0


def test_stationary_curve_action():
    # [TRIVIAL] v = 0: the action is duration times U
    x = _pair(1.0 + 1.0j)
    tr = Trajectory(np.repeat(x.r[None], 11, axis=0), np.linspace(0.0, 2.5, 11), x.masses)
    assert action(tr) == pytest.approx(2.5 * potential(x))
    assert jacobi_length(tr) == 0.0


def test_straight_line_is_not_a_solution(rng):
    x = Configuration(rng.standard_normal((3, 2)), [1, 1, 1])
    y = Configuration(rng.standard_normal((3, 2)) + 3.0, [1, 1, 1])
    s = np.linspace(0, 1, 41)[:, None, None]
    tr = Trajectory((1 - s) * x.r + s * y.r, np.linspace(0, 1, 41), x.masses)
    assert newton_residual(tr) > 0.1
    # any path bounds the infimum from above
    assert phi(x, y, OPTS).phi <= jacobi_length(tr.nodes, x.masses) + 1e-9


def test_center_of_mass_drift_constructed():
    t = np.linspace(0.0, 1.0, 21)
    base = np.array([[1.0, 0.0], [-1.0, 0.0]])
    nodes = base[None] + (t**2)[:, None, None] * np.array([1.0, 0.0])
    drift = center_of_mass_drift(Trajectory(nodes, t, [1, 1]))
    fit = np.polyfit(t, t**2, 1)
    assert drift == pytest.approx(np.max(np.abs(t**2 - np.polyval(fit, t))))
    moved = Trajectory(nodes + np.array([1.0, 0.0]) * t[:, None, None], t, [1, 1])
    assert center_of_mass_drift(moved) == pytest.approx(drift)
