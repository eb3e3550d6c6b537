from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from nbkam.action_path import action, energy_residual
from nbkam.central_config import minimize_on_sphere
from nbkam.homothetic import (
    HomotheticOrbit,
    energy_defect,
    homothetic_report,
    orbit_action,
    orbit_at,
    orbit_velocity,
    sample,
    two_body_orbit,
    verify_solution,
)
from nbkam.mass_geometry import Masses, angular_momentum, potential


@pytest.fixture(scope="module")
def lagrange():
    return HomotheticOrbit.from_minimal(minimize_on_sphere(Masses([1, 1, 1]), 2, seeds=4))


def test_two_body_constant():
    h = two_body_orbit()
    # [TRIVIAL] c^3 = 9 U0 / 2 with U0 = sqrt(1/2) for unit masses
    assert h.U0 == pytest.approx(math.sqrt(0.5))
    assert h.c**3 == pytest.approx(4.5 * h.U0, rel=1e-14)
    # [DERIVED] c = (9/(2 sqrt 2))^(1/3), about 1.4708
    assert h.c == pytest.approx(1.4708, abs=1e-4)


def test_lagrange_constant(lagrange):
    assert lagrange.U0 == pytest.approx(3.0, abs=1e-8)
    assert lagrange.c == pytest.approx(13.5 ** (1 / 3), rel=1e-9)


def test_zero_energy(lagrange):
    for t in (1e-3, 0.5, 1.0, 10.0, 1e4):
        assert energy_defect(lagrange, t) <= 1e-13


def test_newton_residual_converges(lagrange):
    coarse = verify_solution(lagrange, np.linspace(1, 8, 201))
    fine = verify_solution(lagrange, np.linspace(1, 8, 401))
    assert fine <= 1e-2
    # second order: halving the step quarters the residual
    assert coarse / fine >= 3.5
    with pytest.raises(ValueError):
        verify_solution(lagrange, [0.0, 1.0])


def test_action_closed_form_against_quadrature(lagrange):
    # [DERIVED] integrate kinetic plus potential energy along the orbit
    def lagrangian(t):
        v = orbit_velocity(lagrange, t)
        x = orbit_at(lagrange, t)
        return 0.5 * float(np.einsum("i,ij,ij->", x.m, v, v)) + potential(x)

    val, _ = quad(lagrangian, 1.0, 8.0, epsabs=1e-12, epsrel=1e-12)
    assert orbit_action(lagrange, 1.0, 8.0) == pytest.approx(val, rel=1e-10)
    assert orbit_action(lagrange, 0.0, 1.0) == pytest.approx(lagrange.action_coefficient)


def test_sampled_action_converges(lagrange):
    exact = orbit_action(lagrange, 1.0, 8.0)
    errs = [abs(action(sample(lagrange, np.linspace(1, 8, k + 1))) - exact) for k in (100, 200)]
    assert errs[1] / exact <= 1e-4
    assert errs[0] / errs[1] >= 3.5
    assert energy_residual(sample(lagrange, np.linspace(1, 8, 401))) <= 1e-3


def test_zero_angular_momentum(lagrange):
    for t in (0.5, 2.0, 30.0):
        c = angular_momentum(orbit_at(lagrange, t), orbit_velocity(lagrange, t))
        assert np.max(np.abs(c)) <= 1e-12


def test_domain_errors(lagrange):
    with pytest.raises(ValueError):
        orbit_at(lagrange, -1.0)
    with pytest.raises(ValueError):
        orbit_velocity(lagrange, 0.0)
    with pytest.raises(ValueError):
        orbit_action(lagrange, 2.0, 1.0)
    assert np.allclose(orbit_at(lagrange, 0.0).r, 0.0)


def test_report(lagrange):
    rep = homothetic_report(lagrange)
    assert abs(rep["c3_minus_9U0_over_2"]) <= 1e-12
    assert rep["scaling_exponent"] == pytest.approx(1 / 3, abs=1e-12)
    assert rep["newton_residual"] <= 1e-2


def test_requires_unit_inertia():
    h = two_body_orbit()
    with pytest.raises(ValueError):
        HomotheticOrbit.from_configuration(h.a.with_positions(2 * h.a.r))


def test_rotated_orbit():
    h = two_body_orbit(1.0, 3.0, d=3)
    q = np.array([[0, -1.0, 0], [1.0, 0, 0], [0, 0, 1.0]])
    g = h.rotated(q)
    assert np.allclose(orbit_at(g, 2.0).r, orbit_at(h, 2.0).r @ q.T)
    assert g.c == h.c
