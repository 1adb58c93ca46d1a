"""Two-body propagation checks against closed-form orbital mechanics."""

import math

import numpy as np
import pytest

from stripscan.astro import (
    EARTH_ROTATION_RATE,
    WGS84_MU,
    WGS84_RADIUS,
    EarthModel,
    circular_orbit_state,
    earth_rotation_dcm,
    fixed_frame_derivative,
    propagate,
    specific_energy,
    two_body_accel_jerk,
)
from stripscan.errors import ImpactError, ValidationError

R0 = np.array([WGS84_RADIUS + 500e3, 0.0, 0.0])
V_CIRC = math.sqrt(WGS84_MU / (WGS84_RADIUS + 500e3))
V0 = np.array([0.0, V_CIRC * math.cos(math.radians(53.0)), V_CIRC * math.sin(math.radians(53.0))])


def test_accel_is_central_inverse_square():
    r = np.array([7.0e6, 0.0, 0.0])
    v = np.array([0.0, 7.5e3, 0.0])
    a, j = two_body_accel_jerk(r, v, WGS84_MU)
    np.testing.assert_allclose(a, [-WGS84_MU / 7.0e6**2, 0.0, 0.0], rtol=1e-14)
    # r.v = 0 here, so the jerk reduces to -mu v / r^3
    np.testing.assert_allclose(j, -WGS84_MU * v / 7.0e6**3, rtol=1e-14)


def test_jerk_matches_derivative_of_accel():
    h = 1e-3
    state_m = propagate(R0, V0, 10.0 - h)
    state_0 = propagate(R0, V0, 10.0)
    state_p = propagate(R0, V0, 10.0 + h)
    a_m, _ = two_body_accel_jerk(state_m.r, state_m.v, WGS84_MU)
    a_p, _ = two_body_accel_jerk(state_p.r, state_p.v, WGS84_MU)
    fd = (a_p - a_m) / (2.0 * h)
    np.testing.assert_allclose(state_0.j, fd, atol=1e-8)


def test_propagated_accel_and_jerk_fields_match_formulas():
    state = propagate(R0, V0, 17.0)
    a, j = two_body_accel_jerk(state.r, state.v, WGS84_MU)
    np.testing.assert_allclose(state.a, a, rtol=1e-15)
    np.testing.assert_allclose(state.j, j, rtol=1e-15)


def test_energy_drift_over_thirty_seconds():
    e0 = specific_energy(R0, V0, WGS84_MU)
    state = propagate(R0, V0, 30.0)
    e1 = specific_energy(state.r, state.v, WGS84_MU)
    assert abs(e1 - e0) / abs(e0) < 1e-10


def test_orbit_closes_after_one_period():
    a = WGS84_RADIUS + 500e3
    period = 2.0 * math.pi * math.sqrt(a**3 / WGS84_MU)
    state = propagate(R0, V0, period)
    assert np.linalg.norm(state.r - R0) < 0.05
    assert np.linalg.norm(state.v - V0) < 1e-4


def test_backward_propagation_inverts_forward():
    fwd = propagate(R0, V0, 25.0)
    back = propagate(fwd.r, fwd.v, -25.0)
    np.testing.assert_allclose(back.r, R0, atol=1e-6)
    np.testing.assert_allclose(back.v, V0, atol=1e-9)


def test_rejects_subsurface_start():
    with pytest.raises(ValidationError):
        propagate(np.array([WGS84_RADIUS - 1.0, 0.0, 0.0]), V0, 1.0)


def test_rejects_unbound_orbit():
    v_escape = math.sqrt(2.0 * WGS84_MU / np.linalg.norm(R0))
    with pytest.raises(ValidationError):
        propagate(R0, np.array([0.0, 1.01 * v_escape, 0.0]), 1.0)


def test_impact_detected_during_propagation():
    r = np.array([WGS84_RADIUS + 1000.0, 0.0, 0.0])
    v = np.array([-2000.0, 100.0, 0.0])
    with pytest.raises(ImpactError):
        propagate(r, v, 5.0)


def test_rotation_dcm_quarter_turn():
    earth = EarthModel()
    t = (math.pi / 2.0) / earth.rotation_rate
    dcm = earth_rotation_dcm(t, earth)
    # a vector pinned to the fixed frame at fixed coords x-hat has
    # inertial coords y-hat after a quarter turn
    np.testing.assert_allclose(dcm @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(earth_rotation_dcm(0.0, earth), np.eye(3), atol=1e-15)


def test_rotation_dcm_composes():
    earth = EarthModel(theta0=0.0)
    d1 = earth_rotation_dcm(1000.0, earth)
    d2 = earth_rotation_dcm(2345.0, earth)
    d12 = earth_rotation_dcm(3345.0, earth)
    np.testing.assert_allclose(d12, d1 @ d2, atol=1e-14)


def test_initial_angle_offsets_rotation():
    earth = EarthModel(theta0=0.3)
    np.testing.assert_allclose(
        earth_rotation_dcm(0.0, earth) @ [1.0, 0.0, 0.0],
        [math.cos(0.3), math.sin(0.3), 0.0],
        atol=1e-14,
    )


def test_fixed_frame_derivative_of_ground_point_vanishes():
    earth = EarthModel()
    t = 1234.5
    r_fixed = np.array([WGS84_RADIUS, 500.0, -3000.0])
    r_inertial = earth_rotation_dcm(t, earth) @ r_fixed
    v_inertial = np.cross(earth.omega_vec(), r_inertial)
    np.testing.assert_allclose(
        fixed_frame_derivative(v_inertial, r_inertial, earth), 0.0, atol=1e-9
    )


def test_circular_orbit_state_geometry():
    alt, inc, raan, arglat = 500e3, math.radians(53.0), math.radians(40.0), math.radians(25.0)
    r, v = circular_orbit_state(alt, inc, raan, arglat)
    radius = WGS84_RADIUS + alt
    assert abs(np.linalg.norm(r) - radius) < 1e-6
    assert abs(np.linalg.norm(v) - math.sqrt(WGS84_MU / radius)) < 1e-9
    assert abs(float(r @ v)) < 1e-3
    h = np.cross(r, v)
    assert abs(h[2] / np.linalg.norm(h) - math.cos(inc)) < 1e-12


def test_circular_orbit_at_ascending_node():
    r, v = circular_orbit_state(500e3, math.radians(53.0), math.radians(40.0), 0.0)
    r_hat = r / np.linalg.norm(r)
    np.testing.assert_allclose(
        r_hat, [math.cos(math.radians(40.0)), math.sin(math.radians(40.0)), 0.0], atol=1e-14
    )
    assert v[2] > 0.0  # heading north at the ascending node
