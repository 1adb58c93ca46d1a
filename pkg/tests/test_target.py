"""Great-circle strip kinematics checked against finite differences.

The derivative chain is validated as a cascade: velocity against
differenced positions, acceleration against differenced velocities,
jerk against differenced accelerations.  Each stage uses first-order
central differences at a step where roundoff stays far below the
tolerance.
"""

import math

import numpy as np
import pytest

from stripscan.astro import WGS84_RADIUS, EarthModel, earth_rotation_dcm
from stripscan.errors import DegenerateGeometryError, ValidationError
from stripscan.target import (
    ScanState,
    build_curve,
    ecef_to_latlon,
    evaluate,
    latlon_to_ecef,
    point_at,
)

EARTH = EarthModel()
START = latlon_to_ecef(15.0, 25.0)
END = latlon_to_ecef(20.0, 60.0)
CURVE = build_curve(START, END)

# cubic arc-length schedule used by the finite-difference cascade
C0, C1, C2, C3 = 0.012, 1.1e-3, 2.0e-5, 1.5e-6


def scan_at(t: float) -> ScanState:
    return ScanState(
        s=C0 + C1 * t + C2 * t * t + C3 * t**3,
        s_dot=C1 + 2.0 * C2 * t + 3.0 * C3 * t * t,
        s_ddot=2.0 * C2 + 6.0 * C3 * t,
        s_dddot=6.0 * C3,
    )


def test_latlon_round_trip():
    lat, lon = ecef_to_latlon(latlon_to_ecef(-33.5, 151.2))
    assert abs(lat - (-33.5)) < 1e-10
    assert abs(lon - 151.2) < 1e-10


def test_curve_endpoints_and_length():
    assert abs(np.linalg.norm(START) - WGS84_RADIUS) < 1e-6
    np.testing.assert_allclose(point_at(CURVE, 0.0), START, atol=1e-6)
    np.testing.assert_allclose(point_at(CURVE, CURVE.s_f), END, atol=1e-6)
    u0 = START / np.linalg.norm(START)
    u1 = END / np.linalg.norm(END)
    assert abs(CURVE.s_f - math.acos(float(u0 @ u1))) < 1e-12


def test_quarter_circle_arc_length():
    a = latlon_to_ecef(0.0, 0.0)
    b = latlon_to_ecef(0.0, 90.0)
    assert abs(build_curve(a, b).s_f - math.pi / 2.0) < 1e-12


def test_rejects_point_off_sphere():
    with pytest.raises(ValidationError):
        build_curve(START * 1.01, END)


def test_rejects_coincident_endpoints():
    with pytest.raises(DegenerateGeometryError):
        build_curve(START, START)


def test_rejects_antipodal_endpoints():
    with pytest.raises(DegenerateGeometryError):
        build_curve(START, -START)


def test_points_stay_on_sphere():
    for s in np.linspace(0.0, CURVE.s_f, 7):
        assert abs(np.linalg.norm(point_at(CURVE, s)) - WGS84_RADIUS) < 1e-6


def test_inertial_position_consistent_with_rotation():
    t = 42.0
    state = evaluate(CURVE, scan_at(t), t, EARTH)
    expected = earth_rotation_dcm(t, EARTH) @ point_at(CURVE, scan_at(t).s)
    np.testing.assert_allclose(state.r, expected, atol=1e-6)


def test_velocity_matches_differenced_position():
    t, h = 42.0, 1e-3
    state = evaluate(CURVE, scan_at(t), t, EARTH)
    r_p = evaluate(CURVE, scan_at(t + h), t + h, EARTH).r
    r_m = evaluate(CURVE, scan_at(t - h), t - h, EARTH).r
    np.testing.assert_allclose(state.vel, (r_p - r_m) / (2.0 * h), atol=1e-4)


def test_acceleration_matches_differenced_velocity():
    t, h = 42.0, 1e-3
    state = evaluate(CURVE, scan_at(t), t, EARTH)
    v_p = evaluate(CURVE, scan_at(t + h), t + h, EARTH).vel
    v_m = evaluate(CURVE, scan_at(t - h), t - h, EARTH).vel
    np.testing.assert_allclose(state.acc, (v_p - v_m) / (2.0 * h), atol=1e-6)


def test_jerk_matches_differenced_acceleration():
    t, h = 42.0, 1e-3
    state = evaluate(CURVE, scan_at(t), t, EARTH)
    a_p = evaluate(CURVE, scan_at(t + h), t + h, EARTH).acc
    a_m = evaluate(CURVE, scan_at(t - h), t - h, EARTH).acc
    np.testing.assert_allclose(state.jerk, (a_p - a_m) / (2.0 * h), atol=1e-6)


def test_fixed_derivatives_match_differenced_fixed_position():
    # difference the curve point in fixed coords, then rotate the result
    t, h = 42.0, 1e-3
    state = evaluate(CURVE, scan_at(t), t, EARTH)
    p_p = point_at(CURVE, scan_at(t + h).s)
    p_m = point_at(CURVE, scan_at(t - h).s)
    fd_fixed = (p_p - p_m) / (2.0 * h)
    np.testing.assert_allclose(state.fixed_vel, earth_rotation_dcm(t, EARTH) @ fd_fixed, atol=1e-4)


def test_nonrotating_earth_collapses_transport_terms():
    still = EarthModel(rotation_rate=0.0)
    t = 10.0
    state = evaluate(CURVE, scan_at(t), t, still)
    np.testing.assert_allclose(state.vel, state.fixed_vel, atol=1e-12)
    np.testing.assert_allclose(state.acc, state.fixed_acc, atol=1e-12)
    np.testing.assert_allclose(state.jerk, state.fixed_jerk, atol=1e-12)


def test_frozen_scan_point_moves_with_the_ground():
    t = 300.0
    state = evaluate(CURVE, ScanState(s=0.01), t, EARTH)
    omega = EARTH.omega_vec()
    np.testing.assert_allclose(state.fixed_vel, 0.0, atol=1e-12)
    np.testing.assert_allclose(state.vel, np.cross(omega, state.r), atol=1e-10)
    np.testing.assert_allclose(state.acc, np.cross(omega, np.cross(omega, state.r)), atol=1e-10)


def test_tangential_speed_scales_with_rate():
    t = 5.0
    slow = evaluate(CURVE, ScanState(s=0.01, s_dot=1e-3), t, EarthModel(rotation_rate=0.0))
    fast = evaluate(CURVE, ScanState(s=0.01, s_dot=2e-3), t, EarthModel(rotation_rate=0.0))
    np.testing.assert_allclose(fast.vel, 2.0 * slow.vel, rtol=1e-12)
    assert abs(np.linalg.norm(slow.vel) - WGS84_RADIUS * 1e-3) < 1e-6
