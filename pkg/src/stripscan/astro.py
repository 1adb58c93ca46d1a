"""Spherical rotating Earth model and two-body orbit propagation.

The inertial frame is Earth-centered with the z-axis along the rotation
axis.  The Earth-fixed frame rotates about that axis at a constant rate,
so converting between the two is a single z-rotation by
``rotation_rate * t + theta0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImpactError, ValidationError

WGS84_RADIUS = 6378137.0            # m
WGS84_MU = 3.986004418e14           # m^3/s^2
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s

PROPAGATION_STEP = 0.1  # s, internal RK4 step


@dataclass(frozen=True)
class EarthModel:
    """Spherical Earth rotating about the inertial z-axis."""

    radius: float = WGS84_RADIUS
    mu: float = WGS84_MU
    rotation_rate: float = EARTH_ROTATION_RATE
    theta0: float = 0.0  # Earth rotation angle at t = 0, rad

    def omega_vec(self) -> np.ndarray:
        """Angular velocity of the Earth-fixed frame, inertial axes."""
        return np.array([0.0, 0.0, self.rotation_rate])


@dataclass(frozen=True)
class SatelliteState:
    """Inertial position, velocity, acceleration and jerk at one epoch."""

    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray


def two_body_accel_jerk(r: np.ndarray, v: np.ndarray, mu: float):
    """Acceleration and jerk of the two-body flow at (r, v)."""
    rn = np.linalg.norm(r)
    a = -mu * r / rn**3
    j = -mu * v / rn**3 + 3.0 * mu * np.dot(r, v) * r / rn**5
    return a, j


def _two_body_rhs(state: np.ndarray, mu: float) -> np.ndarray:
    r = state[:3]
    rn = np.linalg.norm(r)
    return np.concatenate((state[3:], -mu * r / rn**3))


def _rk4_step(state: np.ndarray, dt: float, mu: float) -> np.ndarray:
    k1 = _two_body_rhs(state, mu)
    k2 = _two_body_rhs(state + 0.5 * dt * k1, mu)
    k3 = _two_body_rhs(state + 0.5 * dt * k2, mu)
    k4 = _two_body_rhs(state + dt * k3, mu)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _validate_initial(r0: np.ndarray, v0: np.ndarray, earth: EarthModel) -> None:
    if not (np.all(np.isfinite(r0)) and np.all(np.isfinite(v0))):
        raise ValidationError("initial state contains non-finite components")
    rn = np.linalg.norm(r0)
    if rn <= earth.radius:
        raise ValidationError(f"initial radius {rn:.1f} m is at or below the surface")
    energy = 0.5 * np.dot(v0, v0) - earth.mu / rn
    if energy >= 0.0:
        raise ValidationError("orbit is not elliptic (non-negative specific energy)")


def propagate(
    r0: np.ndarray,
    v0: np.ndarray,
    t: float,
    earth: EarthModel = EarthModel(),
    step: float = PROPAGATION_STEP,
) -> SatelliteState:
    """Propagate a two-body orbit from t = 0 to epoch t.

    Fixed-step RK4 with a shorter final step when t is not a multiple of
    `step`.  Negative epochs propagate backwards.  Raises ImpactError if
    the radius reaches the surface along the way.
    """
    _validate_initial(r0, v0, earth)
    state = np.concatenate((np.asarray(r0, dtype=float), np.asarray(v0, dtype=float)))
    remaining = float(t)
    direction = 1.0 if remaining >= 0.0 else -1.0
    while abs(remaining) > 1e-12:
        h = direction * min(step, abs(remaining))
        state = _rk4_step(state, h, earth.mu)
        remaining -= h
        if np.linalg.norm(state[:3]) <= earth.radius:
            raise ImpactError("orbit reached the surface during propagation")
    r, v = state[:3], state[3:]
    a, j = two_body_accel_jerk(r, v, earth.mu)
    return SatelliteState(r=r, v=v, a=a, j=j)


def earth_rotation_dcm(t: float, earth: EarthModel = EarthModel()) -> np.ndarray:
    """Rotation matrix taking Earth-fixed coordinates to inertial ones."""
    theta = earth.rotation_rate * t + earth.theta0
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def fixed_frame_derivative(
    vec_inertial_deriv: np.ndarray, vec: np.ndarray, earth: EarthModel
) -> np.ndarray:
    """Earth-fixed-frame time derivative of a vector, inertial axes.

    Transport theorem with the constant Earth rate: F-derivative equals
    the inertial derivative minus omega x vec.
    """
    return vec_inertial_deriv - np.cross(earth.omega_vec(), vec)


def specific_energy(r: np.ndarray, v: np.ndarray, mu: float) -> float:
    return 0.5 * float(np.dot(v, v)) - mu / float(np.linalg.norm(r))


def circular_orbit_state(
    altitude: float,
    inclination: float,
    raan: float,
    arg_latitude: float,
    earth: EarthModel = EarthModel(),
):
    """Inertial (r, v) of a circular orbit at the given argument of latitude.

    Angles in radians. Useful for building scenario initial states.
    """
    radius = earth.radius + altitude
    speed = np.sqrt(earth.mu / radius)
    co, so = np.cos(raan), np.sin(raan)
    ci, si = np.cos(inclination), np.sin(inclination)
    cu, su = np.cos(arg_latitude), np.sin(arg_latitude)
    # orbit-plane basis: p toward ascending node, q 90 deg ahead in-plane
    p = np.array([co, so, 0.0])
    q = np.array([-so * ci, co * ci, si])
    r = radius * (cu * p + su * q)
    v = speed * (-su * p + cu * q)
    return r, v
