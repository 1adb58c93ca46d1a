"""Great-circle ground strips and target-point kinematics.

A strip is a great-circle arc on the spherical Earth, parameterized by
arc length angle s measured from the start point.  The target point is
the current scan position on that arc; its motion combines the scan
parameterization s(t) (Earth-fixed) and the Earth's rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .astro import WGS84_RADIUS, EarthModel, earth_rotation_dcm
from .errors import DegenerateGeometryError, ValidationError

ON_SPHERE_TOL = 1.0       # m
ANTIPODAL_TOL = 1e-8      # on |cross(r_hat_start, r_hat_end)|


@dataclass(frozen=True)
class TargetCurve:
    """Great-circle arc. Axes are Earth-fixed unit vectors: x_hat points
    at the start point, z_hat is the arc normal, y_hat completes the
    right-handed triad so the arc runs toward +y for s in (0, s_f)."""

    x_hat: np.ndarray
    y_hat: np.ndarray
    z_hat: np.ndarray
    s_f: float
    radius: float


@dataclass(frozen=True)
class ScanState:
    """Scan parameterization and its time derivatives at one instant."""

    s: float
    s_dot: float = 0.0
    s_ddot: float = 0.0
    s_dddot: float = 0.0


@dataclass(frozen=True)
class TargetState:
    """Target point kinematics at one epoch, all in inertial axes.

    fixed_* entries are Earth-fixed-frame derivatives of the position
    (the scan motion as seen from the ground), rotated to inertial axes;
    vel/acc/jerk are full inertial derivatives including Earth rotation.
    """

    r: np.ndarray
    fixed_vel: np.ndarray
    fixed_acc: np.ndarray
    fixed_jerk: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    jerk: np.ndarray


def latlon_to_ecef(lat_deg: float, lon_deg: float, radius: float = WGS84_RADIUS) -> np.ndarray:
    """Earth-fixed position of a (geocentric) latitude/longitude point."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    return radius * np.array(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)]
    )


def ecef_to_latlon(r: np.ndarray) -> tuple[float, float]:
    """Geocentric latitude/longitude (degrees) of an Earth-fixed point."""
    x, y, z = r
    lat = np.degrees(np.arctan2(z, np.hypot(x, y)))
    lon = np.degrees(np.arctan2(y, x))
    return float(lat), float(lon)


def build_curve(
    r_start: np.ndarray, r_end: np.ndarray, radius: float = WGS84_RADIUS
) -> TargetCurve:
    """Great-circle arc through two Earth-fixed points on the sphere.

    Raises on points off the sphere, coincident endpoints, or antipodal
    endpoints (where the arc plane is undefined).
    """
    r_start = np.asarray(r_start, dtype=float)
    r_end = np.asarray(r_end, dtype=float)
    if not (np.all(np.isfinite(r_start)) and np.all(np.isfinite(r_end))):
        raise ValidationError("strip endpoints contain non-finite components")
    for name, r in (("start", r_start), ("end", r_end)):
        if abs(np.linalg.norm(r) - radius) > ON_SPHERE_TOL:
            raise ValidationError(
                f"strip {name} point is {abs(np.linalg.norm(r) - radius):.3f} m off the sphere"
            )
    u0 = r_start / np.linalg.norm(r_start)
    u1 = r_end / np.linalg.norm(r_end)
    normal = np.cross(u0, u1)
    nn = np.linalg.norm(normal)
    if nn < ANTIPODAL_TOL:
        if np.dot(u0, u1) > 0.0:
            raise DegenerateGeometryError("strip endpoints coincide")
        raise DegenerateGeometryError("strip endpoints are antipodal; arc is ambiguous")
    z_hat = normal / nn
    x_hat = u0
    y_hat = np.cross(z_hat, x_hat)
    s_f = float(np.arccos(np.clip(np.dot(u0, u1), -1.0, 1.0)))
    return TargetCurve(x_hat=x_hat, y_hat=y_hat, z_hat=z_hat, s_f=s_f, radius=radius)


def point_at(curve: TargetCurve, s: float) -> np.ndarray:
    """Earth-fixed position of the arc point at parameter s."""
    return curve.radius * (np.cos(s) * curve.x_hat + np.sin(s) * curve.y_hat)


def evaluate(
    curve: TargetCurve, scan: ScanState, t: float, earth: EarthModel
) -> TargetState:
    """Target kinematics at epoch t for the given scan state.

    Earth-fixed derivatives follow from differentiating
    r = R(cos s x_hat + sin s y_hat); inertial ones add Earth-rotation
    transport terms (constant rotation rate, so the angular acceleration
    vanishes).
    """
    dcm = earth_rotation_dcm(t, earth)
    return _evaluate_with_dcm(curve, scan, dcm, earth)


def _evaluate_with_dcm(
    curve: TargetCurve, scan: ScanState, dcm_fixed_to_inertial: np.ndarray, earth: EarthModel
) -> TargetState:
    c, s = np.cos(scan.s), np.sin(scan.s)
    radial = c * curve.x_hat + s * curve.y_hat
    tangent = -s * curve.x_hat + c * curve.y_hat
    radius = curve.radius
    sd, sdd, sddd = scan.s_dot, scan.s_ddot, scan.s_dddot

    r_f = radius * radial
    v_f = radius * sd * tangent
    a_f = radius * sdd * tangent - radius * sd**2 * radial
    j_f = radius * (sddd - sd**3) * tangent - 3.0 * radius * sd * sdd * radial

    rot = dcm_fixed_to_inertial
    r = rot @ r_f
    fixed_vel = rot @ v_f
    fixed_acc = rot @ a_f
    fixed_jerk = rot @ j_f

    w = earth.omega_vec()
    vel = fixed_vel + np.cross(w, r)
    acc = fixed_acc + 2.0 * np.cross(w, fixed_vel) + np.cross(w, np.cross(w, r))
    jerk = (
        fixed_jerk
        + 3.0 * np.cross(w, fixed_acc)
        + 3.0 * np.cross(w, np.cross(w, fixed_vel))
        + np.cross(w, np.cross(w, np.cross(w, r)))
    )
    return TargetState(
        r=r,
        fixed_vel=fixed_vel,
        fixed_acc=fixed_acc,
        fixed_jerk=fixed_jerk,
        vel=vel,
        acc=acc,
        jerk=jerk,
    )
