"""Boresight-locked desired frame, its angular rates, and camera scan metrics.

The desired frame D puts the boresight z-axis on the line of sight to
the target and picks the azimuth about it from a reference vector k so
the image motion on the detector runs along the scan column direction
(-y).  Choosing k as minus the Earth-fixed target velocity zeroes the
drift angle, which is what time-delay-integration imaging needs.

Component conventions used below (x, y, z subscripts are dot products
with the current frame axes):

* omega_perp is the line-of-sight slew rate, rho x rho_dot / |rho|^2;
  it has no z component by construction.
* The z ("yaw") rate follows from keeping x_hat orthogonal to k:
  d/dt (k . x_hat) = 0 gives w_z = (w_y k_z - kdot_x) / k_y.
* Differentiating that constraint once more gives the yaw acceleration;
  kdot/kddot components are full inertial derivatives of k resolved in
  the current frame axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .astro import EarthModel, SatelliteState
from .errors import DegenerateGeometryError, SingularConfigurationError
from .target import TargetState

LOS_DEGENERATE_TOL = 1e-6      # m
REFERENCE_DEGENERATE_TOL = 1e-9  # m/s
YAW_SINGULARITY_TOL = 1e-9     # on |k_y| / |k|


@dataclass(frozen=True)
class LosState:
    """Relative target-minus-satellite kinematics, inertial axes."""

    rho: np.ndarray
    rho_dot: np.ndarray
    rho_ddot: np.ndarray
    rho_mag: float
    rho_hat: np.ndarray

    @classmethod
    def from_vectors(
        cls, rho: np.ndarray, rho_dot: np.ndarray, rho_ddot: np.ndarray
    ) -> "LosState":
        rho = np.asarray(rho, dtype=float)
        mag = float(np.linalg.norm(rho))
        if mag < LOS_DEGENERATE_TOL:
            raise DegenerateGeometryError("line of sight vector is degenerate")
        return cls(
            rho=rho,
            rho_dot=np.asarray(rho_dot, dtype=float),
            rho_ddot=np.asarray(rho_ddot, dtype=float),
            rho_mag=mag,
            rho_hat=rho / mag,
        )


@dataclass(frozen=True)
class ReferenceVector:
    """Azimuth reference vector k and its inertial derivatives."""

    k: np.ndarray
    k_dot: np.ndarray
    k_ddot: np.ndarray


@dataclass(frozen=True)
class CameraParams:
    """Pushbroom TDI camera: focal length, detector pitch, line-rate bounds."""

    focal_length: float
    pixel_pitch: float
    f_lb: float = 0.0
    f_ub: float = float("inf")


@dataclass(frozen=True)
class AttitudeCommand:
    """Commanded frame, rates, and scan metrics at one instant."""

    dcm: np.ndarray        # inertial -> desired, rows are the frame axes
    quaternion: np.ndarray  # scalar-first, same rotation as dcm
    omega: np.ndarray      # frame angular velocity, inertial axes, rad/s
    alpha: np.ndarray      # frame angular acceleration, rad/s^2
    v_los: float           # ground speed component normal to the boresight, m/s
    v_ccd: float           # image motion speed in the focal plane, m/s
    f_ccd: float           # required TDI line rate, Hz
    psi: float             # angle between ground velocity and boresight, rad
    drift_angle: float     # angle between image motion and scan direction, rad


def los_state(sat: SatelliteState, tgt: TargetState) -> LosState:
    rho = tgt.r - sat.r
    mag = float(np.linalg.norm(rho))
    if mag < LOS_DEGENERATE_TOL:
        raise DegenerateGeometryError("satellite and target coincide; line of sight undefined")
    return LosState(
        rho=rho,
        rho_dot=tgt.vel - sat.v,
        rho_ddot=tgt.acc - sat.a,
        rho_mag=mag,
        rho_hat=rho / mag,
    )


def reference_vector(tgt: TargetState, earth: EarthModel) -> ReferenceVector:
    """Zero-drift reference: k = minus the Earth-fixed target velocity.

    Derivatives are inertial derivatives of that (frame-fixed-defined)
    vector via the transport theorem with the constant Earth rate.
    """
    w = earth.omega_vec()
    k = -tgt.fixed_vel
    if np.linalg.norm(k) < REFERENCE_DEGENERATE_TOL:
        raise DegenerateGeometryError(
            "target is fixed in the rotating frame; reference vector vanishes"
        )
    k_dot = -(tgt.fixed_acc + np.cross(w, tgt.fixed_vel))
    k_ddot = -(
        tgt.fixed_jerk
        + 2.0 * np.cross(w, tgt.fixed_acc)
        + np.cross(w, np.cross(w, tgt.fixed_vel))
    )
    return ReferenceVector(k=k, k_dot=k_dot, k_ddot=k_ddot)


def desired_frame(los: LosState, ref: ReferenceVector) -> np.ndarray:
    """DCM (inertial -> desired). Rows are x_hat, y_hat, z_hat.

    z_hat is the boresight (along the line of sight); x_hat = z x k
    normalized; y_hat completes the triad.  Scaling k by any positive
    factor leaves the frame unchanged.
    """
    z_hat = los.rho_hat
    cx = np.cross(z_hat, ref.k)
    n = np.linalg.norm(cx)
    if n < 1e-12 * np.linalg.norm(ref.k):
        raise SingularConfigurationError("reference vector is parallel to the boresight")
    x_hat = cx / n
    y_hat = np.cross(z_hat, x_hat)
    return np.vstack((x_hat, y_hat, z_hat))


def _frame_components(dcm: np.ndarray, ref: ReferenceVector):
    x_hat, y_hat, z_hat = dcm
    k_y = float(np.dot(ref.k, y_hat))
    k_z = float(np.dot(ref.k, z_hat))
    if abs(k_y) < YAW_SINGULARITY_TOL * np.linalg.norm(ref.k):
        raise SingularConfigurationError("reference vector has no component along y_hat")
    return x_hat, y_hat, z_hat, k_y, k_z


def angular_velocity(los: LosState, ref: ReferenceVector, dcm: np.ndarray) -> np.ndarray:
    x_hat, y_hat, z_hat, k_y, k_z = _frame_components(dcm, ref)
    omega_perp = np.cross(los.rho, los.rho_dot) / los.rho_mag**2
    w_y = float(np.dot(omega_perp, y_hat))
    kd_x = float(np.dot(ref.k_dot, x_hat))
    w_z = (w_y * k_z - kd_x) / k_y
    return omega_perp + w_z * z_hat


def angular_acceleration(
    los: LosState, ref: ReferenceVector, dcm: np.ndarray, omega: np.ndarray
) -> np.ndarray:
    x_hat, y_hat, z_hat, k_y, k_z = _frame_components(dcm, ref)
    w_x = float(np.dot(omega, x_hat))
    w_y = float(np.dot(omega, y_hat))
    w_z = float(np.dot(omega, z_hat))
    omega_z_vec = w_z * z_hat
    omega_perp = omega - omega_z_vec

    rho, rho_dot, rho_ddot = los.rho, los.rho_dot, los.rho_ddot
    mag2 = los.rho_mag**2
    alpha_perp = (
        np.cross(rho, rho_ddot) / mag2
        - 2.0 * (np.dot(rho, rho_dot) / mag2) * omega_perp
        + np.cross(omega_perp, omega_z_vec)
    )
    a_y = float(np.dot(alpha_perp, y_hat))
    kd_y = float(np.dot(ref.k_dot, y_hat))
    kd_z = float(np.dot(ref.k_dot, z_hat))
    kdd_x = float(np.dot(ref.k_ddot, x_hat))
    a_z = (
        a_y * k_z
        - w_x * w_z * k_z
        - w_x * w_y * k_y
        + 2.0 * w_y * kd_z
        - 2.0 * w_z * kd_y
        - kdd_x
    ) / k_y
    return alpha_perp + a_z * z_hat


def scan_metrics(
    los: LosState, tgt: TargetState, dcm: np.ndarray, camera: CameraParams
):
    """Ground-projected scan speed, focal-plane speed, line rate, and psi."""
    z_hat = dcm[2]
    ground_vel = tgt.fixed_vel
    gn = float(np.linalg.norm(ground_vel))
    along = float(np.dot(ground_vel, z_hat))
    psi = float(np.arctan2(np.linalg.norm(np.cross(ground_vel, z_hat)), along))
    v_los = gn * np.sin(psi)
    v_ccd = (camera.focal_length / los.rho_mag) * v_los
    f_ccd = v_ccd / camera.pixel_pitch
    return v_los, v_ccd, f_ccd, psi


def boresight_relative_velocity(
    los: LosState, tgt: TargetState, dcm: np.ndarray
) -> np.ndarray:
    """Apparent target velocity in the desired frame, D coordinates.

    Uses the identity that the frame-relative rate of the line of sight
    reduces to minus the Earth-fixed target velocity plus its component
    along the boresight.
    """
    v_inertial = -tgt.fixed_vel + np.dot(los.rho_dot, dcm[2]) * dcm[2]
    return dcm @ v_inertial


def drift_angle(rel_vel_d: np.ndarray) -> float:
    """Angle between the focal-plane image motion and the scan direction.

    Input is the frame-relative target velocity in D coordinates; its
    in-plane (x, y) part is compared against the -y scan direction.
    Returns a value in [0, pi].
    """
    px, py = float(rel_vel_d[0]), float(rel_vel_d[1])
    norm = np.hypot(px, py)
    if norm < 1e-12:
        raise DegenerateGeometryError("image motion vanishes; drift angle undefined")
    return float(np.arctan2(abs(px), -py))


def dcm_to_quaternion(dcm: np.ndarray) -> np.ndarray:
    """Scalar-first unit quaternion for a proper rotation matrix.

    Shepperd's method: pick the largest of the four squared components
    for numerical stability; sign fixed so the scalar part is >= 0.
    """
    m = dcm
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    q = np.empty(4)
    if tr >= max(m[0, 0], m[1, 1], m[2, 2]):
        q[0] = 0.5 * np.sqrt(max(1.0 + tr, 0.0))
        f = 0.25 / q[0]
        q[1] = f * (m[1, 2] - m[2, 1])
        q[2] = f * (m[2, 0] - m[0, 2])
        q[3] = f * (m[0, 1] - m[1, 0])
    else:
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        qi = 0.5 * np.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0))
        f = 0.25 / qi
        q[0] = f * (m[j, k] - m[k, j])
        q[1 + i] = qi
        q[1 + j] = f * (m[i, j] + m[j, i])
        q[1 + k] = f * (m[i, k] + m[k, i])
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quaternion_to_dcm(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)],
            [2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)],
            [2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def command_at(
    sat: SatelliteState, tgt: TargetState, earth: EarthModel, camera: CameraParams
) -> AttitudeCommand:
    """Full attitude command pipeline at one instant."""
    los = los_state(sat, tgt)
    ref = reference_vector(tgt, earth)
    dcm = desired_frame(los, ref)
    omega = angular_velocity(los, ref, dcm)
    alpha = angular_acceleration(los, ref, dcm, omega)
    v_los, v_ccd, f_ccd, psi = scan_metrics(los, tgt, dcm, camera)
    drift = drift_angle(boresight_relative_velocity(los, tgt, dcm))
    return AttitudeCommand(
        dcm=dcm,
        quaternion=dcm_to_quaternion(dcm),
        omega=omega,
        alpha=alpha,
        v_los=v_los,
        v_ccd=v_ccd,
        f_ccd=f_ccd,
        psi=psi,
        drift_angle=drift,
    )
