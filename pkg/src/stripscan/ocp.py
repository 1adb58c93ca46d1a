"""Scan-rate profile optimization over a ground strip.

The optimization state is the arc position s along the strip; the
control is the scan rate.  Holding the rate constant within a grid
interval makes the in-interval scan acceleration zero, so the pointing
chain here evaluates the boresight frame and its angular velocity from
(t, s, rate) triples alone.  Everything the solver calls is vectorized
over stacked points: one solver iteration needs thousands of chain
evaluations and pointwise Python would dominate the runtime.

The chain math deliberately mirrors the scalar implementation in
attitude.py; the test suite holds the two routes against each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .astro import (
    EarthModel,
    SatelliteState,
    earth_rotation_dcm,
    propagate,
    two_body_accel_jerk,
)
from .attitude import CameraParams, command_at
from .ddp import DdpProblem, Trajectory
from .errors import (
    DegenerateGeometryError,
    SingularConfigurationError,
    ValidationError,
)
from .target import ScanState, TargetCurve, evaluate

FD_STEP_ARC = 1e-6    # rad, arc-position step for cost derivatives
FD_STEP_RATE = 1e-6   # rad/s, scan-rate step
SOFTMAX_SHARPNESS = 10.0
EXP_CLAMP = 500.0
TIME_SNAP_TOL = 1e-9  # s, when matching solver times to the half grid


@dataclass(frozen=True)
class ScanSetup:
    """Frozen inputs of one optimization: satellite state at t0, strip,
    camera, and the time grid."""

    earth: EarthModel
    curve: TargetCurve
    camera: CameraParams
    r0: np.ndarray
    v0: np.ndarray
    t0: float
    tf: float
    steps: int

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.steps


class KinematicsTable:
    """Satellite states and Earth rotations precomputed on the half grid
    (nodes and interval midpoints), which is every time the solver ever
    asks about."""

    def __init__(self, setup: ScanSetup):
        self.setup = setup
        half = 0.5 * setup.dt
        count = 2 * setup.steps + 1
        self.times = setup.t0 + half * np.arange(count)
        self.sat_r = np.zeros((count, 3))
        self.sat_v = np.zeros((count, 3))
        self.rot = np.zeros((count, 3, 3))
        r, v = np.asarray(setup.r0, dtype=float), np.asarray(setup.v0, dtype=float)
        state = propagate(r, v, 0.0, setup.earth)
        for j in range(count):
            if j > 0:
                state = propagate(state.r, state.v, half, setup.earth)
            self.sat_r[j] = state.r
            self.sat_v[j] = state.v
            self.rot[j] = earth_rotation_dcm(self.times[j], setup.earth)
        self._half = half

    def snap(self, ts: np.ndarray) -> np.ndarray:
        """Indices of the given times on the half grid; rejects times
        that are not grid points."""
        idx = np.rint((np.asarray(ts, dtype=float) - self.setup.t0) / self._half).astype(int)
        if np.any(idx < 0) or np.any(idx >= len(self.times)):
            raise ValidationError("time outside the optimization window")
        if np.any(np.abs(self.times[idx] - ts) > TIME_SNAP_TOL):
            raise ValidationError("time does not lie on the evaluation grid")
        return idx

    def sat_state(self, j: int) -> SatelliteState:
        a, jerk = two_body_accel_jerk(self.sat_r[j], self.sat_v[j], self.setup.earth.mu)
        return SatelliteState(r=self.sat_r[j], v=self.sat_v[j], a=a, j=jerk)


def _chain_rows(table: KinematicsTable, idx: np.ndarray, ss: np.ndarray, us: np.ndarray):
    """Vectorized pointing chain: (grid index, arc position, scan rate)
    rows to frame angular velocity and detector line rate."""
    setup = table.setup
    curve, cam = setup.curve, setup.camera
    radius = curve.radius
    cos_s, sin_s = np.cos(ss)[:, None], np.sin(ss)[:, None]
    x_h, y_h = curve.x_hat[None, :], curve.y_hat[None, :]
    p_hat = cos_s * x_h + sin_s * y_h
    tau = -sin_s * x_h + cos_s * y_h
    u_col = us[:, None]
    rot = table.rot[idx]
    r_t = np.einsum("bij,bj->bi", rot, radius * p_hat)
    fixed_vel = np.einsum("bij,bj->bi", rot, radius * u_col * tau)
    fixed_acc = np.einsum("bij,bj->bi", rot, -radius * u_col * u_col * p_hat)
    w = setup.earth.omega_vec()
    vel = fixed_vel + np.cross(w, r_t)

    rho = r_t - table.sat_r[idx]
    rho_dot = vel - table.sat_v[idx]
    rho_mag = np.linalg.norm(rho, axis=1)
    if np.any(rho_mag < 1e-6):
        raise DegenerateGeometryError("satellite and scan point coincide")
    z_hat = rho / rho_mag[:, None]

    k = -fixed_vel
    k_norm = np.linalg.norm(k, axis=1)
    if np.any(k_norm < 1e-9):
        raise DegenerateGeometryError("scan rate too close to zero; azimuth reference vanishes")
    k_dot = -(fixed_acc + np.cross(w, fixed_vel))

    cx = np.cross(z_hat, k)
    cx_norm = np.linalg.norm(cx, axis=1)
    if np.any(cx_norm < 1e-12 * k_norm):
        raise SingularConfigurationError("azimuth reference parallel to the boresight")
    x_hat = cx / cx_norm[:, None]
    y_hat = np.cross(z_hat, x_hat)

    omega_perp = np.cross(rho, rho_dot) / (rho_mag * rho_mag)[:, None]
    k_y = np.einsum("bi,bi->b", k, y_hat)
    k_z = np.einsum("bi,bi->b", k, z_hat)
    if np.any(np.abs(k_y) < 1e-9 * k_norm):
        raise SingularConfigurationError("azimuth reference has no component along the column axis")
    w_y = np.einsum("bi,bi->b", omega_perp, y_hat)
    kd_x = np.einsum("bi,bi->b", k_dot, x_hat)
    w_z = (w_y * k_z - kd_x) / k_y
    omega = omega_perp + w_z[:, None] * z_hat

    in_plane = fixed_vel - np.einsum("bi,bi->b", fixed_vel, z_hat)[:, None] * z_hat
    v_los = np.linalg.norm(in_plane, axis=1)
    f_ccd = cam.focal_length / rho_mag * v_los / cam.pixel_pitch
    return omega, f_ccd


class ChainEvaluator:
    """Batched chain evaluation with a per-iteration memo on the exact
    (grid index, s, rate) triples; repeated stencil centers and merit
    re-evaluations hit the memo."""

    def __init__(self, table: KinematicsTable):
        self.table = table
        self._memo: dict = {}

    def clear(self) -> None:
        self._memo.clear()

    def rows(self, ts, ss, us):
        ts = np.asarray(ts, dtype=float)
        ss = np.asarray(ss, dtype=float)
        us = np.asarray(us, dtype=float)
        idx = self.table.snap(ts)
        n = len(idx)
        omega = np.empty((n, 3))
        f_ccd = np.empty(n)
        missing = []
        keys = []
        for i in range(n):
            key = (int(idx[i]), float(ss[i]), float(us[i]))
            keys.append(key)
            hit = self._memo.get(key)
            if hit is None:
                missing.append(i)
            else:
                omega[i] = hit[0]
                f_ccd[i] = hit[1]
        if missing:
            mi = np.array(missing)
            om, fc = _chain_rows(self.table, idx[mi], ss[mi], us[mi])
            omega[mi] = om
            f_ccd[mi] = fc
            for pos, i in enumerate(missing):
                self._memo[keys[i]] = (om[pos], float(fc[pos]))
        return omega, f_ccd


class MinIntegralRate:
    """Running cost |omega|^2: minimizes the integral of the squared
    slew rate."""

    name = "min_integral"
    log_gauss_newton = False

    def prepare(self, omega_norms: np.ndarray) -> None:
        pass

    def values(self, omega: np.ndarray) -> np.ndarray:
        return np.einsum("bi,bi->b", omega, omega)


class MinMaxRate:
    """Doubly exponential smooth maximum of the slew rate,
    exp(exp(N |omega|)) / M.  The scale N and normalizer M = exp(S) are
    refreshed from the previous profile's peak each iteration so the
    normalized value sits at 1 on the peak with inner exponent S there.

    The surrogate's second derivative along the arc turns negative
    around the profile peak, and with exact Hessians the backward value
    recursion can escape in finite time over a 30 s horizon; the cost
    expansion therefore uses the Gauss-Newton Hessian of the exponent
    (log_gauss_newton), which is positive semidefinite."""

    name = "min_max"
    log_gauss_newton = True

    def __init__(self, sharpness: float = SOFTMAX_SHARPNESS):
        self.sharpness = sharpness
        self.omega_ref: Optional[float] = None

    def prepare(self, omega_norms: np.ndarray) -> None:
        # refresh with hysteresis: re-anchoring every iteration makes the
        # objective a moving target that the multiplier never catches, so
        # the scale only follows peak changes beyond 10 percent
        peak = float(np.max(omega_norms))
        if peak <= 0.0:
            return
        if self.omega_ref is None or abs(peak - self.omega_ref) > 0.1 * self.omega_ref:
            self.omega_ref = peak

    def values(self, omega: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(omega, axis=1)
        if self.omega_ref is None:
            self.omega_ref = float(np.max(norms)) if norms.size else 1.0
        s = self.sharpness
        scale = np.log(s) / self.omega_ref
        # both exponents are clamped only against line-search excursions
        # far outside the operating band; the outer one is bounded below
        # by exp(0) - s, so values never underflow and their log
        # recovers the exponent exactly
        inner = np.exp(np.minimum(scale * norms, np.log(EXP_CLAMP + s)))
        return np.exp(np.minimum(inner - s, EXP_CLAMP))


@dataclass
class LineRateBounds:
    """Detector line-rate band, constrained as dimensionless margins
    relative to the upper bound."""

    f_lb: float
    f_ub: float

    def margins(self, f_ccd: np.ndarray) -> np.ndarray:
        return np.stack(
            [(self.f_lb - f_ccd) / self.f_ub, (f_ccd - self.f_ub) / self.f_ub], axis=1
        )


def build_scan_problem(
    setup: ScanSetup,
    objective,
    bounds: Optional[LineRateBounds] = None,
) -> tuple[DdpProblem, ChainEvaluator]:
    """Wire the pointing chain into the trajectory optimizer."""
    table = KinematicsTable(setup)
    evaluator = ChainEvaluator(table)
    eye = np.eye(1)
    zero = np.zeros((1, 1))
    s_f = setup.curve.s_f

    def cost_batch(xs, us, ts):
        omega, _ = evaluator.rows(ts, xs[:, 0], us[:, 0])
        return objective.values(omega)

    def cost(x, u, t):
        return float(cost_batch(x[None, :], u[None, :], np.array([t]))[0])

    _OFFSETS = np.array(
        [
            (0.0, 0.0),
            (FD_STEP_ARC, 0.0),
            (-FD_STEP_ARC, 0.0),
            (0.0, FD_STEP_RATE),
            (0.0, -FD_STEP_RATE),
            (FD_STEP_ARC, FD_STEP_RATE),
            (FD_STEP_ARC, -FD_STEP_RATE),
            (-FD_STEP_ARC, FD_STEP_RATE),
            (-FD_STEP_ARC, -FD_STEP_RATE),
        ]
    )

    log_gn = bool(getattr(objective, "log_gauss_newton", False))

    def cost_expansion_batch(xs, us, ts):
        b = len(ts)
        ss = np.repeat(xs[:, 0], 9) + np.tile(_OFFSETS[:, 0], b)
        uu = np.repeat(us[:, 0], 9) + np.tile(_OFFSETS[:, 1], b)
        tt = np.repeat(np.asarray(ts, dtype=float), 9)
        omega, _ = evaluator.rows(tt, ss, uu)
        vals = objective.values(omega).reshape(b, 9)
        hs, hu = FD_STEP_ARC, FD_STEP_RATE
        if log_gn:
            # differentiate the exponent; curvature from the squared
            # gradient only, so the state block stays PSD
            w = np.log(vals)
            c = vals[:, 0]
            b_s = (w[:, 1] - w[:, 2]) / (2 * hs)
            b_u = (w[:, 3] - w[:, 4]) / (2 * hu)
            l_s = c * b_s
            l_u = c * b_u
            l_ss = c * b_s * b_s
            l_uu = c * b_u * b_u
            l_su = c * b_s * b_u
        else:
            c = vals[:, 0]
            l_s = (vals[:, 1] - vals[:, 2]) / (2 * hs)
            l_u = (vals[:, 3] - vals[:, 4]) / (2 * hu)
            l_ss = (vals[:, 1] - 2 * c + vals[:, 2]) / hs**2
            l_uu = (vals[:, 3] - 2 * c + vals[:, 4]) / hu**2
            l_su = (vals[:, 5] - vals[:, 6] - vals[:, 7] + vals[:, 8]) / (4 * hs * hu)
        return (
            l_s[:, None],
            l_u[:, None],
            l_ss[:, None, None],
            l_su[:, None, None],
            l_uu[:, None, None],
        )

    def cost_expansion(x, u, t):
        lx, lu, lxx, lxu, luu = cost_expansion_batch(x[None, :], u[None, :], np.array([t]))
        return lx[0], lu[0], lxx[0], lxu[0], luu[0]

    kwargs: dict = {}
    if bounds is not None:

        def ineq_batch(xs, us, ts):
            _, f_ccd = evaluator.rows(ts, xs[:, 0], us[:, 0])
            return bounds.margins(f_ccd)

        def ineq(x, u, t):
            return ineq_batch(x[None, :], u[None, :], np.array([t]))[0]

        def ineq_jac_batch(xs, us, ts):
            b = len(ts)
            offs = _OFFSETS[1:5]  # the four cardinal points
            ss = np.repeat(xs[:, 0], 4) + np.tile(offs[:, 0], b)
            uu = np.repeat(us[:, 0], 4) + np.tile(offs[:, 1], b)
            tt = np.repeat(np.asarray(ts, dtype=float), 4)
            _, f = evaluator.rows(tt, ss, uu)
            f = f.reshape(b, 4)
            f_s = (f[:, 0] - f[:, 1]) / (2 * FD_STEP_ARC)
            f_u = (f[:, 2] - f[:, 3]) / (2 * FD_STEP_RATE)
            g_x = np.stack([-f_s, f_s], axis=1)[:, :, None] / bounds.f_ub
            g_u = np.stack([-f_u, f_u], axis=1)[:, :, None] / bounds.f_ub
            return g_x, g_u

        def ineq_jac(x, u, t):
            g_x, g_u = ineq_jac_batch(x[None, :], u[None, :], np.array([t]))
            return g_x[0], g_u[0]

        kwargs.update(
            n_ineq=2,
            ineq=ineq,
            ineq_batch=ineq_batch,
            ineq_jac=ineq_jac,
            ineq_jac_batch=ineq_jac_batch,
        )

    def prepare_iteration(traj: Trajectory) -> None:
        evaluator.clear()
        omega, _ = evaluator.rows(traj.ts, traj.xs[:, 0], traj.us[:, 0])
        objective.prepare(np.linalg.norm(omega, axis=1))

    problem = DdpProblem(
        n=1,
        m=1,
        x0=np.zeros(1),
        t0=setup.t0,
        tf=setup.tf,
        steps=setup.steps,
        dynamics=lambda x, u, t: u.copy(),
        f_x=lambda x, u, t: zero,
        f_u=lambda x, u, t: eye,
        cost=cost,
        cost_expansion=cost_expansion,
        cost_batch=cost_batch,
        cost_expansion_batch=cost_expansion_batch,
        n_psi=1,
        psi=lambda x: np.array([x[0] - s_f]),
        psi_jac=lambda x: eye.copy(),
        prepare_iteration=prepare_iteration,
        **kwargs,
    )
    return problem, evaluator


def linear_guess(setup: ScanSetup) -> np.ndarray:
    """Constant-rate profile covering the strip exactly in the window."""
    rate = setup.curve.s_f / (setup.tf - setup.t0)
    return np.full((setup.steps + 1, 1), rate)


@dataclass
class ScanProfile:
    """Per-node commanded pointing along a scan-rate profile, plus the
    scalar metrics the comparisons use.  Angular velocity is evaluated
    with the held-rate chain (zero in-interval scan acceleration, the
    quantity the objectives integrate); angular acceleration additionally
    uses scan accelerations differenced from the rate profile."""

    ts: np.ndarray
    arc: np.ndarray          # s at nodes
    rate: np.ndarray         # scan rate at nodes
    omega: np.ndarray        # (N+1, 3)
    omega_norm: np.ndarray
    alpha: np.ndarray        # (N+1, 3)
    alpha_norm: np.ndarray
    f_ccd: np.ndarray
    v_los: np.ndarray
    v_ccd: np.ndarray
    psi_angle: np.ndarray
    drift: np.ndarray
    quaternion: np.ndarray   # (N+1, 4)
    dcm: np.ndarray          # (N+1, 3, 3)
    metrics: dict


def _rate_derivatives(us: np.ndarray, dt: float):
    """Scan acceleration and jerk by differencing the rate profile."""
    sdd = np.gradient(us, dt)
    sddd = np.zeros_like(us)
    if len(us) >= 3:
        sddd[1:-1] = (us[2:] - 2 * us[1:-1] + us[:-2]) / dt**2
        sddd[0] = sddd[1]
        sddd[-1] = sddd[-2]
    return sdd, sddd


def _held_rate_integral(table: KinematicsTable, ts, arc, rate) -> float:
    """Interval-Simpson integral of |omega|^2 with the rate held across
    each interval, matching the optimizer's quadrature so profile
    comparisons agree with what was minimized."""
    setup = table.setup
    dt = setup.dt
    n = len(ts) - 1
    s0, u0 = np.asarray(arc[:-1]), np.asarray(rate[:-1])
    t0 = np.asarray(ts[:-1])
    stacks = []
    for frac in (0.0, 0.5, 1.0):
        stacks.append((t0 + frac * dt, s0 + frac * dt * u0, u0))
    tt = np.concatenate([s[0] for s in stacks])
    ss = np.concatenate([s[1] for s in stacks])
    uu = np.concatenate([s[2] for s in stacks])
    idx = table.snap(tt)
    omega, _ = _chain_rows(table, idx, ss, uu)
    w2 = np.einsum("bi,bi->b", omega, omega).reshape(3, n)
    return float(np.sum(dt / 6.0 * (w2[0] + 4.0 * w2[1] + w2[2])))


def evaluate_profile(setup: ScanSetup, ts: np.ndarray, arc: np.ndarray, rate: np.ndarray) -> ScanProfile:
    """Full pointing commands and summary metrics along a profile."""
    table = KinematicsTable(setup)
    n = len(ts)
    dt = setup.dt
    sdd, sddd = _rate_derivatives(np.asarray(rate, dtype=float), dt)
    omega = np.zeros((n, 3))
    alpha = np.zeros((n, 3))
    f_ccd = np.zeros(n)
    v_los = np.zeros(n)
    v_ccd = np.zeros(n)
    psi_angle = np.zeros(n)
    drift = np.zeros(n)
    quat = np.zeros((n, 4))
    dcm = np.zeros((n, 3, 3))
    idx = table.snap(ts)
    for i in range(n):
        sat = table.sat_state(int(idx[i]))
        tgt_full = evaluate(
            setup.curve,
            ScanState(s=float(arc[i]), s_dot=float(rate[i]), s_ddot=float(sdd[i]), s_dddot=float(sddd[i])),
            float(ts[i]),
            setup.earth,
        )
        cmd = command_at(sat, tgt_full, setup.earth, setup.camera)
        alpha[i] = cmd.alpha
        f_ccd[i] = cmd.f_ccd
        v_los[i] = cmd.v_los
        v_ccd[i] = cmd.v_ccd
        psi_angle[i] = cmd.psi
        drift[i] = cmd.drift_angle
        quat[i] = cmd.quaternion
        dcm[i] = cmd.dcm
        tgt_held = evaluate(
            setup.curve,
            ScanState(s=float(arc[i]), s_dot=float(rate[i])),
            float(ts[i]),
            setup.earth,
        )
        held = command_at(sat, tgt_held, setup.earth, setup.camera)
        omega[i] = held.omega
    omega_norm = np.linalg.norm(omega, axis=1)
    alpha_norm = np.linalg.norm(alpha, axis=1)
    metrics = {
        "integral_omega_sq": _held_rate_integral(table, ts, arc, rate),
        "max_omega": float(np.max(omega_norm)),
        "mean_omega": float(np.mean(omega_norm)),
        "max_alpha": float(np.max(alpha_norm)),
        "f_ccd_min": float(np.min(f_ccd)),
        "f_ccd_max": float(np.max(f_ccd)),
        "f_ccd_mean": float(np.mean(f_ccd)),
        "max_drift": float(np.max(drift)),
        "terminal_arc_error": float(abs(arc[-1] - setup.curve.s_f)),
        "flatness": float((np.max(omega_norm) - np.min(omega_norm)) / np.mean(omega_norm)),
    }
    return ScanProfile(
        ts=np.asarray(ts, dtype=float),
        arc=np.asarray(arc, dtype=float),
        rate=np.asarray(rate, dtype=float),
        omega=omega,
        omega_norm=omega_norm,
        alpha=alpha,
        alpha_norm=alpha_norm,
        f_ccd=f_ccd,
        v_los=v_los,
        v_ccd=v_ccd,
        psi_angle=psi_angle,
        drift=drift,
        quaternion=quat,
        dcm=dcm,
        metrics=metrics,
    )
