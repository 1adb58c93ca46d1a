"""Continuous-time differential dynamic programming with terminal
equality constraints and augmented-Lagrangian path constraints.

The value function is expanded to second order in the state deviation
and the terminal-constraint multiplier nu; the expansion coefficients
(V, V_x, V_nu, V_xx, V_xnu, V_nunu) satisfy backward ODEs driven by the
Hamiltonian-style Q terms and the minimizing control correction

    beta_u = -Q_uu^-1 Q_u,  beta_x = -Q_uu^-1 Q_ux,  beta_nu = -Q_uu^-1 Q_unu.

Controls live on all N+1 grid nodes and are held zero-order within each
interval.  The backward sweep integrates the value ODEs with RK4 over
each interval (reference states between nodes come from cubic Hermite
interpolation of the rollout), and per-node gains are read off at the
grid times.

Quadrature conventions, chosen so the reported objective converges to
the continuous one at the grid spacings used here:

* The smooth running cost is integrated per interval by Simpson's rule
  with the held control (left node, Hermite midpoint, right node).
  Node-sampled trapezoid would be inconsistent at O(dt) because the
  control jumps at nodes.
* Augmented-Lagrangian penalty terms stay on the nodes with trapezoid
  weights, because feasibility is defined and enforced per node.  The
  final node keeps its own multiplier row so terminal-time path
  constraints are enforced too.

Inequality path constraints g <= 0 and equality path constraints h = 0
enter the augmented running cost as

    L_A = L + sum_i (lam_i g_i + 1_i mu_i g_i^2) + sum_j (eta_j h_j + kappa_j h_j^2)

with the active-set indicator 1_i = 1 iff g_i >= 0 or lam_i > 0, and
Gauss-Newton penalty Hessians.  Penalties grow geometrically every
iteration.

Problems may optionally supply vectorized evaluators (cost_batch and
friends); anything missing falls back to a loop over the pointwise
callables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, SweepFailureError

Array = np.ndarray


@dataclass
class DdpProblem:
    """Fixed-grid optimal control problem definition.

    cost_expansion returns (L_x, L_u, L_xx, L_xu, L_uu) at a point.
    ineq/ineq_jac define g(x, u, t) <= 0 with first derivatives
    (g_x, g_u); eq/eq_jac define h(x, u, t) = 0 likewise.  Terminal
    constraint psi(x(tf)) = 0 has Jacobian psi_x (d, n) and optional
    second derivative psi_xx (d, n, n).  The *_batch callables take
    stacked points (xs (B, n), us (B, m), ts (B,)) and are optional.
    """

    n: int
    m: int
    x0: Array
    t0: float
    tf: float
    steps: int
    dynamics: Callable[[Array, Array, float], Array]
    f_x: Callable[[Array, Array, float], Array]
    f_u: Callable[[Array, Array, float], Array]
    cost: Callable[[Array, Array, float], float]
    cost_expansion: Callable[[Array, Array, float], tuple]
    terminal_cost: Optional[Callable[[Array], float]] = None
    terminal_cost_expansion: Optional[Callable[[Array], tuple]] = None
    n_psi: int = 0
    psi: Optional[Callable[[Array], Array]] = None
    psi_jac: Optional[Callable[[Array], Array]] = None
    psi_hess: Optional[Callable[[Array], Array]] = None
    n_ineq: int = 0
    ineq: Optional[Callable[[Array, Array, float], Array]] = None
    ineq_jac: Optional[Callable[[Array, Array, float], tuple]] = None
    n_eq: int = 0
    eq: Optional[Callable[[Array, Array, float], Array]] = None
    eq_jac: Optional[Callable[[Array, Array, float], tuple]] = None
    prepare_iteration: Optional[Callable[["Trajectory"], None]] = None
    cost_batch: Optional[Callable[[Array, Array, Array], Array]] = None
    cost_expansion_batch: Optional[Callable[[Array, Array, Array], tuple]] = None
    ineq_batch: Optional[Callable[[Array, Array, Array], Array]] = None
    ineq_jac_batch: Optional[Callable[[Array, Array, Array], tuple]] = None
    eq_batch: Optional[Callable[[Array, Array, Array], Array]] = None
    eq_jac_batch: Optional[Callable[[Array, Array, Array], tuple]] = None

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.steps

    def times(self) -> Array:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class DdpParams:
    """Solver knobs. Step scales k_u / k_nu damp the control and
    multiplier updates; gamma grows the constraint penalties."""

    k_u: float = 0.5
    k_nu: float = 0.5
    gamma: float = 1.1
    eps_v: float = 1e-6
    eps_g: float = 1e-6
    eps_h: float = 1e-6
    max_iters: int = 200
    mu0: float = 1.0
    kappa0: float = 1.0
    reg_init: float = 1e-8
    reg_growth: float = 10.0
    reg_max: float = 1e2
    min_step: float = 1e-4


@dataclass(frozen=True)
class AlState:
    """Augmented-Lagrangian multipliers (per node) and penalties."""

    lam: Array        # (N+1, n_ineq), >= 0
    mu: Array         # (n_ineq,)
    eta: Array        # (N+1, n_eq)
    kappa: Array      # (n_eq,)
    kappa_psi: Array  # (n_psi,) terminal-constraint penalty weights
    gamma: float


@dataclass
class Trajectory:
    """Rollout on the fixed grid with interval-end slopes for Hermite
    interpolation (both slopes use the interval's zero-order-hold
    control)."""

    ts: Array
    xs: Array   # (N+1, n)
    us: Array   # (N+1, m)
    f0: Array   # (N, n) slope at interval start
    f1: Array   # (N, n) slope at interval end


@dataclass
class ValueExpansion:
    """Value-function expansion coefficients at every grid node."""

    v: Array       # (N+1,)
    v_x: Array     # (N+1, n)
    v_nu: Array    # (N+1, d)
    v_xx: Array    # (N+1, n, n)
    v_xnu: Array   # (N+1, n, d)
    v_nunu: Array  # (N+1, d, d)
    max_asymmetry: float


@dataclass
class Gains:
    beta_u: Array   # (N+1, m)
    beta_x: Array   # (N+1, m, n)
    beta_nu: Array  # (N+1, m, d)


@dataclass
class DdpSolution:
    ts: Array
    xs: Array
    us: Array
    nu: Array
    converged: bool
    iterations: int
    cost: float
    aug_cost: float
    psi_norm: float
    max_ineq: float
    max_eq: float
    history: list
    max_asymmetry: float
    min_multiplier: float
    al: AlState


class _NotPositiveDefinite(Exception):
    pass


# --- rollout -----------------------------------------------------------------


def _rk4(f, x, u, t, dt):
    k1 = f(x, u, t)
    k2 = f(x + 0.5 * dt * k1, u, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, u, t + 0.5 * dt)
    k4 = f(x + dt * k3, u, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


def forward_rollout(problem: DdpProblem, us: Array, x0: Optional[Array] = None) -> Trajectory:
    """Integrate the dynamics with zero-order-hold controls.

    The trailing row of us is not a decision variable: the last interval's
    held control is also reported at the final node, so nodal constraint
    terms there bind the control that is actually flown."""
    n, nsteps = problem.n, problem.steps
    dt = problem.dt
    ts = problem.times()
    xs = np.zeros((nsteps + 1, n))
    f0 = np.zeros((nsteps, n))
    f1 = np.zeros((nsteps, n))
    xs[0] = problem.x0 if x0 is None else x0
    us = np.array(us, dtype=float)
    if nsteps:
        us[-1] = us[-2]
    for k in range(nsteps):
        xs[k + 1], f0[k] = _rk4(problem.dynamics, xs[k], us[k], ts[k], dt)
        if not np.all(np.isfinite(xs[k + 1])):
            raise DivergenceError(f"rollout produced non-finite state at step {k + 1}")
        f1[k] = problem.dynamics(xs[k + 1], us[k], ts[k + 1])
    return Trajectory(ts=ts, xs=xs, us=us, f0=f0, f1=f1)


def _hermite(traj: Trajectory, k: int, dt: float, t: float) -> Array:
    """Reference state inside interval k by cubic Hermite interpolation."""
    theta = (t - traj.ts[k]) / dt
    if theta <= 0.0:
        return traj.xs[k]
    if theta >= 1.0:
        return traj.xs[k + 1]
    t2, t3 = theta * theta, theta * theta * theta
    return (
        (2 * t3 - 3 * t2 + 1) * traj.xs[k]
        + (t3 - 2 * t2 + theta) * dt * traj.f0[k]
        + (-2 * t3 + 3 * t2) * traj.xs[k + 1]
        + (t3 - t2) * dt * traj.f1[k]
    )


def _stage_points(problem: DdpProblem, traj: Trajectory):
    """Evaluation layout shared by the sweep and the quadrature.

    Rows 0..N are the nodes (x_k, u_k, t_k); rows N+1..2N the interval
    midpoints (Hermite state, held control); rows 2N+1..3N the interval
    right endpoints (x_{k+1} with the held control u_k).  node_idx maps
    each row to the multiplier row that applies to it.
    """
    nsteps, dt = problem.steps, problem.dt
    mid_x = 0.5 * (traj.xs[:-1] + traj.xs[1:]) + (dt / 8.0) * (traj.f0 - traj.f1)
    mid_t = traj.ts[:-1] + 0.5 * dt
    xs = np.concatenate([traj.xs, mid_x, traj.xs[1:]], axis=0)
    us = np.concatenate([traj.us, traj.us[:-1], traj.us[:-1]], axis=0)
    ts = np.concatenate([traj.ts, mid_t, traj.ts[1:]])
    node_idx = np.concatenate(
        [np.arange(nsteps + 1), np.arange(nsteps), np.arange(nsteps)]
    )
    return xs, us, ts, node_idx


# --- batched evaluation with pointwise fallbacks ------------------------------


def _eval_cost(problem, xs, us, ts) -> Array:
    if problem.cost_batch is not None:
        return np.asarray(problem.cost_batch(xs, us, ts), dtype=float)
    return np.array([problem.cost(x, u, t) for x, u, t in zip(xs, us, ts)])


def _eval_cost_expansion(problem, xs, us, ts):
    if problem.cost_expansion_batch is not None:
        lx, lu, lxx, lxu, luu = problem.cost_expansion_batch(xs, us, ts)
        return (
            np.asarray(lx, dtype=float),
            np.asarray(lu, dtype=float),
            np.asarray(lxx, dtype=float),
            np.asarray(lxu, dtype=float),
            np.asarray(luu, dtype=float),
        )
    rows = [problem.cost_expansion(x, u, t) for x, u, t in zip(xs, us, ts)]
    return tuple(np.array([np.asarray(r[i], dtype=float) for r in rows]) for i in range(5))


def _eval_ineq(problem, xs, us, ts) -> Array:
    if problem.ineq_batch is not None:
        return np.asarray(problem.ineq_batch(xs, us, ts), dtype=float)
    return np.array([problem.ineq(x, u, t) for x, u, t in zip(xs, us, ts)])


def _eval_ineq_jac(problem, xs, us, ts):
    if problem.ineq_jac_batch is not None:
        gx, gu = problem.ineq_jac_batch(xs, us, ts)
        return np.asarray(gx, dtype=float), np.asarray(gu, dtype=float)
    rows = [problem.ineq_jac(x, u, t) for x, u, t in zip(xs, us, ts)]
    return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])


def _eval_eq(problem, xs, us, ts) -> Array:
    if problem.eq_batch is not None:
        return np.asarray(problem.eq_batch(xs, us, ts), dtype=float)
    return np.array([problem.eq(x, u, t) for x, u, t in zip(xs, us, ts)])


def _eval_eq_jac(problem, xs, us, ts):
    if problem.eq_jac_batch is not None:
        hx, hu = problem.eq_jac_batch(xs, us, ts)
        return np.asarray(hx, dtype=float), np.asarray(hu, dtype=float)
    rows = [problem.eq_jac(x, u, t) for x, u, t in zip(xs, us, ts)]
    return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])


# --- augmented-Lagrangian bookkeeping -----------------------------------------


def init_al_state(problem: DdpProblem, params: DdpParams) -> AlState:
    nodes = problem.steps + 1
    return AlState(
        lam=np.zeros((nodes, problem.n_ineq)),
        mu=np.full(problem.n_ineq, params.mu0),
        eta=np.zeros((nodes, problem.n_eq)),
        kappa=np.full(problem.n_eq, params.kappa0),
        kappa_psi=np.full(problem.n_psi, params.kappa0),
        gamma=params.gamma,
    )


def update_al(al: AlState, g_values: Array, h_values: Array) -> AlState:
    """First-order multiplier updates and geometric penalty growth."""
    lam = al.lam
    if al.lam.shape[1]:
        lam = np.maximum(0.0, al.lam + al.mu[None, :] * g_values)
    eta = al.eta
    if al.eta.shape[1]:
        eta = al.eta + al.kappa[None, :] * h_values
    return AlState(
        lam=lam,
        mu=al.gamma * al.mu,
        eta=eta,
        kappa=al.gamma * al.kappa,
        kappa_psi=al.gamma * al.kappa_psi,
        gamma=al.gamma,
    )


def _nodal_penalty(problem: DdpProblem, al: AlState, traj: Trajectory) -> float:
    """Trapezoid-weighted multiplier and penalty terms over the nodes."""
    if not (problem.n_ineq or problem.n_eq):
        return 0.0
    weights = np.full(problem.steps + 1, problem.dt)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    total = 0.0
    if problem.n_ineq:
        g = _eval_ineq(problem, traj.xs, traj.us, traj.ts)
        active = (g >= 0.0) | (al.lam > 0.0)
        per_node = (al.lam * g).sum(axis=1) + (active * al.mu[None, :] * g * g).sum(axis=1)
        total += float(weights @ per_node)
    if problem.n_eq:
        h = _eval_eq(problem, traj.xs, traj.us, traj.ts)
        per_node = (al.eta * h).sum(axis=1) + (al.kappa[None, :] * h * h).sum(axis=1)
        total += float(weights @ per_node)
    return total


# --- objective quadrature ------------------------------------------------------


def _simpson_running_cost(problem: DdpProblem, traj: Trajectory) -> float:
    xs, us, ts, _ = _stage_points(problem, traj)
    vals = _eval_cost(problem, xs, us, ts)
    nsteps = problem.steps
    lefts = vals[:nsteps]
    mids = vals[nsteps + 1 : 2 * nsteps + 1]
    rights = vals[2 * nsteps + 1 :]
    return float(problem.dt / 6.0 * np.sum(lefts + 4.0 * mids + rights))


def trajectory_cost(problem: DdpProblem, traj: Trajectory) -> float:
    """Running cost (Simpson per interval) plus terminal cost."""
    total = _simpson_running_cost(problem, traj)
    if problem.terminal_cost is not None:
        total += problem.terminal_cost(traj.xs[-1])
    return float(total)


def augmented_cost(problem: DdpProblem, traj: Trajectory, nu: Array, al: AlState) -> float:
    """Line-search merit: running and terminal cost plus the nodal
    penalty terms and the multiplier-weighted terminal constraint."""
    total = trajectory_cost(problem, traj) + _nodal_penalty(problem, al, traj)
    if problem.n_psi:
        psi = problem.psi(traj.xs[-1])
        total += float(nu @ psi) + 0.5 * float(al.kappa_psi @ (psi * psi))
    return float(total)


# --- backward sweep -------------------------------------------------------------


@dataclass
class SweepData:
    """Per-iteration expansion data reused across regularization retries.

    a_k and b_k are the Jacobians of the rollout's interval map
    (dx_{k+1}/dx_k and dx_{k+1}/du_k), differentiated through the same
    RK4 stages the rollout executes.  c_* hold the interval running-cost
    expansion in (dx_k, du_k): the chain rule of the Simpson/Hermite
    quadrature through those maps, so the quadratic model and the merit
    agree about what a held-control change does.  p_* hold the
    multiplier and penalty expansions at the nodes, already
    trapezoid-weighted to match the merit's nodal quadrature."""

    a_k: Array    # (N, n, n)
    b_k: Array    # (N, n, m)
    c_val: Array  # (N,) interval quadrature cost at the reference
    c_x: Array    # (N, n)
    c_u: Array    # (N, m)
    c_xx: Array   # (N, n, n)
    c_xu: Array   # (N, n, m)
    c_uu: Array   # (N, m, m)
    p_val: Array  # (N+1,) weighted nodal penalty
    p_x: Array    # (N+1, n)
    p_u: Array    # (N+1, m)
    p_xx: Array   # (N+1, n, n)
    p_xu: Array   # (N+1, n, m)
    p_uu: Array   # (N+1, m, m)


def prepare_sweep(problem: DdpProblem, traj: Trajectory, al: AlState) -> SweepData:
    """Expand the running-cost quadrature and the interval maps around
    the reference trajectory, plus the trapezoid-weighted nodal
    constraint terms.

    Dropping the second derivatives of the interval maps against the
    cost gradient is the usual Gauss-Newton simplification; for linear
    dynamics the expansion is exact."""
    xs, us, ts, _ = _stage_points(problem, traj)
    val = _eval_cost(problem, xs, us, ts)
    l_x, l_u, l_xx, l_xu, l_uu = _eval_cost_expansion(problem, xs, us, ts)

    nsteps, dt = problem.steps, problem.dt
    n, m = problem.n, problem.m
    eye = np.eye(n)
    a_k = np.zeros((nsteps, n, n))
    b_k = np.zeros((nsteps, n, m))
    c_val = np.zeros(nsteps)
    c_x = np.zeros((nsteps, n))
    c_u = np.zeros((nsteps, m))
    c_xx = np.zeros((nsteps, n, n))
    c_xu = np.zeros((nsteps, n, m))
    c_uu = np.zeros((nsteps, m, m))
    w = dt / 6.0
    for k in range(nsteps):
        left, mid, right = k, nsteps + 1 + k, 2 * nsteps + 1 + k
        x0, u0, t0 = traj.xs[k], traj.us[k], traj.ts[k]
        tm, t1 = t0 + 0.5 * dt, t0 + dt
        fx0 = problem.f_x(x0, u0, t0)
        fu0 = problem.f_u(x0, u0, t0)
        fx1 = problem.f_x(traj.xs[k + 1], u0, t1)
        fu1 = problem.f_u(traj.xs[k + 1], u0, t1)
        # RK4 stage states of the rollout's own step
        x2 = x0 + 0.5 * dt * traj.f0[k]
        x3 = x0 + 0.5 * dt * problem.dynamics(x2, u0, tm)
        x4 = x0 + dt * problem.dynamics(x3, u0, tm)
        k1x, k1u = fx0, fu0
        k2x = problem.f_x(x2, u0, tm) @ (eye + 0.5 * dt * k1x)
        k2u = 0.5 * dt * (problem.f_x(x2, u0, tm) @ k1u) + problem.f_u(x2, u0, tm)
        k3x = problem.f_x(x3, u0, tm) @ (eye + 0.5 * dt * k2x)
        k3u = 0.5 * dt * (problem.f_x(x3, u0, tm) @ k2u) + problem.f_u(x3, u0, tm)
        k4x = problem.f_x(x4, u0, t1) @ (eye + dt * k3x)
        k4u = dt * (problem.f_x(x4, u0, t1) @ k3u) + problem.f_u(x4, u0, t1)
        a = eye + w * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        b = w * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        # Hermite midpoint sensitivities (the quadrature's state sample)
        mx = 0.5 * (eye + a) + (dt / 8.0) * (fx0 - fx1 @ a)
        mu = 0.5 * b + (dt / 8.0) * (fu0 - fx1 @ b - fu1)
        a_k[k] = a
        b_k[k] = b
        c_val[k] = w * (val[left] + 4.0 * val[mid] + val[right])
        c_x[k] = w * (l_x[left] + 4.0 * (mx.T @ l_x[mid]) + a.T @ l_x[right])
        c_u[k] = w * (
            l_u[left]
            + 4.0 * (l_u[mid] + mu.T @ l_x[mid])
            + l_u[right]
            + b.T @ l_x[right]
        )
        c_xx[k] = w * (
            l_xx[left] + 4.0 * (mx.T @ l_xx[mid] @ mx) + a.T @ l_xx[right] @ a
        )
        c_xu[k] = w * (
            l_xu[left]
            + 4.0 * (mx.T @ l_xx[mid] @ mu + mx.T @ l_xu[mid])
            + a.T @ l_xx[right] @ b
            + a.T @ l_xu[right]
        )
        cuu = w * (
            l_uu[left]
            + 4.0 * (l_uu[mid] + mu.T @ l_xx[mid] @ mu + mu.T @ l_xu[mid] + l_xu[mid].T @ mu)
            + l_uu[right]
            + b.T @ l_xx[right] @ b
            + b.T @ l_xu[right]
            + l_xu[right].T @ b
        )
        c_uu[k] = 0.5 * (cuu + cuu.T)

    nodes = problem.steps + 1
    n, m = problem.n, problem.m
    p_val = np.zeros(nodes)
    p_x = np.zeros((nodes, n))
    p_u = np.zeros((nodes, m))
    p_xx = np.zeros((nodes, n, n))
    p_xu = np.zeros((nodes, n, m))
    p_uu = np.zeros((nodes, m, m))
    if problem.n_ineq or problem.n_eq:
        wq = np.full(nodes, problem.dt)
        wq[0] *= 0.5
        wq[-1] *= 0.5
    if problem.n_ineq:
        g = _eval_ineq(problem, traj.xs, traj.us, traj.ts)
        g_x, g_u = _eval_ineq_jac(problem, traj.xs, traj.us, traj.ts)
        active = ((g >= 0.0) | (al.lam > 0.0)).astype(float)
        w = al.lam + 2.0 * active * al.mu[None, :] * g
        pen = 2.0 * active * al.mu[None, :]
        p_val += wq * ((al.lam * g).sum(axis=1) + (active * al.mu[None, :] * g * g).sum(axis=1))
        p_x += wq[:, None] * np.einsum("bgn,bg->bn", g_x, w)
        p_u += wq[:, None] * np.einsum("bgm,bg->bm", g_u, w)
        p_xx += wq[:, None, None] * np.einsum("bgn,bg,bgl->bnl", g_x, pen, g_x)
        p_xu += wq[:, None, None] * np.einsum("bgn,bg,bgm->bnm", g_x, pen, g_u)
        p_uu += wq[:, None, None] * np.einsum("bgm,bg,bgl->bml", g_u, pen, g_u)
    if problem.n_eq:
        h = _eval_eq(problem, traj.xs, traj.us, traj.ts)
        h_x, h_u = _eval_eq_jac(problem, traj.xs, traj.us, traj.ts)
        w = al.eta + 2.0 * al.kappa[None, :] * h
        pen = np.broadcast_to(2.0 * al.kappa[None, :], h.shape)
        p_val += wq * ((al.eta * h).sum(axis=1) + (al.kappa[None, :] * h * h).sum(axis=1))
        p_x += wq[:, None] * np.einsum("bgn,bg->bn", h_x, w)
        p_u += wq[:, None] * np.einsum("bgm,bg->bm", h_u, w)
        p_xx += wq[:, None, None] * np.einsum("bgn,bg,bgl->bnl", h_x, pen, h_x)
        p_xu += wq[:, None, None] * np.einsum("bgn,bg,bgm->bnm", h_x, pen, h_u)
        p_uu += wq[:, None, None] * np.einsum("bgm,bg,bgl->bml", h_u, pen, h_u)
    return SweepData(
        a_k=a_k, b_k=b_k, c_val=c_val, c_x=c_x, c_u=c_u, c_xx=c_xx, c_xu=c_xu, c_uu=c_uu,
        p_val=p_val, p_x=p_x, p_u=p_u, p_xx=p_xx, p_xu=p_xu, p_uu=p_uu,
    )


def backward_sweep(
    problem: DdpProblem,
    traj: Trajectory,
    nu: Array,
    data: SweepData,
    reg: float,
) -> tuple[ValueExpansion, Gains]:
    """Recurse the value expansion node-by-node from tf to t0 and
    collect the per-interval control gains.

    The recursion eliminates one held control per interval, which is
    the decision structure the rollout actually has; because the
    interval maps and cost expansions in data are the derivatives of
    the very integrator and quadrature the merit uses, the Newton step
    this produces is the Newton step of the merit itself (exactly so
    for linear dynamics).  Nodal penalty terms enter once, at the node
    that owns them; the final node's control-dependent terms join the
    last interval's system, since that node reports the last interval's
    held control.  Raises _NotPositiveDefinite when the control Hessian
    fails its Cholesky factorization at the given regularization; the
    caller retries with a larger reg."""
    n, m, d = problem.n, problem.m, problem.n_psi
    nsteps = problem.steps
    x_f = traj.xs[-1]

    if problem.terminal_cost_expansion is not None:
        phi_x, phi_xx = problem.terminal_cost_expansion(x_f)
        phi = problem.terminal_cost(x_f)
    else:
        phi, phi_x, phi_xx = 0.0, np.zeros(n), np.zeros((n, n))
    if d:
        psi_val = problem.psi(x_f)
        psi_x = problem.psi_jac(x_f)
        psi_xx = (
            problem.psi_hess(x_f) if problem.psi_hess is not None else np.zeros((d, n, n))
        )
    else:
        psi_val = np.zeros(0)
        psi_x = np.zeros((0, n))
        psi_xx = np.zeros((0, n, n))

    value = ValueExpansion(
        v=np.zeros(nsteps + 1),
        v_x=np.zeros((nsteps + 1, n)),
        v_nu=np.zeros((nsteps + 1, d)),
        v_xx=np.zeros((nsteps + 1, n, n)),
        v_xnu=np.zeros((nsteps + 1, n, d)),
        v_nunu=np.zeros((nsteps + 1, d, d)),
        max_asymmetry=0.0,
    )
    # the final node's state-dependent penalty terms join the boundary
    # value; its control-dependent terms join the last interval's
    # Newton system below
    value.v[-1] = phi + (nu @ psi_val if d else 0.0) + data.p_val[-1]
    value.v_x[-1] = phi_x + (psi_x.T @ nu if d else 0.0) + data.p_x[-1]
    value.v_nu[-1] = psi_val
    value.v_xx[-1] = (phi_xx + np.einsum("i,ijk->jk", nu, psi_xx) if d else phi_xx) + data.p_xx[-1]
    value.v_xnu[-1] = psi_x.T
    value.v_nunu[-1] = np.zeros((d, d))

    gains = Gains(
        beta_u=np.zeros((nsteps + 1, m)),
        beta_x=np.zeros((nsteps + 1, m, n)),
        beta_nu=np.zeros((nsteps + 1, m, d)),
    )

    v = float(value.v[-1])
    v_x = value.v_x[-1].copy()
    v_nu = value.v_nu[-1].copy()
    v_xx = value.v_xx[-1].copy()
    v_xnu = value.v_xnu[-1].copy()
    v_nunu = value.v_nunu[-1].copy()
    reg_eye = reg * np.eye(m)
    asym = 0.0
    for k in range(nsteps - 1, -1, -1):
        a, b = data.a_k[k], data.b_k[k]
        vxx_a = v_xx @ a
        vxx_b = v_xx @ b
        q_x = data.c_x[k] + a.T @ v_x + data.p_x[k]
        q_u = data.c_u[k] + b.T @ v_x + data.p_u[k]
        q_xx = data.c_xx[k] + a.T @ vxx_a + data.p_xx[k]
        q_xu = data.c_xu[k] + a.T @ vxx_b + data.p_xu[k]
        q_uu = data.c_uu[k] + b.T @ vxx_b + data.p_uu[k]
        if k == nsteps - 1:
            q_u = q_u + data.p_u[k + 1]
            q_uu = q_uu + data.p_uu[k + 1] + b.T @ data.p_xu[k + 1] + data.p_xu[k + 1].T @ b
            q_xu = q_xu + a.T @ data.p_xu[k + 1]
        q_xnu = a.T @ v_xnu
        q_unu = b.T @ v_xnu
        try:
            chol = np.linalg.cholesky(q_uu + reg_eye)
        except np.linalg.LinAlgError:
            raise _NotPositiveDefinite
        rhs = np.column_stack([q_u[:, None], q_xu.T, q_unu])
        sol = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        beta_u = -sol[:, 0]
        beta_x = -sol[:, 1 : 1 + n]
        beta_nu = -sol[:, 1 + n :]
        gains.beta_u[k] = beta_u
        gains.beta_x[k] = beta_x
        gains.beta_nu[k] = beta_nu

        v = v + data.c_val[k] + data.p_val[k] + 0.5 * float(q_u @ beta_u)
        v_x = q_x + q_xu @ beta_u
        v_nu = v_nu + q_unu.T @ beta_u
        v_xx = q_xx + q_xu @ beta_x
        v_xnu = q_xnu + q_xu @ beta_nu
        v_nunu = v_nunu + q_unu.T @ beta_nu
        if v_xx.size:
            asym = max(asym, float(np.max(np.abs(v_xx - v_xx.T))))
        if v_nunu.size:
            asym = max(asym, float(np.max(np.abs(v_nunu - v_nunu.T))))
        # keep the quadratic blocks exactly symmetric as we go
        v_xx = 0.5 * (v_xx + v_xx.T)
        v_nunu = 0.5 * (v_nunu + v_nunu.T)
        value.v[k] = v
        value.v_x[k] = v_x
        value.v_nu[k] = v_nu
        value.v_xx[k] = v_xx
        value.v_xnu[k] = v_xnu
        value.v_nunu[k] = v_nunu
    value.max_asymmetry = asym
    return value, gains


# --- updates -----------------------------------------------------------------


def update_nu(
    value: ValueExpansion, residual: Array, k_nu: float, nu: Optional[Array] = None
) -> tuple[Array, bool]:
    """Multiplier correction k_nu * delta_nu with
    delta_nu = -V_nunu(t0)^-1 residual.  Returns (step, well_conditioned).

    The caller chooses the residual.  The backward integral V_nu(t0)
    predicts the violation remaining after an unscaled continuous
    control correction; with node-held controls it carries a hold bias
    that stalls the multiplier short of tight feasibility tolerances,
    so solve() passes the rollout's measured violation instead.

    V_nunu(t0) can collapse toward zero when penalty curvature chokes
    the control response, in which case the Newton step is arbitrarily
    large while its model is stale.  The applied step is therefore
    capped at a trust radius proportional to the current multiplier
    magnitude, keeping dual growth at worst geometric."""
    d = value.v_nu.shape[1]
    if d == 0:
        return np.zeros(0), True
    v_nunu = value.v_nunu[0]
    if not np.all(np.isfinite(v_nunu)):
        raise SweepFailureError("multiplier sensitivity is not finite")
    try:
        cond_ok = np.linalg.cond(v_nunu) < 1e12
    except np.linalg.LinAlgError:
        cond_ok = False
    if cond_ok:
        delta = -np.linalg.solve(v_nunu, residual)
    else:
        # regularized fallback; flagged to the caller
        delta = -np.linalg.lstsq(v_nunu + 1e-12 * np.eye(d), residual, rcond=None)[0]
    step = k_nu * delta
    radius = 2.0 * (1.0 + (float(np.linalg.norm(nu)) if nu is not None else 0.0))
    norm = float(np.linalg.norm(step))
    if norm > radius:
        step = step * (radius / norm)
    return step, cond_ok


def update_controls(
    problem: DdpProblem,
    traj: Trajectory,
    gains: Gains,
    nu_step: Array,
    step: float,
) -> Trajectory:
    """Forward pass: re-integrate while applying the correction
    u+ = u + step * beta_u + beta_x dx + beta_nu nu_step, with dx
    measured against the stored reference at each node.  Only the
    feedforward term is damped by the line-search step; the state
    feedback must stay at full strength to keep the rollout near the
    trajectory the sweep expanded around, and the multiplier response
    must match the nu move the caller actually applies.  The final node
    repeats the last interval's held control."""
    n, nsteps = problem.n, problem.steps
    dt = problem.dt
    ts = traj.ts
    xs = np.zeros((nsteps + 1, n))
    us = np.zeros_like(traj.us)
    f0 = np.zeros((nsteps, n))
    f1 = np.zeros((nsteps, n))
    xs[0] = traj.xs[0]
    d = problem.n_psi
    for k in range(nsteps):
        dx = xs[k] - traj.xs[k]
        du = step * gains.beta_u[k] + gains.beta_x[k] @ dx
        if d:
            du = du + gains.beta_nu[k] @ nu_step
        us[k] = traj.us[k] + du
        xs[k + 1], f0[k] = _rk4(problem.dynamics, xs[k], us[k], ts[k], dt)
        if not np.all(np.isfinite(xs[k + 1])):
            raise DivergenceError(f"forward pass produced non-finite state at step {k + 1}")
        f1[k] = problem.dynamics(xs[k + 1], us[k], ts[k + 1])
    us[-1] = us[-2] if nsteps else traj.us[-1]
    return Trajectory(ts=ts, xs=xs, us=us, f0=f0, f1=f1)


def _constraint_values(problem: DdpProblem, traj: Trajectory):
    nodes = problem.steps + 1
    g = np.zeros((nodes, problem.n_ineq))
    h = np.zeros((nodes, problem.n_eq))
    if problem.n_ineq:
        g = _eval_ineq(problem, traj.xs, traj.us, traj.ts)
    if problem.n_eq:
        h = _eval_eq(problem, traj.xs, traj.us, traj.ts)
    return g, h


# --- main loop ---------------------------------------------------------------


def solve(
    problem: DdpProblem,
    us0: Array,
    nu0: Optional[Array] = None,
    params: DdpParams = DdpParams(),
    trace: Optional[Callable[[dict], None]] = None,
) -> DdpSolution:
    """Run the sweep/update loop until the cost change, terminal
    constraint, and path-constraint violations are all within tolerance.

    Accepted iterations never increase the line-search merit (the
    augmented cost under that iteration's multipliers); if no trial step
    improves it the iteration keeps the reference controls.
    """
    us0 = np.asarray(us0, dtype=float)
    if us0.ndim == 1:
        us0 = us0[:, None]
    nu = np.zeros(problem.n_psi) if nu0 is None else np.asarray(nu0, dtype=float)
    traj = forward_rollout(problem, us0)
    al = init_al_state(problem, params)
    history: list = []
    converged = False
    max_asym = 0.0
    min_mult = np.inf if problem.n_ineq else 0.0
    nu_warned = False
    iteration = 0
    # safety valve on the multiplier step: the Newton step uses the
    # sweep's sensitivity, which goes stale for sharply nonlinear costs
    # and can ratchet the residual up by orders of magnitude per
    # iteration.  Only severe growth trips it; the coupled control and
    # multiplier recursion converges as a spiral, so mild transient
    # growth is part of normal progress
    nu_scale = 1.0
    psi_prev = None

    for iteration in range(1, params.max_iters + 1):
        if problem.prepare_iteration is not None:
            problem.prepare_iteration(traj)

        data = prepare_sweep(problem, traj, al)
        reg = params.reg_init
        while True:
            try:
                value, gains = backward_sweep(problem, traj, nu, data, reg)
                break
            except _NotPositiveDefinite:
                reg *= params.reg_growth
                if reg > params.reg_max:
                    raise SweepFailureError(
                        "control Hessian not positive definite at maximum regularization"
                    )
        max_asym = max(max_asym, value.max_asymmetry)

        residual = problem.psi(traj.xs[-1]) if problem.n_psi else np.zeros(0)
        nu_step, cond_ok = update_nu(value, residual, params.k_nu * nu_scale, nu)
        nu_warned = nu_warned or not cond_ok

        # the multiplier commits before the control line search: near a
        # stationary point of the current merit any move toward
        # feasibility raises the cost faster than the (still small)
        # multiplier pays it back, so conditioning the dual update on
        # merit descent deadlocks both.  Letting nu march while the
        # controls wait widens the merit gap until the search accepts
        nu = nu + nu_step
        j_ref = augmented_cost(problem, traj, nu, al)
        j_acc = j_ref
        dv = 0.0
        alpha = params.k_u
        alpha_used = 0.0
        while alpha >= params.min_step:
            try:
                cand = update_controls(problem, traj, gains, nu_step, alpha)
                j_cand = augmented_cost(problem, cand, nu, al)
            except DivergenceError:
                alpha *= 0.5
                continue
            # accept ties within floating-point resolution of the
            # merit: near a converged multiplier the improvement from
            # shrinking the constraint residual is quadratic in the
            # residual and falls below the merit's representable
            # precision, so insisting on strict descent would freeze
            # the residual short of tolerance
            fp_tol = 1e-13 * (1.0 + abs(j_ref))
            if np.isfinite(j_cand) and j_cand <= j_ref + fp_tol:
                traj, j_acc, dv, alpha_used = cand, j_cand, j_cand - j_ref, alpha
                break
            alpha *= 0.5
        g_vals, h_vals = _constraint_values(problem, traj)
        psi_val = problem.psi(traj.xs[-1]) if problem.n_psi else np.zeros(0)
        psi_norm = float(np.max(np.abs(psi_val))) if problem.n_psi else 0.0
        if problem.n_psi:
            ratcheted = psi_prev is not None and psi_norm > 5.0 * psi_prev
            if ratcheted and psi_norm > params.eps_h:
                nu_scale = max(1e-3, 0.25 * nu_scale)
            else:
                nu_scale = min(1.0, 1.5 * nu_scale)
            psi_prev = psi_norm
        max_g = float(np.max(g_vals)) if problem.n_ineq else 0.0
        max_h = float(np.max(np.abs(h_vals))) if problem.n_eq else 0.0
        record = {
            "iteration": iteration,
            "cost": trajectory_cost(problem, traj),
            "aug_cost": j_acc,
            "dv": dv,
            "step": alpha_used,
            "psi_norm": psi_norm,
            "max_ineq": max_g,
            "max_eq": max_h,
            "reg": reg,
            "nu": nu.tolist(),
            "nu_scale": nu_scale,
        }
        history.append(record)
        if trace is not None:
            trace(record)

        if (
            alpha_used > 0.0
            and abs(dv) <= params.eps_v
            and psi_norm <= params.eps_h
            and max_g <= params.eps_g
            and max_h <= params.eps_h
        ):
            converged = True
            break

        al = update_al(al, g_vals, h_vals)
        if problem.n_ineq:
            min_mult = min(min_mult, float(np.min(al.lam)))

    g_vals, h_vals = _constraint_values(problem, traj)
    psi_val = problem.psi(traj.xs[-1]) if problem.n_psi else np.zeros(0)
    return DdpSolution(
        ts=traj.ts,
        xs=traj.xs,
        us=traj.us,
        nu=nu,
        converged=converged,
        iterations=iteration,
        cost=trajectory_cost(problem, traj),
        aug_cost=augmented_cost(problem, traj, nu, al),
        psi_norm=float(np.max(np.abs(psi_val))) if problem.n_psi else 0.0,
        max_ineq=float(np.max(g_vals)) if problem.n_ineq else 0.0,
        max_eq=float(np.max(np.abs(h_vals))) if problem.n_eq else 0.0,
        history=history,
        max_asymmetry=max_asym,
        min_multiplier=0.0 if not problem.n_ineq else float(min_mult if np.isfinite(min_mult) else 0.0),
        al=al,
    )
