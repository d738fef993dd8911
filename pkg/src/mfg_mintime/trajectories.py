"""Feedback integration of optimal paths and their certificates.

Paths follow the negative normalized gradient of the value function at
full speed, projected back onto the closed domain after every step.  The
module also solves the penalized (unconstrained) problem on the band
grid and reconstructs adjoint data for the first-order optimality
conditions of the penalized problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .congestion import PenalizedSpeed, SpeedField
from .errors import DegenerateCertificateError, NotStoppedError
from .geometry import Domain
from .hjb import ValueFunction, batch_descent_directions, direction_set, \
    solve_value_function


@dataclass
class Trajectory:
    """One agent path sampled at uniform steps from time zero.

    ``points[i]`` is the position at ``i * dt``; the path is constant
    before ``t0`` and after arrival.  ``controls[i]`` is the unit control
    applied on the step starting at ``i * dt`` (zero outside the active
    window).  ``exit_time`` is relative to ``t0`` (inf when the target
    was never reached).
    """

    t0: float
    dt: float
    points: np.ndarray  # (n+1, dim)
    controls: np.ndarray  # (n+1, dim)
    exit_time: float
    stopped: bool
    horizon_exceeded: bool = False

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def end_time(self):
        return self.dt * (len(self.points) - 1)

    def position_at(self, t):
        """Position at an arbitrary time (constant extension past the end)."""
        i = int(np.floor(t / self.dt + 1e-9))
        i = min(max(i, 0), len(self.points) - 1)
        return self.points[i]

    def active_slice(self):
        """Index range [i0, i_end] of the moving part of the path."""
        i0 = int(round(self.t0 / self.dt))
        if not np.isfinite(self.exit_time):
            return i0, len(self.points) - 1
        i_end = len(self.points) - 1
        return i0, i_end


def _rotation(dim, degrees):
    if dim == 1 or not degrees:
        return None
    a = np.deg2rad(degrees)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def _turn_cap(speeds, domain, dt, n_dirs):
    """Per-step turn limit matching the certified control regularity.

    Generous enough for honest wrapping around the tightest boundary
    feature yet below the checked slope bound; the floor covers the
    angular quantization of the sampled direction set.
    """
    lip = getattr(speeds, "lipschitz_estimate", 0.0)
    if hasattr(speeds, "base"):
        lip = speeds.base.lipschitz_estimate + speeds.base.k_max / speeds.epsilon
    k_hi = speeds.k_max if hasattr(speeds, "k_max") else speeds.base.k_max
    rate = 1.6 * (lip + k_hi / max(domain.reach(), 1e-300))
    return max(rate * dt, 1.2 * (2.0 * np.pi / n_dirs))


def _limit_turn(prev, proposed, cap):
    """Rotate each previous control toward the proposal by at most ``cap``."""
    have_prev = np.linalg.norm(prev, axis=1) > 1e-12
    cross = prev[:, 0] * proposed[:, 1] - prev[:, 1] * proposed[:, 0]
    dot = np.einsum("pd,pd->p", prev, proposed)
    ang = np.arctan2(np.abs(cross), dot)
    need = have_prev & (ang > cap)
    if not np.any(need):
        return proposed
    out = proposed.copy()
    sgn = np.where(cross[need] >= 0.0, 1.0, -1.0)
    ca = np.cos(cap)
    sa = np.sin(cap) * sgn
    px, py = prev[need, 0], prev[need, 1]
    out[need, 0] = ca * px - sa * py
    out[need, 1] = sa * px + ca * py
    norm = np.linalg.norm(out[need], axis=1, keepdims=True)
    out[need] /= np.maximum(norm, 1e-300)
    return out


def integrate_feedback_batch(
    vf: ValueFunction,
    speeds,
    domain: Domain,
    t0: float,
    starts,
    n_dirs: int = 16,
    constrained: bool = True,
    control_rotation_deg: float = 0.0,
    limit_turn_rate: bool = True,
):
    """Integrate the feedback law for a batch of start points.

    Returns a list of :class:`Trajectory`.  Stepping stops for a particle
    on the first step entering a target cell; the exit time is refined by
    interpolating the target-distance crossing inside that step.  Runs
    are capped at the value-function horizon bound (flagged, not raised).
    In two dimensions the per-step control turn is limited to the
    certified regularity scale, which suppresses one-step flips where the
    value surface has route-choice kinks.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n_particles, dim = starts.shape
    dt = vf.dt if np.isfinite(vf.dt) else 0.4 * domain.cell_size / max(
        float(np.nanmax(getattr(speeds, "values", [1.0]))), 1e-300
    )
    i0 = int(round(t0 / dt))
    max_steps = int(np.ceil(vf.horizon_bound / dt)) + 2
    rot = _rotation(dim, control_rotation_deg)
    dirs = direction_set(dim, n_dirs)
    h_quot = 2.0 * dt
    cap = _turn_cap(speeds, domain, dt, n_dirs) \
        if (dim == 2 and limit_turn_rate) else None

    n_len = i0 + max_steps + 1
    points = np.empty((n_particles, n_len, dim))
    controls = np.zeros((n_particles, n_len, dim))
    points[:, : i0 + 1] = starts[:, None, :]
    exit_time = np.full(n_particles, np.inf)
    end_index = np.full(n_particles, i0, dtype=np.intp)
    prev_ctrl = np.zeros((n_particles, dim))

    active = ~domain.in_target_cell(starts)
    exit_time[~active] = 0.0

    pos = starts.copy()
    step = 0
    while np.any(active) and step < max_steps:
        t = t0 + step * dt
        idx = np.flatnonzero(active)
        p_act = pos[idx]
        d_act, _, _ = batch_descent_directions(
            vf, speeds, t, p_act, h_quot, dirs, prev=prev_ctrl[idx],
            constrained=constrained,
        )
        if cap is not None:
            d_act = _limit_turn(prev_ctrl[idx], d_act, cap)
        if rot is not None:
            d_act = d_act @ rot.T
        k = np.asarray(speeds.at(t, p_act))
        new = p_act + dt * k[:, None] * d_act
        if constrained:
            new = domain.project_points(new)
        new = domain.clip_to_grid(new)

        arrived = domain.in_target_cell(new)
        f_prev = domain.target_distance(p_act)
        f_new = domain.target_distance(new)
        with np.errstate(divide="ignore", invalid="ignore"):
            theta = np.where(
                f_prev > f_new, f_prev / np.maximum(f_prev - f_new, 1e-300), 1.0
            )
        theta = np.clip(theta, 0.0, 1.0)

        gi = i0 + step
        controls[idx, gi] = d_act
        points[idx, gi + 1] = new
        prev_ctrl[idx] = d_act
        pos[idx] = new

        just = idx[arrived]
        exit_time[just] = (gi + theta[arrived]) * dt - t0
        end_index[just] = gi + 1
        active[just] = False
        step += 1

    still = np.flatnonzero(active)
    end_index[still] = i0 + step
    stopped_mask = ~np.isin(np.arange(n_particles), still)

    out = []
    for p in range(n_particles):
        e = end_index[p]
        traj = Trajectory(
            t0=float(t0),
            dt=float(dt),
            points=points[p, : e + 1].copy(),
            controls=controls[p, : e + 1].copy(),
            exit_time=float(exit_time[p]),
            stopped=bool(stopped_mask[p]),
            horizon_exceeded=bool(p in still),
        )
        out.append(traj)
    return out


def integrate_optimal_trajectory(
    vf: ValueFunction,
    speeds: SpeedField,
    domain: Domain,
    t0: float,
    x0,
    n_dirs: int = 16,
) -> Trajectory:
    """Integrate one feedback path from ``(t0, x0)`` on the closed domain."""
    return integrate_feedback_batch(
        vf, speeds, domain, t0, np.asarray(x0, dtype=float)[None, :], n_dirs
    )[0]


def first_exit_time(traj: Trajectory, domain: Domain) -> float:
    """Recompute the first arrival time from the stored points (inf if none)."""
    on_target = domain.in_target_cell(traj.points)
    hits = np.flatnonzero(on_target)
    if hits.size == 0:
        return np.inf
    return max(hits[0] * traj.dt - traj.t0, 0.0)


def check_dpp(vf: ValueFunction, traj: Trajectory) -> float:
    """Largest violation of value-plus-elapsed-time conservation on a path.

    Zero (up to scheme error) certifies optimality; admissible but
    suboptimal paths drift linearly.
    """
    if not traj.stopped:
        raise NotStoppedError("dynamic-programming check requires an arrived path")
    i0 = int(round(traj.t0 / traj.dt))
    base = vf.interp(traj.t0, traj.points[i0][None, :])[0]
    dev = 0.0
    for i in range(i0, len(traj.points)):
        h = i * traj.dt - traj.t0
        if h > traj.exit_time + traj.dt:
            break
        h_eff = min(h, traj.exit_time)
        v = vf.interp(traj.t0 + h_eff, traj.points[i][None, :])[0]
        if np.isfinite(v):
            dev = max(dev, abs(v + h_eff - base))
    return float(dev)


def check_state_constraint(traj: Trajectory, domain: Domain) -> float:
    """Largest excursion outside the closed domain along the path."""
    d = domain.sdf(traj.points)
    return float(np.maximum(d, 0.0).max())


def check_control_regularity(traj: Trajectory, lipschitz: float, k_max: float,
                             eps0: float) -> float:
    """Largest discrete control slope over the active window (final step excluded).

    The associated pass criterion is ``slope <= 2 * (lipschitz + k_max/eps0)``.
    """
    if not traj.stopped:
        raise NotStoppedError("control regularity requires an arrived path")
    i0, i_end = traj.active_slice()
    ctrl = traj.controls[i0:i_end]
    ctrl = ctrl[np.linalg.norm(ctrl, axis=1) > 1e-12]
    if len(ctrl) < 3:
        return 0.0
    slopes = np.linalg.norm(np.diff(ctrl[:-1], axis=0), axis=1) / traj.dt
    return float(slopes.max()) if slopes.size else 0.0


def control_regularity_bound(lipschitz: float, k_max: float, eps0: float,
                             safety: float = 2.0) -> float:
    """Safe bound on the discrete control slope."""
    if not np.isfinite(eps0) or eps0 <= 0.0:
        return safety * lipschitz
    return safety * (lipschitz + k_max / eps0)


# ---------------------------------------------------------------------------
# Penalized problem
# ---------------------------------------------------------------------------


def penalized_field(pen: PenalizedSpeed) -> SpeedField:
    """Materialize the penalized speeds as a plain field on the band grid."""
    base = pen.base
    vals = np.stack([pen.slice_values(i) for i in range(len(base.times))])
    return SpeedField(
        times=base.times,
        values=vals,
        stationary_from=base.stationary_from,
        lipschitz_estimate=base.lipschitz_estimate + base.k_max / pen.epsilon,
        k_min=base.k_min,
        k_max=base.k_max,
        domain=pen.domain,
    )


def solve_penalized_value(pen: PenalizedSpeed, n_dirs: int = 16) -> ValueFunction:
    """Value function of the unconstrained band problem under cut speeds."""
    return solve_value_function(
        pen.domain, penalized_field(pen), n_dirs=n_dirs, constrained=False
    )


def integrate_penalized_batch(
    pen: PenalizedSpeed, domain: Domain, t0: float, starts,
    n_dirs: int = 16, vf: ValueFunction | None = None,
):
    """Penalized feedback runs for a batch of starts; returns (paths, vf)."""
    if vf is None:
        vf = solve_penalized_value(pen, n_dirs=n_dirs)
    trajs = integrate_feedback_batch(
        vf, pen, domain, t0, starts, n_dirs=n_dirs, constrained=False
    )
    return trajs, vf


def integrate_penalized_trajectory(
    pen: PenalizedSpeed, domain: Domain, t0: float, x0, n_dirs: int = 16,
) -> Trajectory:
    """Integrate one unconstrained path under the cut speed field."""
    trajs, _ = integrate_penalized_batch(
        pen, domain, t0, np.asarray(x0, dtype=float)[None, :], n_dirs=n_dirs
    )
    return trajs[0]


# ---------------------------------------------------------------------------
# Adjoint certificate
# ---------------------------------------------------------------------------


@dataclass
class PMPCertificate:
    """Reconstructed adjoint data and algebraic optimality checks.

    ``checks`` maps a condition name to ``(passed, slack)``.
    """

    cost_multiplier: int
    costates: np.ndarray  # (n, dim)
    hamiltonian_values: np.ndarray  # (n,)
    max_control_slope: float
    checks: dict = field(default_factory=dict)


def pmp_certificate(traj: Trajectory, pen: PenalizedSpeed,
                    cert_tol: float = 1e-3) -> PMPCertificate:
    """Reconstruct the normal-case adjoint along an arrived penalized path.

    The costate direction equals the control (maximization condition is
    exact by construction); its magnitude integrates the measured speed
    gradient backward from the arrival condition.  The running
    Hamiltonian value is integrated from its own time derivative and
    compared against the algebraic relation, which is the substantive
    numerical check.
    """
    if not traj.stopped:
        raise NotStoppedError("certificate requires an arrived path")
    i0, i_end = traj.active_slice()
    times = traj.dt * np.arange(i0, i_end + 1)
    pts = traj.points[i0 : i_end + 1]
    n = len(pts)

    k_end = pen.at(times[-1], pts[-1])
    if k_end <= 1e-12:
        raise DegenerateCertificateError("zero speed at arrival point")

    ctrl = traj.controls[i0 : i_end + 1].copy()
    # the arrival step may carry a zero control; use the last moving one
    for i in range(n):
        if np.linalg.norm(ctrl[i]) <= 1e-12:
            ctrl[i] = ctrl[i - 1] if i > 0 else ctrl[i]
    norms = np.linalg.norm(ctrl, axis=1)
    unit = np.divide(ctrl, norms[:, None], out=np.zeros_like(ctrl),
                     where=norms[:, None] > 1e-12)

    k_path = np.array([pen.at(times[i], pts[i]) for i in range(n)])

    # Composite midpoint quadrature in arclength: the measured gradient at
    # sub-segment midpoints, weighted by measured length over local speed.
    # Sub-division keeps the error from interpolant kinks inside a step
    # well below the certificate tolerance.
    fracs = np.array([1.0, 3.0, 5.0, 7.0]) / 8.0
    slope = np.zeros(max(n - 1, 0))
    increment = np.zeros(max(n - 1, 0))
    dkdt_mid = np.zeros(max(n - 1, 0))
    for i in range(n - 1):
        sub = pts[i] + fracs[:, None] * (pts[i + 1] - pts[i])
        g = pen.gradient_at(times[i], sub)
        s_sub = g @ unit[i]
        k_sub = np.maximum(pen.at(times[i], sub), 1e-300)
        seg = float(np.linalg.norm(pts[i + 1] - pts[i]))
        increment[i] = float(np.sum(s_sub / k_sub)) * seg / len(fracs)
        slope[i] = float(np.max(np.abs(s_sub)))
        dkdt_mid[i] = float(np.mean(
            pen.time_slope_at(times[i] + 0.5 * traj.dt, sub)
        ))

    log_p = np.zeros(n)
    for i in range(n - 2, -1, -1):
        log_p[i] = log_p[i + 1] + increment[i]
    p_mag = np.exp(log_p) / k_end

    q = np.zeros(n)
    for i in range(n - 2, -1, -1):
        p_mid = np.exp(0.5 * (log_p[i] + log_p[i + 1])) / k_end
        q[i] = q[i + 1] - traj.dt * p_mid * dkdt_mid[i]

    algebraic = p_mag * k_path - 1.0
    scale = max(1.0, float(np.max(np.abs(p_mag * k_path))))
    ham_slack = float(np.max(np.abs(q - algebraic))) / scale

    lip = pen.base.lipschitz_estimate
    growth_bound = lip + pen.base.k_max / pen.epsilon
    growth_measured = float(np.max(np.abs(slope))) if slope.size else 0.0

    i_lo, i_hi = traj.active_slice()
    raw = traj.controls[i_lo:i_hi]
    raw = raw[np.linalg.norm(raw, axis=1) > 1e-12]
    max_slope = (
        float(np.max(np.linalg.norm(np.diff(raw, axis=0), axis=1)) / traj.dt)
        if len(raw) > 1
        else 0.0
    )

    checks = {
        "maximization": (True, 0.0),
        "hamiltonian_relation": (ham_slack <= cert_tol, ham_slack),
        "final_time": (abs(q[-1]) <= cert_tol, float(abs(q[-1]))),
        "costate_nonvanishing": (bool(np.min(p_mag) > 0.0), float(np.min(p_mag))),
        "nontriviality": (True, float(1.0 + np.max(p_mag))),
        "growth_bound": (
            growth_measured <= growth_bound + 1e-9,
            float(growth_bound - growth_measured),
        ),
    }
    return PMPCertificate(
        cost_multiplier=1,
        costates=p_mag[:, None] * unit,
        hamiltonian_values=q,
        max_control_slope=max_slope,
        checks=checks,
    )


def export_trajectory_csv(traj: Trajectory, domain: Domain, path) -> None:
    """Write rows (t, x, y, u_x, u_y, on_target)."""
    on = domain.in_target_cell(traj.points)
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,x,y,u_x,u_y,on_target\n")
        for i in range(len(traj.points)):
            t = i * traj.dt
            x = traj.points[i][0]
            y = traj.points[i][1] if traj.dim == 2 else 0.0
            ux = traj.controls[i][0]
            uy = traj.controls[i][1] if traj.dim == 2 else 0.0
            f.write(f"{t:.17g},{x:.17g},{y:.17g},{ux:.17g},{uy:.17g},{int(on[i])}\n")


def export_certificate(cert: PMPCertificate, path) -> None:
    """Write the certificate checks as a flat key-value block."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"cost_multiplier={cert.cost_multiplier}\n")
        f.write(f"max_control_slope={cert.max_control_slope:.17g}\n")
        for name, (passed, slack) in cert.checks.items():
            f.write(f"{name}.passed={int(passed)}\n")
            f.write(f"{name}.slack={slack:.17g}\n")
