"""Closed-loop multirotor + arm simulation and flatness-based attitude recovery.

The base is a rigid body driven by ``n_p`` rotor thrusts mixed through ``K``
(``u = K f`` with ``u = [thrust, roll, pitch, yaw moments]``). Arm joints are
servo-driven double integrators; arm reaction on the base enters only as a bounded
random-walk disturbance force/torque.

The tracking loop is cascaded: a position PID at the trajectory rate produces an
acceleration command, flatness turns it into roll/pitch/thrust set points, and an
attitude PD at the simulation rate produces body moments.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FlatnessSingularity, StateDivergence
from .kinematics import rpy_matrix, wrap_angle
from .topp_ra import SampledTrajectory

log = logging.getLogger(__name__)

E_Z = np.array([0.0, 0.0, 1.0])


def hexarotor_mixing(arm_length: float = 0.3, drag_ratio: float = 0.016) -> np.ndarray:
    """4x6 mixing matrix of a symmetric hexarotor in x configuration.

    Rotor ``i`` sits at angle ``30 + 60 i`` degrees, spin directions alternate.
    """
    ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
    spin = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
    return np.vstack([
        np.ones(6),
        arm_length * np.sin(ang),
        -arm_length * np.cos(ang),
        drag_ratio * spin,
    ])


@dataclass(frozen=True)
class MultirotorParams:
    mass: float = 3.2
    inertia: tuple[float, float, float] = (0.035, 0.035, 0.06)
    mixing: np.ndarray = field(default_factory=hexarotor_mixing)
    f_max: float = 12.0
    g: float = 9.81
    workspace_bound: float = 1000.0

    def __post_init__(self):
        k = np.asarray(self.mixing, dtype=float)
        object.__setattr__(self, "mixing", k)
        if k.ndim != 2 or k.shape[0] != 4:
            raise ValueError("mixing matrix must be 4 x n_p")
        if np.linalg.matrix_rank(k) < 4:
            raise ValueError("mixing matrix must have full row rank")
        if self.mass <= 0 or self.f_max <= 0 or min(self.inertia) <= 0:
            raise ValueError("mass, inertia and f_max must be positive")

    @property
    def n_rotors(self) -> int:
        return self.mixing.shape[1]

    @property
    def mixing_pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.mixing)

    def hover_forces(self) -> np.ndarray:
        return self.mixing_pinv @ np.array([self.mass * self.g, 0.0, 0.0, 0.0])


@dataclass
class FullState:
    p: np.ndarray
    v: np.ndarray
    euler: np.ndarray  # roll, pitch, yaw
    omega: np.ndarray  # body rates p, q, r
    q: np.ndarray
    dq: np.ndarray

    @classmethod
    def hover(cls, p, psi: float, q) -> "FullState":
        q = np.asarray(q, dtype=float)
        return cls(np.asarray(p, dtype=float).copy(), np.zeros(3), np.array([0.0, 0.0, psi]),
                   np.zeros(3), q.copy(), np.zeros_like(q))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.euler, self.omega, self.q, self.dq])

    @classmethod
    def from_vector(cls, x: np.ndarray, m: int) -> "FullState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy(),
                   x[12:12 + m].copy(), x[12 + m:12 + 2 * m].copy())


def flat_attitude(accel_cmd, psi: float, params: MultirotorParams) -> tuple[float, float, float]:
    """Roll, pitch and collective thrust that realize ``accel_cmd`` at yaw ``psi``.

    The body z axis is aligned with ``accel_cmd + g e_z``; yaw is kept by building the
    body x axis in the vertical plane through heading ``psi`` (Z-Y-X Euler angles).
    """
    t = np.asarray(accel_cmd, dtype=float) + params.g * E_Z
    norm = float(np.linalg.norm(t))
    if norm <= 0.1 * params.g:
        raise FlatnessSingularity(f"thrust direction undefined: |a + g| = {norm:.4g}")
    z_b = t / norm
    y_c = np.array([-np.sin(psi), np.cos(psi), 0.0])
    x_b = np.cross(y_c, z_b)
    x_b /= np.linalg.norm(x_b)
    y_b = np.cross(z_b, x_b)
    theta = float(np.arctan2(-x_b[2], np.hypot(x_b[0], x_b[1])))
    phi = float(np.arctan2(y_b[2], z_b[2]))
    return phi, theta, params.mass * norm


def flat_attitude_series(traj: SampledTrajectory, params: MultirotorParams) -> np.ndarray:
    """``(n, 3)`` array of predicted (roll, pitch, thrust) along a planned trajectory."""
    return np.array([flat_attitude(traj.ddq[k, :3], traj.q[k, 3], params)
                     for k in range(len(traj))])


@dataclass
class FeasibilityReport:
    tilt: np.ndarray
    rotor_forces: np.ndarray
    tilt_violations: list[int]
    thrust_violations: list[int]
    singular: list[int]

    @property
    def ok(self) -> bool:
        return not (self.tilt_violations or self.thrust_violations or self.singular)

    def summary(self) -> dict:
        return {
            "ok": self.ok,
            "max_tilt": float(np.max(self.tilt)) if self.tilt.size else 0.0,
            "max_rotor_force": float(np.max(self.rotor_forces)) if self.rotor_forces.size else 0.0,
            "min_rotor_force": float(np.min(self.rotor_forces)) if self.rotor_forces.size else 0.0,
            "tilt_violations": len(self.tilt_violations),
            "thrust_violations": len(self.thrust_violations),
            "singular_samples": len(self.singular),
        }


def feasibility_check(traj: SampledTrajectory, params: MultirotorParams,
                      max_tilt: float = np.deg2rad(35.0)) -> FeasibilityReport:
    """Flag samples whose flat attitude exceeds ``max_tilt`` or whose hover-moment
    rotor split ``K^+ [u1, 0, 0, 0]`` leaves ``[0, f_max]``.

    Moments are taken as zero because they depend on jerk and snap, which the
    acceleration-limited trajectory does not bound.
    """
    n = len(traj)
    tilt = np.zeros(n)
    forces = np.zeros((n, params.n_rotors))
    tilt_bad, thrust_bad, singular = [], [], []
    k_pinv = params.mixing_pinv
    for k in range(n):
        try:
            phi, theta, u1 = flat_attitude(traj.ddq[k, :3], traj.q[k, 3], params)
        except FlatnessSingularity:
            singular.append(k)
            tilt[k] = np.pi
            continue
        tilt[k] = float(np.arccos(np.clip(np.cos(phi) * np.cos(theta), -1.0, 1.0)))
        forces[k] = k_pinv @ np.array([u1, 0.0, 0.0, 0.0])
        if tilt[k] > max_tilt:
            tilt_bad.append(k)
        if np.any(forces[k] < 0.0) or np.any(forces[k] > params.f_max):
            thrust_bad.append(k)
    return FeasibilityReport(tilt, forces, tilt_bad, thrust_bad, singular)


def _euler_rates(euler: np.ndarray, omega: np.ndarray) -> np.ndarray:
    phi, theta, _ = euler
    p, q, r = omega
    sf, cf = np.sin(phi), np.cos(phi)
    ct, tt = np.cos(theta), np.tan(theta)
    return np.array([
        p + sf * tt * q + cf * tt * r,
        cf * q - sf * r,
        (sf * q + cf * r) / ct,
    ])


def _derivative(x: np.ndarray, m: int, wrench: np.ndarray, joint_acc: np.ndarray,
                d_force: np.ndarray, d_torque: np.ndarray, params: MultirotorParams) -> np.ndarray:
    v = x[3:6]
    euler = x[6:9]
    omega = x[9:12]
    dq = x[12 + m:12 + 2 * m]
    inertia = np.asarray(params.inertia)
    r = rpy_matrix(*euler)
    acc = (r[:, 2] * wrench[0] + d_force) / params.mass - params.g * E_Z
    omega_dot = (wrench[1:4] + d_torque - np.cross(omega, inertia * omega)) / inertia
    return np.concatenate([v, acc, _euler_rates(euler, omega), omega_dot, dq, joint_acc])


def step_dynamics(state: FullState, rotor_forces, joint_acc, params: MultirotorParams,
                  dt: float, d_force=None, d_torque=None, t: float | None = None) -> FullState:
    """One RK4 step with rotor forces, joint accelerations and disturbance held constant."""
    if not 0.0 < dt <= 0.02:
        raise ValueError("dt must lie in (0, 0.02]")
    f = np.asarray(rotor_forces, dtype=float)
    if f.shape != (params.n_rotors,):
        raise ValueError(f"expected {params.n_rotors} rotor forces")
    if np.any(f < -1e-12) or np.any(f > params.f_max + 1e-12):
        raise ValueError("rotor forces outside [0, f_max]")
    m = state.q.size
    wrench = params.mixing @ f
    ja = np.zeros(m) if joint_acc is None else np.asarray(joint_acc, dtype=float)
    df = np.zeros(3) if d_force is None else np.asarray(d_force, dtype=float)
    dtq = np.zeros(3) if d_torque is None else np.asarray(d_torque, dtype=float)
    x = state.to_vector()
    k1 = _derivative(x, m, wrench, ja, df, dtq, params)
    k2 = _derivative(x + 0.5 * dt * k1, m, wrench, ja, df, dtq, params)
    k3 = _derivative(x + 0.5 * dt * k2, m, wrench, ja, df, dtq, params)
    k4 = _derivative(x + dt * k3, m, wrench, ja, df, dtq, params)
    x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out = FullState.from_vector(x_new, m)
    if (not np.all(np.isfinite(x_new)) or abs(out.euler[0]) >= np.pi / 2
            or abs(out.euler[1]) >= np.pi / 2):
        raise StateDivergence("roll or pitch reached +-90 degrees", t)
    if np.linalg.norm(out.p) > params.workspace_bound:
        raise StateDivergence("vehicle left the workspace bound", t)
    return out


@dataclass(frozen=True)
class ControllerGains:
    kp_pos: tuple[float, float, float] = (2.0, 2.0, 4.0)
    kd_pos: tuple[float, float, float] = (2.0, 2.0, 3.0)
    ki_pos: tuple[float, float, float] = (0.5, 0.5, 1.0)
    integral_limit: float = 0.5
    max_accel: float = 8.0
    max_tilt: float = 0.6
    # attitude gains are per unit inertia (rad/s^2 per rad, per rad/s)
    kp_att: tuple[float, float, float] = (400.0, 400.0, 100.0)
    kd_att: tuple[float, float, float] = (40.0, 40.0, 20.0)
    joint_bandwidth: float = 30.0
    joint_rate_limit: float = 5.0

    def __post_init__(self):
        for name in ("kp_pos", "kd_pos", "ki_pos", "kp_att", "kd_att"):
            if min(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("integral_limit", "max_accel", "max_tilt", "joint_bandwidth", "joint_rate_limit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded random walk standing in for arm reaction on the base.

    Force is in the world frame, torque in the body frame. Each trajectory sample the
    walk takes a Gaussian step of ``step_fraction * bound`` and is clipped to the bound.
    """
    force_bound: float = 0.2
    torque_bound: float = 0.02
    step_fraction: float = 0.1
    seed: int = 0

    def walk(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        forces = np.zeros((n, 3))
        torques = np.zeros((n, 3))
        f = np.zeros(3)
        tq = np.zeros(3)
        for k in range(n):
            forces[k] = f
            torques[k] = tq
            step = rng.standard_normal(6)
            f = np.clip(f + self.step_fraction * self.force_bound * step[:3],
                        -self.force_bound, self.force_bound)
            tq = np.clip(tq + self.step_fraction * self.torque_bound * step[3:],
                         -self.torque_bound, self.torque_bound)
        return forces, torques


NO_DISTURBANCE = DisturbanceModel(0.0, 0.0, 0.0, 0)


@dataclass
class SimTrace:
    """States recorded at ``t = k * T_s``; column layout mirrors :class:`FullState`."""
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    euler: np.ndarray
    omega: np.ndarray
    q: np.ndarray
    dq: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def state(self, k: int) -> FullState:
        return FullState(self.p[k].copy(), self.v[k].copy(), self.euler[k].copy(),
                         self.omega[k].copy(), self.q[k].copy(), self.dq[k].copy())

    def states(self) -> list[FullState]:
        return [self.state(k) for k in range(len(self))]


def simulate_tracking(traj: SampledTrajectory, params: MultirotorParams,
                      gains: ControllerGains = ControllerGains(), dt_sim: float = 0.001,
                      disturbance: DisturbanceModel = NO_DISTURBANCE,
                      initial: FullState | None = None) -> SimTrace:
    """Fly ``traj`` through the cascaded controller and record the state at each sample."""
    T_s = traj.T_s
    ratio = T_s / dt_sim
    substeps = int(round(ratio))
    if substeps < 1 or abs(ratio - substeps) > 1e-9 * ratio:
        raise ValueError("dt_sim must divide the trajectory sampling time")
    n = len(traj)
    m = traj.dim - 4
    if initial is None:
        initial = FullState.hover(traj.q[0, :3], traj.q[0, 3], traj.q[0, 4:])
    state = initial
    inertia = np.asarray(params.inertia)
    kp_pos, kd_pos, ki_pos = (np.asarray(g) for g in (gains.kp_pos, gains.kd_pos, gains.ki_pos))
    kp_att, kd_att = np.asarray(gains.kp_att), np.asarray(gains.kd_att)
    w_j = gains.joint_bandwidth
    k_pinv = params.mixing_pinv
    d_forces, d_torques = disturbance.walk(n)
    integ = np.zeros(3)

    rec = {name: np.zeros((n, size)) for name, size in
           (("p", 3), ("v", 3), ("euler", 3), ("omega", 3), ("q", m), ("dq", m))}
    for k in range(n):
        t_k = traj.t[k]
        for name in rec:
            rec[name][k] = getattr(state, name)
        if k == n - 1:
            break
        q_ref, dq_ref, ddq_ref = traj.q[k], traj.dq[k], traj.ddq[k]
        err = q_ref[:3] - state.p
        integ = np.clip(integ + err * T_s, -gains.integral_limit, gains.integral_limit)
        acc_cmd = ddq_ref[:3] + kp_pos * err + kd_pos * (dq_ref[:3] - state.v) + ki_pos * integ
        norm = np.linalg.norm(acc_cmd)
        if norm > gains.max_accel:
            acc_cmd = acc_cmd * (gains.max_accel / norm)
        psi_ref = q_ref[3]
        try:
            phi_d, theta_d, thrust = flat_attitude(acc_cmd, psi_ref, params)
        except FlatnessSingularity:
            raise StateDivergence("commanded free fall", t_k) from None
        phi_d = float(np.clip(phi_d, -gains.max_tilt, gains.max_tilt))
        theta_d = float(np.clip(theta_d, -gains.max_tilt, gains.max_tilt))
        for j in range(substeps):
            att_err = np.array([phi_d, theta_d, psi_ref]) - state.euler
            att_err[2] = wrap_angle(att_err[2])
            torque = inertia * (kp_att * att_err - kd_att * state.omega)
            forces = np.clip(k_pinv @ np.concatenate([[thrust], torque]), 0.0, params.f_max)
            jacc = ddq_ref[4:] + w_j * w_j * (q_ref[4:] - state.q) + 2.0 * w_j * (dq_ref[4:] - state.dq)
            # rate limit: never accelerate past the servo's speed bound within one step
            jacc = np.clip(jacc, (-gains.joint_rate_limit - state.dq) / dt_sim,
                           (gains.joint_rate_limit - state.dq) / dt_sim)
            state = step_dynamics(state, forces, jacc, params, dt_sim, d_forces[k], d_torques[k],
                                  t=t_k + j * dt_sim)
    return SimTrace(traj.t.copy(), rec["p"], rec["v"], rec["euler"], rec["omega"], rec["q"], rec["dq"])


@dataclass
class EnrichedTrajectory:
    """Full-coordinate stream ``[x, y, z, phi, theta, psi, q_1..q_M]`` with derivatives."""
    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def roll(self) -> np.ndarray:
        return self.q[:, 3]

    @property
    def pitch(self) -> np.ndarray:
        return self.q[:, 4]

    def control_part(self, arr: np.ndarray) -> np.ndarray:
        """Drop the roll/pitch columns, recovering the control-space layout."""
        return np.concatenate([arr[:, :3], arr[:, 5:]], axis=1)


def enrich_trajectory(traj: SampledTrajectory, roll_pitch) -> EnrichedTrajectory:
    """Insert simulated roll/pitch (and finite-difference rates) into the planned stream.

    ``roll_pitch`` is a :class:`SimTrace`, a list of :class:`FullState`, or an ``(n, 2)``
    array. Planned entries are copied verbatim.
    """
    if isinstance(roll_pitch, SimTrace):
        rp = roll_pitch.euler[:, :2]
    elif len(roll_pitch) and isinstance(roll_pitch[0], FullState):
        rp = np.array([s.euler[:2] for s in roll_pitch])
    else:
        rp = np.asarray(roll_pitch, dtype=float).reshape(-1, 2)
    n = len(traj)
    if rp.shape[0] != n:
        raise ValueError(f"attitude stream has {rp.shape[0]} samples, trajectory has {n}")
    if n >= 3:
        d1 = np.gradient(rp, traj.T_s, axis=0, edge_order=2)
        d2 = np.gradient(d1, traj.T_s, axis=0, edge_order=2)
    elif n == 2:
        d1 = np.gradient(rp, traj.T_s, axis=0)
        d2 = np.zeros_like(rp)
    else:
        d1 = np.zeros_like(rp)
        d2 = np.zeros_like(rp)

    def merge(planned, extra):
        return np.concatenate([planned[:, :3], extra, planned[:, 3:]], axis=1)

    return EnrichedTrajectory(traj.t.copy(), merge(traj.q, rp), merge(traj.dq, d1),
                              merge(traj.ddq, d2))
