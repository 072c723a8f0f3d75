"""End-effector pose compensation for simulated base attitude.

The planner assumes a level vehicle. Once roll and pitch are known from simulation,
each desired end-effector pose is re-expressed in the arm mount frame with the tilted
base, and the arm joints are re-solved by IK so the tool stays where it was planned.
Only the arm columns of the trajectory change.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics_sim import EnrichedTrajectory, FullState, SimTrace
from .kinematics import (DHTable, HomogeneousTransform, IKOptions, forward_kinematics,
                         inverse_kinematics, pose_error)
from .topp_ra import KinodynamicLimits, SampledTrajectory

log = logging.getLogger(__name__)

# relative excess over the kinodynamic limits tolerated before a compensated
# trajectory is flagged
LIMIT_AUDIT_SLACK = 0.05
CONTINUITY_SLACK = 1.5


def base_pose(p, euler) -> HomogeneousTransform:
    return HomogeneousTransform.from_xyz_rpy(p, euler)


def desired_ee_poses(traj: SampledTrajectory, t_b_l0: HomogeneousTransform,
                     table: DHTable) -> list[HomogeneousTransform]:
    """Planned tool poses: level base at the planned position and yaw, planned joints."""
    out = []
    for k in range(len(traj)):
        x = traj.q[k]
        t_w_b = base_pose(x[:3], (0.0, 0.0, x[3]))
        out.append(t_w_b @ t_b_l0 @ forward_kinematics(table, x[4:]))
    return out


def ee_pose(p, euler, t_b_l0: HomogeneousTransform, table: DHTable, q_m) -> HomogeneousTransform:
    return base_pose(p, euler) @ t_b_l0 @ forward_kinematics(table, q_m)


@dataclass
class CompensationResult:
    compensated: SampledTrajectory
    residuals: np.ndarray  # (n, 2): translation m, rotation rad
    unreachable_count: int
    unreachable: list[int] = field(default_factory=list)
    clamped: list[int] = field(default_factory=list)
    continuity_violations: list[int] = field(default_factory=list)
    limit_audit: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "unreachable_count": self.unreachable_count,
            "clamped_samples": len(self.clamped),
            "continuity_violations": len(self.continuity_violations),
            "max_translation_residual": float(self.residuals[:, 0].max()) if len(self.residuals) else 0.0,
            "max_rotation_residual": float(self.residuals[:, 1].max()) if len(self.residuals) else 0.0,
            "limit_audit": self.limit_audit,
        }


def _attitude(enriched) -> np.ndarray:
    if isinstance(enriched, EnrichedTrajectory):
        return enriched.q[:, 3:5]
    if isinstance(enriched, SimTrace):
        return enriched.euler[:, :2]
    if len(enriched) and isinstance(enriched[0], FullState):
        return np.array([s.euler[:2] for s in enriched])
    return np.asarray(enriched, dtype=float).reshape(-1, 2)


def limit_audit(traj: SampledTrajectory, limits: KinodynamicLimits,
                slack: float = LIMIT_AUDIT_SLACK) -> dict:
    """Peak |dq|/v_max and |ddq|/a_max over the arm columns, flagged beyond ``1 + slack``."""
    v = np.asarray(limits.v_max, dtype=float)[4:]
    a = np.asarray(limits.a_max, dtype=float)[4:]
    vr = float(np.max(np.abs(traj.dq[:, 4:]) / v)) if len(traj) else 0.0
    ar = float(np.max(np.abs(traj.ddq[:, 4:]) / a)) if len(traj) else 0.0
    return {
        "max_velocity_ratio": vr,
        "max_acceleration_ratio": ar,
        "velocity_flag": vr > 1.0 + slack,
        "acceleration_flag": ar > 1.0 + slack,
    }


def compensate(traj: SampledTrajectory, enriched, t_b_l0: HomogeneousTransform, table: DHTable,
               ik_opts: IKOptions = IKOptions(), limits: KinodynamicLimits | None = None,
               desired: list[HomogeneousTransform] | None = None,
               joint_rate_limit: float | None = None) -> CompensationResult:
    """Rewrite the arm joints so the tool holds its planned pose under the simulated tilt.

    ``desired`` defaults to :func:`desired_ee_poses` of ``traj``; passing it explicitly
    lets an already-compensated trajectory be checked against the original targets.
    Each IK is seeded with the planned joints shifted by the previous sample's
    correction, so an untilted sample reproduces the planned joints exactly.
    """
    attitude = _attitude(enriched)
    n = len(traj)
    if attitude.shape[0] != n:
        raise ValueError(f"attitude stream has {attitude.shape[0]} samples, trajectory has {n}")
    if desired is None:
        desired = desired_ee_poses(traj, t_b_l0, table)
    if len(desired) != n:
        raise ValueError("desired pose list length differs from trajectory")
    m = table.actuated_count
    planned = traj.q[:, 4:]
    q_out = np.empty_like(planned)
    residuals = np.zeros((n, 2))
    unreachable, clamped = [], []
    correction = np.zeros(m)
    for k in range(n):
        x = traj.q[k]
        t_w_b = base_pose(x[:3], (attitude[k, 0], attitude[k, 1], x[3]))
        target = (t_w_b @ t_b_l0).inverse() @ desired[k]
        q, res = inverse_kinematics(table, target, planned[k] + correction, ik_opts)
        if not table.within_limits(q):
            q = table.clip(q)
            res = pose_error(forward_kinematics(table, q), target)
            clamped.append(k)
        elif not table.within_limits(q, tol=-1e-12):
            clamped.append(k)
        q_out[k] = q
        residuals[k] = res
        if res[0] > ik_opts.accept_tolerance or res[1] > ik_opts.accept_tolerance:
            unreachable.append(k)
        correction = q - planned[k]

    delta = q_out - planned
    if n >= 3:
        d_delta = np.gradient(delta, traj.T_s, axis=0, edge_order=2)
        dd_delta = np.gradient(d_delta, traj.T_s, axis=0, edge_order=2)
    else:
        d_delta = np.zeros_like(delta)
        dd_delta = np.zeros_like(delta)
    out = traj.copy()
    out.q[:, 4:] = q_out
    out.dq[:, 4:] = traj.dq[:, 4:] + d_delta
    out.ddq[:, 4:] = traj.ddq[:, 4:] + dd_delta

    if joint_rate_limit is None:
        rate = np.asarray(limits.v_max, dtype=float)[4:] if limits is not None else np.full(m, 5.0)
    else:
        rate = np.full(m, float(joint_rate_limit))
    jumps = np.abs(np.diff(q_out, axis=0))
    continuity = [int(k) + 1 for k in np.nonzero(np.any(jumps > rate * traj.T_s * CONTINUITY_SLACK,
                                                            axis=1))[0]]
    audit = limit_audit(out, limits) if limits is not None else {}
    if unreachable:
        log.info("%d of %d samples solved approximately", len(unreachable), n)
    return CompensationResult(out, residuals, len(unreachable), unreachable, clamped,
                              continuity, audit)


@dataclass
class ErrorTrace:
    """Per-sample pose error of the executed tool against its desired pose."""
    translation: np.ndarray
    rotation: np.ndarray
    z: np.ndarray  # signed, executed minus desired

    def __len__(self) -> int:
        return len(self.z)

    def peak_z(self) -> float:
        return float(np.max(np.abs(self.z))) if len(self.z) else 0.0

    def rms_translation(self) -> float:
        return float(np.sqrt(np.mean(self.translation ** 2))) if len(self.z) else 0.0


def evaluate_tracking(planned_ee: list[HomogeneousTransform], executed, q_stream,
                      t_b_l0: HomogeneousTransform, table: DHTable) -> ErrorTrace:
    """Compare desired tool poses with those implied by executed base states and joints."""
    if isinstance(executed, SimTrace):
        states = executed.states()
    else:
        states = list(executed)
    q_stream = np.asarray(q_stream, dtype=float)
    n = len(planned_ee)
    if len(states) != n or q_stream.shape[0] != n:
        raise ValueError("planned poses, executed states and joint stream differ in length")
    tr = np.zeros(n)
    rot = np.zeros(n)
    z = np.zeros(n)
    for k, (want, s) in enumerate(zip(planned_ee, states)):
        got = ee_pose(s.p, s.euler, t_b_l0, table, q_stream[k])
        tr[k], rot[k] = pose_error(got, want)
        z[k] = got.matrix[2, 3] - want.matrix[2, 3]
    return ErrorTrace(tr, rot, z)
