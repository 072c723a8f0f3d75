"""Plan, time-parametrize, simulate, compensate and evaluate, one stage at a time.

Every stage reads its inputs from the output directory and writes its artifacts
there, so running the stages in one call or in separate calls gives the same files.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts as art
from .collision import configs_free
from .compensation import (compensate, desired_ee_poses, ee_pose, evaluate_tracking,
                           limit_audit)
from .dynamics_sim import feasibility_check, flat_attitude, simulate_tracking
from .exceptions import FlatnessSingularity, ScenarioError
from .path_planner import audit_path, path_length, plan_path, shortcut_path, waypoint_indices
from .scenario import Scenario, Setup, build_setup
from .topp_ra import time_parametrize

log = logging.getLogger(__name__)

STAGES = ("plan", "parametrize", "simulate", "compensate", "evaluate")


class StageFailure(Exception):
    """A stage raised; carries the stage name and the exit code of the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    out: Path
    seed_planner: int
    seed_disturbance: int
    compensation: bool = True

    @classmethod
    def from_scenario(cls, sc: Scenario, out=None, seed_planner=None, seed_disturbance=None,
                      compensation: bool = True) -> "RunConfig":
        return cls(sc, Path(out if out is not None else sc.output_dir),
                   sc.seeds.planner if seed_planner is None else seed_planner,
                   sc.seeds.disturbance if seed_disturbance is None else seed_disturbance,
                   compensation)

    def setup(self) -> Setup:
        return build_setup(self.scenario, self.seed_planner, self.seed_disturbance)


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(a ** 2))) if a.size else 0.0


def stage_plan(cfg: RunConfig, s: Setup) -> dict:
    path = plan_path(s.waypoints, s.obstacles, s.geometry, s.bounds, s.planner, cfg.seed_planner)
    if len(path) > len(s.waypoints):
        keep = waypoint_indices(path, s.waypoints)
        path = shortcut_path(path, s.obstacles, s.geometry, s.planner, seed=cfg.seed_planner,
                             keep=keep)
    art.save_path(cfg.out / art.PATH_CSV, path)
    weights = np.array([s.planner.position_weight] * 3 + [s.planner.yaw_weight]
                       + [s.planner.joint_weight] * s.table.actuated_count)
    return {
        "points": int(len(path)),
        "weighted_length": path_length(path, weights),
        "collision_free": audit_path(path, s.obstacles, s.geometry, s.planner.resolution),
        "seed": cfg.seed_planner,
    }


def stage_parametrize(cfg: RunConfig, s: Setup) -> dict:
    path = art.load_path(cfg.out / art.PATH_CSV)
    traj, par = time_parametrize(path, s.limits, s.T_s, s.n_grid)
    art.save_trajectory(cfg.out / art.TRAJECTORY_CSV, traj)
    feas = feasibility_check(traj, s.multirotor, s.max_tilt)
    return {
        "duration": par.duration,
        "samples": len(traj),
        "feasibility": feas.summary(),
        "limit_audit": limit_audit(traj, s.limits, cfg.scenario.limit_audit_slack),
        # the spline may cut corners of the planned polyline; check the samples themselves
        "samples_collision_free": bool(np.all(configs_free(traj.q, s.obstacles, s.geometry))),
    }


def _reference_attitude(traj, s: Setup) -> np.ndarray:
    out = np.full((len(traj), 2), np.nan)
    for k in range(len(traj)):
        try:
            out[k] = flat_attitude(traj.ddq[k, :3], traj.q[k, 3], s.multirotor)[:2]
        except FlatnessSingularity:
            pass
    return out


def _simulate(traj, s: Setup, path: Path) -> tuple:
    trace = simulate_tracking(traj, s.multirotor, s.gains, s.dt_sim, s.disturbance)
    ref = _reference_attitude(traj, s)
    art.save_sim_trace(path, trace, traj, ref)
    err = trace.p - traj.q[:, :3]
    summary = {
        "position_rms": float(np.sqrt(np.mean(np.sum(err ** 2, axis=1)))),
        "position_max": float(np.max(np.linalg.norm(err, axis=1))),
        "peak_roll": float(np.max(np.abs(trace.euler[:, 0]))),
        "peak_pitch": float(np.max(np.abs(trace.euler[:, 1]))),
        "peak_pitch_predicted": float(np.nanmax(np.abs(ref[:, 1]))),
        "joint_tracking_max": float(np.max(np.abs(trace.q - traj.q[:, 4:]))),
        "disturbance_seed": int(s.disturbance.seed),
    }
    return trace, summary


def stage_simulate(cfg: RunConfig, s: Setup) -> dict:
    traj = art.load_trajectory(cfg.out / art.TRAJECTORY_CSV, s.T_s)
    return _simulate(traj, s, cfg.out / art.SIM_TRACE_CSV)[1]


def stage_compensate(cfg: RunConfig, s: Setup) -> dict:
    traj = art.load_trajectory(cfg.out / art.TRAJECTORY_CSV, s.T_s)
    trace = art.load_sim_trace(cfg.out / art.SIM_TRACE_CSV)
    res = compensate(traj, trace, s.t_b_l0, s.table, s.ik, s.limits,
                     joint_rate_limit=s.gains.joint_rate_limit)
    res.limit_audit = limit_audit(res.compensated, s.limits, cfg.scenario.limit_audit_slack)
    art.save_trajectory(cfg.out / art.COMPENSATED_CSV, res.compensated)
    art.write_csv(cfg.out / art.RESIDUALS_CSV, ["t", "translation_residual", "rotation_residual"],
                  np.column_stack([traj.t, res.residuals]))
    _, sim_summary = _simulate(res.compensated, s, cfg.out / art.SIM_TRACE_COMPENSATED_CSV)
    out = res.summary()
    out["simulation"] = sim_summary
    return out


def _tube_check(tube, desired, executed_ee) -> dict | None:
    if tube is None:
        return None
    axis = np.asarray(tube.axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    mouth = np.asarray(tube.mouth, dtype=float)
    want = np.array([d.matrix[:3, 3] for d in desired])
    axial = (want - mouth) @ axis
    inside = (axial >= 0.0) & (axial <= tube.length)
    if not np.any(inside):
        return {"samples_inside": 0, "max_lateral_offset": 0.0, "clear": True}
    got = executed_ee[inside] - mouth
    lateral = got - np.outer(got @ axis, axis)
    worst = float(np.max(np.linalg.norm(lateral, axis=1)))
    return {"samples_inside": int(np.sum(inside)), "max_lateral_offset": worst,
            "clear": worst < 0.5 * tube.diameter}


def stage_evaluate(cfg: RunConfig, s: Setup) -> dict:
    traj = art.load_trajectory(cfg.out / art.TRAJECTORY_CSV, s.T_s)
    trace = art.load_sim_trace(cfg.out / art.SIM_TRACE_CSV)
    desired = desired_ee_poses(traj, s.t_b_l0, s.table)
    e_nc = evaluate_tracking(desired, trace, trace.q, s.t_b_l0, s.table)

    def ee_positions(tr):
        return np.array([ee_pose(tr.p[k], tr.euler[k], s.t_b_l0, s.table, tr.q[k]).matrix[:3, 3]
                         for k in range(len(tr))])

    peak_pitch = float(np.max(np.abs(trace.euler[:, 1])))
    lever_bound = 0.8 * s.table.reach * np.sin(peak_pitch)
    report = {
        "compensation": cfg.compensation,
        "peak_pitch": peak_pitch,
        "lever_arm_bound": float(lever_bound),
        "uncompensated": {
            "peak_z": e_nc.peak_z(),
            "rms_translation": e_nc.rms_translation(),
            "peak_translation": float(np.max(e_nc.translation)),
            "peak_rotation": float(np.max(e_nc.rotation)),
            "tube": _tube_check(cfg.scenario.tube, desired, ee_positions(trace)),
        },
        "uncompensated_meets_lever_bound": bool(e_nc.peak_z() >= lever_bound),
    }
    if cfg.compensation:
        trace_c = art.load_sim_trace(cfg.out / art.SIM_TRACE_COMPENSATED_CSV)
        e_c = evaluate_tracking(desired, trace_c, trace_c.q, s.t_b_l0, s.table)
        executed = e_c
        z_c = e_c.z
        ratio = e_c.peak_z() / e_nc.peak_z() if e_nc.peak_z() > 0 else 0.0
        report["compensated"] = {
            "peak_z": e_c.peak_z(),
            "rms_translation": e_c.rms_translation(),
            "peak_translation": float(np.max(e_c.translation)),
            "peak_rotation": float(np.max(e_c.rotation)),
            "tube": _tube_check(cfg.scenario.tube, desired, ee_positions(trace_c)),
        }
        report["peak_z_ratio"] = ratio
        report["z_reduction"] = e_nc.peak_z() - e_c.peak_z()
    else:
        executed = e_nc
        z_c = np.full(len(traj), np.nan)
    art.save_errors(cfg.out / art.ERRORS_CSV, traj.t, executed.translation, executed.rotation,
                    e_nc.z, z_c)
    return report


STAGE_FUNCS = {
    "plan": stage_plan,
    "parametrize": stage_parametrize,
    "simulate": stage_simulate,
    "compensate": stage_compensate,
    "evaluate": stage_evaluate,
}


def run_pipeline(cfg: RunConfig, stages=STAGES) -> dict:
    """Run ``stages`` in pipeline order; raises :class:`StageFailure` on the first error.

    Artifacts written before the failure stay on disk.
    """
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ScenarioError(f"unknown stages {sorted(unknown)}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    s = cfg.setup()
    art.update_report(cfg.out, "run", {
        "scenario": cfg.scenario.name,
        "seed_planner": cfg.seed_planner,
        "seed_disturbance": cfg.seed_disturbance,
        "compensation": cfg.compensation,
    })
    report = {}
    for name in STAGES:
        if name not in stages:
            continue
        if name == "compensate" and not cfg.compensation:
            continue
        log.info("running stage %s", name)
        try:
            section = STAGE_FUNCS[name](cfg, s)
        except Exception as exc:
            raise StageFailure(name, exc) from exc
        report = art.update_report(cfg.out, name, section)
    return report


def _executed_z(errors: np.ndarray) -> np.ndarray:
    z_c = errors[:, 4]
    return errors[:, 3] if np.all(np.isnan(z_c)) else z_c


def compare_runs(run_a: Path, run_b: Path) -> tuple[dict, np.ndarray]:
    """Per-sample deltas (b minus a) of the executed tool errors and a peak/RMS summary.

    ``z_reduction`` is positive when run ``b`` has the smaller peak z error.
    """
    a = art.load_errors(Path(run_a) / art.ERRORS_CSV)
    b = art.load_errors(Path(run_b) / art.ERRORS_CSV)
    if a.shape != b.shape or not np.array_equal(a[:, 0], b[:, 0]):
        raise art.ArtifactError("error traces are not aligned on the same time stamps")
    za, zb = _executed_z(a), _executed_z(b)
    deltas = np.column_stack([a[:, 0], b[:, 1] - a[:, 1], b[:, 2] - a[:, 2], zb - za])
    summary = {
        "samples": int(len(a)),
        "peak_z_a": float(np.max(np.abs(za))) if len(a) else 0.0,
        "peak_z_b": float(np.max(np.abs(zb))) if len(b) else 0.0,
        "rms_z_a": _rms(za),
        "rms_z_b": _rms(zb),
        "rms_translation_a": _rms(a[:, 1]),
        "rms_translation_b": _rms(b[:, 1]),
        "max_abs_delta_translation": float(np.max(np.abs(deltas[:, 1]))) if len(a) else 0.0,
        "max_abs_delta_rotation": float(np.max(np.abs(deltas[:, 2]))) if len(a) else 0.0,
        "max_abs_delta_z": float(np.max(np.abs(deltas[:, 3]))) if len(a) else 0.0,
    }
    summary["z_reduction"] = summary["peak_z_a"] - summary["peak_z_b"]
    return summary, deltas
