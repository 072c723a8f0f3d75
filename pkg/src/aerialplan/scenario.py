"""Scenario files: one JSON document with every input of a pipeline run.

Units are SI and angles radians. Unknown keys are rejected; optional sections fall
back to the defaults below.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .collision import Box, Cylinder, ObstacleSet, RobotGeometry
from .compensation import LIMIT_AUDIT_SLACK
from .dynamics_sim import ControllerGains, DisturbanceModel, MultirotorParams, hexarotor_mixing
from .exceptions import ScenarioError
from .kinematics import DHRow, DHTable, HomogeneousTransform, IKOptions, default_arm
from .path_planner import Bounds, RRTStarParams, default_bounds
from .topp_ra import KinodynamicLimits

SCHEMA_VERSION = 1
SHIPPED = ("insertion_line", "labyrinth")

Vec3 = tuple[float, float, float]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BoxModel(_Model):
    lower: Vec3
    upper: Vec3


class CylinderModel(_Model):
    center: tuple[float, float]
    radius: float = Field(gt=0)
    z_min: float
    z_max: float


class ObstacleModel(_Model):
    boxes: list[BoxModel] = []
    cylinders: list[CylinderModel] = []
    inflation: float = Field(0.05, ge=0)


class WorkspaceModel(_Model):
    lower: Vec3 = (-5.0, -5.0, 0.3)
    upper: Vec3 = (5.0, 5.0, 3.0)


class DHRowModel(_Model):
    theta: float = 0.0
    d: float = 0.0
    alpha: float = 0.0
    a: float = 0.0
    kind: Literal["rotational", "prismatic", "fixed"] = "rotational"


class MountModel(_Model):
    xyz: Vec3 = (0.08, 0.0, 0.04)
    rpy: Vec3 = (0.0, 0.0, -np.pi / 2)


class ArmModel(_Model):
    dh: Optional[list[DHRowModel]] = None
    lower: Optional[list[float]] = None
    upper: Optional[list[float]] = None
    mount: MountModel = MountModel()
    link_radius: float = Field(0.02, ge=0)


class LimitsModel(_Model):
    v_max: list[float]
    a_max: list[float]


class MultirotorModel(_Model):
    mass: float = Field(gt=0)
    inertia: Vec3
    arm_length: float = Field(0.3, gt=0)
    drag_ratio: float = Field(0.016, gt=0)
    mixing: Optional[list[list[float]]] = None
    f_max: float = Field(12.0, gt=0)
    gravity: float = 9.81
    body_radius: float = Field(0.45, gt=0)
    max_tilt: float = Field(0.6, gt=0)
    workspace_bound: float = Field(1000.0, gt=0)


class ControllerModel(_Model):
    kp_pos: Vec3 = ControllerGains.kp_pos
    kd_pos: Vec3 = ControllerGains.kd_pos
    ki_pos: Vec3 = ControllerGains.ki_pos
    integral_limit: float = ControllerGains.integral_limit
    max_accel: float = ControllerGains.max_accel
    max_tilt: float = ControllerGains.max_tilt
    kp_att: Vec3 = ControllerGains.kp_att
    kd_att: Vec3 = ControllerGains.kd_att
    joint_bandwidth: float = ControllerGains.joint_bandwidth
    joint_rate_limit: float = ControllerGains.joint_rate_limit


class SamplingModel(_Model):
    T_s: float = Field(0.01, gt=0)
    dt_sim: float = Field(0.001, gt=0, le=0.02)
    n_grid: int = Field(1000, ge=10)


class PlannerModel(_Model):
    step: float = Field(RRTStarParams.step, gt=0)
    goal_bias: float = Field(RRTStarParams.goal_bias, ge=0, le=1)
    gamma: float = Field(RRTStarParams.gamma, gt=0)
    iterations: int = Field(RRTStarParams.iterations, ge=1)
    max_iterations: int = Field(RRTStarParams.max_iterations, ge=1)
    resolution: float = Field(RRTStarParams.resolution, gt=0)
    position_weight: float = Field(RRTStarParams.position_weight, gt=0)
    yaw_weight: float = Field(RRTStarParams.yaw_weight, gt=0)
    joint_weight: float = Field(RRTStarParams.joint_weight, gt=0)
    shortcut_rounds: int = Field(RRTStarParams.shortcut_rounds, ge=0)
    # optional narrower sampling box for the arm joints
    joint_lower: Optional[list[float]] = None
    joint_upper: Optional[list[float]] = None


class IKModel(_Model):
    tolerance: float = Field(IKOptions.tolerance, gt=0)
    max_iterations: int = Field(IKOptions.max_iterations, ge=1)
    damping: float = Field(IKOptions.damping, ge=0)
    position_weight: float = Field(IKOptions.position_weight, ge=0)
    rotation_weight: float = Field(IKOptions.rotation_weight, ge=0)
    accept_tolerance: float = Field(IKOptions.accept_tolerance, gt=0)


class DisturbanceSection(_Model):
    force_bound: float = Field(0.2, ge=0)
    torque_bound: float = Field(0.02, ge=0)
    step_fraction: float = Field(0.1, ge=0)


class SeedsModel(_Model):
    planner: int = Field(0, ge=0)
    disturbance: int = Field(0, ge=0)


class TubeModel(_Model):
    """Insertion target, geometry only: a hollow tube the tool should enter."""
    mouth: Vec3
    axis: Vec3 = (1.0, 0.0, 0.0)
    diameter: float = Field(gt=0)
    length: float = Field(gt=0)


class Scenario(_Model):
    schema_version: int
    name: str = "scenario"
    waypoints: list[list[float]]
    obstacles: ObstacleModel = ObstacleModel()
    workspace: WorkspaceModel = WorkspaceModel()
    arm: ArmModel = ArmModel()
    limits: LimitsModel
    multirotor: MultirotorModel
    controller: ControllerModel = ControllerModel()
    sampling: SamplingModel = SamplingModel()
    planner: PlannerModel = PlannerModel()
    ik: IKModel = IKModel()
    disturbance: DisturbanceSection = DisturbanceSection()
    seeds: SeedsModel = SeedsModel()
    tube: Optional[TubeModel] = None
    limit_audit_slack: float = Field(LIMIT_AUDIT_SLACK, ge=0)
    output_dir: str = "out"

    @field_validator("schema_version")
    @classmethod
    def _known_version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "Scenario":
        table = build_table(self.arm)
        dim = 4 + table.actuated_count
        if len(self.waypoints) < 2:
            raise ValueError("at least two waypoints are required")
        for i, w in enumerate(self.waypoints):
            if len(w) != dim:
                raise ValueError(f"waypoint {i} has dimension {len(w)}, expected {dim}")
        for name in ("v_max", "a_max"):
            vals = getattr(self.limits, name)
            if len(vals) != dim:
                raise ValueError(f"limits.{name} has {len(vals)} entries, expected {dim}")
            if min(vals) <= 0:
                raise ValueError(f"limits.{name} entries must be positive")
        m = table.actuated_count
        for name in ("joint_lower", "joint_upper"):
            vals = getattr(self.planner, name)
            if vals is not None and len(vals) != m:
                raise ValueError(f"planner.{name} has {len(vals)} entries, expected {m}")
        if self.multirotor.mixing is not None:
            k = np.asarray(self.multirotor.mixing, dtype=float)
            if k.ndim != 2 or k.shape[0] != 4 or np.linalg.matrix_rank(k) < 4:
                raise ValueError("multirotor.mixing must be a full-rank 4 x n_p matrix")
        ratio = self.sampling.T_s / self.sampling.dt_sim
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("sampling.dt_sim must divide sampling.T_s")
        return self


def build_table(arm: ArmModel) -> DHTable:
    if arm.dh is None:
        base = default_arm()
        rows = base.rows
    else:
        rows = tuple(DHRow(r.theta, r.d, r.alpha, r.a, r.kind) for r in arm.dh)
    lower = tuple(arm.lower) if arm.lower is not None else None
    upper = tuple(arm.upper) if arm.upper is not None else None
    try:
        return DHTable(rows, lower, upper)
    except ValueError as exc:
        raise ValueError(f"arm: {exc}") from None


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"{source}: {_format_errors(exc)}") from None


def shipped_path(name: str) -> Path:
    return Path(str(resources.files("aerialplan") / "data" / f"{name}.json"))


def resolve_scenario_path(ref: str | Path) -> Path:
    """A file path, or the name of a shipped scenario."""
    p = Path(ref)
    if p.exists():
        return p
    if str(ref) in SHIPPED:
        return shipped_path(str(ref))
    raise ScenarioError(f"scenario file not found: {ref}")


def load_scenario(path: str | Path) -> Scenario:
    p = resolve_scenario_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc}") from None
    return parse_scenario(text, str(p))


@dataclass(frozen=True)
class Setup:
    """Domain objects built from a scenario."""
    table: DHTable
    t_b_l0: HomogeneousTransform
    geometry: RobotGeometry
    obstacles: ObstacleSet
    bounds: Bounds
    planner: RRTStarParams
    limits: KinodynamicLimits
    multirotor: MultirotorParams
    gains: ControllerGains
    ik: IKOptions
    disturbance: DisturbanceModel
    waypoints: np.ndarray
    T_s: float
    dt_sim: float
    n_grid: int
    max_tilt: float


def build_setup(sc: Scenario, seed_planner: int | None = None,
                seed_disturbance: int | None = None) -> Setup:
    table = build_table(sc.arm)
    t_b_l0 = HomogeneousTransform.from_xyz_rpy(sc.arm.mount.xyz, sc.arm.mount.rpy)
    geom = RobotGeometry(table, t_b_l0, sc.multirotor.body_radius, sc.arm.link_radius)
    obstacles = ObstacleSet(
        tuple(Box(tuple(b.lower), tuple(b.upper)) for b in sc.obstacles.boxes),
        tuple(Cylinder(tuple(c.center), c.radius, c.z_min, c.z_max) for c in sc.obstacles.cylinders),
        sc.obstacles.inflation,
    )
    bounds = default_bounds(geom, sc.workspace.lower, sc.workspace.upper)
    pl = sc.planner
    if pl.joint_lower is not None or pl.joint_upper is not None:
        lo = list(bounds.lower)
        hi = list(bounds.upper)
        if pl.joint_lower is not None:
            lo[4:] = pl.joint_lower
        if pl.joint_upper is not None:
            hi[4:] = pl.joint_upper
        bounds = Bounds(tuple(lo), tuple(hi))
    planner = RRTStarParams(pl.step, pl.goal_bias, pl.gamma, pl.iterations, pl.max_iterations,
                            pl.resolution, pl.position_weight, pl.yaw_weight, pl.joint_weight,
                            pl.shortcut_rounds)
    mr = sc.multirotor
    mixing = np.asarray(mr.mixing, dtype=float) if mr.mixing is not None else \
        hexarotor_mixing(mr.arm_length, mr.drag_ratio)
    params = MultirotorParams(mr.mass, tuple(mr.inertia), mixing, mr.f_max, mr.gravity,
                              mr.workspace_bound)
    c = sc.controller
    gains = ControllerGains(tuple(c.kp_pos), tuple(c.kd_pos), tuple(c.ki_pos), c.integral_limit,
                            c.max_accel, c.max_tilt, tuple(c.kp_att), tuple(c.kd_att),
                            c.joint_bandwidth, c.joint_rate_limit)
    ik = IKOptions(sc.ik.tolerance, sc.ik.max_iterations, sc.ik.damping, sc.ik.position_weight,
                   sc.ik.rotation_weight, sc.ik.accept_tolerance)
    d = sc.disturbance
    seed_d = sc.seeds.disturbance if seed_disturbance is None else seed_disturbance
    disturbance = DisturbanceModel(d.force_bound, d.torque_bound, d.step_fraction, seed_d)
    return Setup(table, t_b_l0, geom, obstacles, bounds, planner,
                 KinodynamicLimits(np.array(sc.limits.v_max), np.array(sc.limits.a_max)),
                 params, gains, ik, disturbance, np.asarray(sc.waypoints, dtype=float),
                 sc.sampling.T_s, sc.sampling.dt_sim, sc.sampling.n_grid, mr.max_tilt)
