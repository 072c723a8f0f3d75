"""Rigid-body transforms, DH forward kinematics and damped least-squares IK.

The manipulator is described by standard Denavit-Hartenberg rows; each row maps
frame ``i-1`` to frame ``i`` as ``Rot_z(theta) Trans_z(d) Trans_x(a) Rot_x(alpha)``.
Angles are radians, lengths meters. Roll-pitch-yaw follow the intrinsic Z-Y-X
convention, ``R = Rz(psi) @ Ry(theta) @ Rx(phi)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

ROTATIONAL = "rotational"
PRISMATIC = "prismatic"
FIXED = "fixed"
JOINT_KINDS = (ROTATIONAL, PRISMATIC, FIXED)

# compositions between two nearest-orthonormal projections of the rotation block
RENORMALIZE_EVERY = 64


def _project_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


class HomogeneousTransform:
    """4x4 rigid-body pose. Composition with ``@``; immutable by convention."""

    __slots__ = ("matrix", "_depth")

    def __init__(self, matrix: np.ndarray | None = None, _depth: int = 0):
        if matrix is None:
            matrix = np.eye(4)
        m = np.array(matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        if _depth >= RENORMALIZE_EVERY:
            m[:3, :3] = _project_rotation(m[:3, :3])
            _depth = 0
        self.matrix = m
        self._depth = _depth

    @classmethod
    def identity(cls) -> "HomogeneousTransform":
        return cls()

    @classmethod
    def from_parts(cls, rotation=None, translation=None) -> "HomogeneousTransform":
        m = np.eye(4)
        if rotation is not None:
            m[:3, :3] = rotation
        if translation is not None:
            m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy) -> "HomogeneousTransform":
        return cls.from_parts(rpy_matrix(*rpy), xyz)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3].copy()

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3].copy()

    def __matmul__(self, other: "HomogeneousTransform") -> "HomogeneousTransform":
        if not isinstance(other, HomogeneousTransform):
            return NotImplemented
        return HomogeneousTransform(self.matrix @ other.matrix,
                                    _depth=self._depth + other._depth + 1)

    def inverse(self) -> "HomogeneousTransform":
        r = self.matrix[:3, :3]
        m = np.eye(4)
        m[:3, :3] = r.T
        m[:3, 3] = -r.T @ self.matrix[:3, 3]
        return HomogeneousTransform(m, _depth=self._depth)

    def rpy(self) -> np.ndarray:
        return matrix_to_rpy(self.matrix[:3, :3])

    def __repr__(self) -> str:
        return f"HomogeneousTransform(translation={self.matrix[:3, 3].tolist()})"


def rpy_matrix(phi: float, theta: float, psi: float) -> np.ndarray:
    """Rotation matrix for Z-Y-X Euler angles (roll phi, pitch theta, yaw psi)."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def matrix_to_rpy(r: np.ndarray) -> np.ndarray:
    theta = -np.arcsin(np.clip(r[2, 0], -1.0, 1.0))
    phi = np.arctan2(r[2, 1], r[2, 2])
    psi = np.arctan2(r[1, 0], r[0, 0])
    return np.array([phi, theta, psi])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if np.ndim(w) else float(w)


@dataclass(frozen=True)
class DHRow:
    theta: float = 0.0
    d: float = 0.0
    alpha: float = 0.0
    a: float = 0.0
    kind: str = ROTATIONAL

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ValueError(f"unknown joint kind {self.kind!r}")


@dataclass(frozen=True)
class DHTable:
    rows: tuple[DHRow, ...]
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        m = self.actuated_count
        for name in ("lower", "upper"):
            lim = getattr(self, name)
            if lim is not None:
                lim = tuple(float(v) for v in lim)
                if len(lim) != m:
                    raise ValueError(f"{name} joint limits have {len(lim)} entries, expected {m}")
                object.__setattr__(self, name, lim)

    @property
    def actuated_count(self) -> int:
        return sum(1 for r in self.rows if r.kind != FIXED)

    @property
    def reach(self) -> float:
        """Summed link lengths; an upper bound on the EE distance from L0."""
        return float(sum(np.hypot(r.a, r.d) for r in self.rows))

    def clip(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.lower is not None:
            q = np.maximum(q, self.lower)
        if self.upper is not None:
            q = np.minimum(q, self.upper)
        return q

    def within_limits(self, q, tol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        if self.lower is not None and np.any(q < np.asarray(self.lower) - tol):
            return False
        if self.upper is not None and np.any(q > np.asarray(self.upper) + tol):
            return False
        return True


def default_arm(lower=None, upper=None) -> DHTable:
    """Three-joint arm of the shipped scenarios; the last row is the fixed tool offset."""
    return DHTable(rows=(
        DHRow(theta=np.pi / 2, d=0.0, alpha=3 * np.pi / 2, a=0.1365),
        DHRow(theta=0.0, d=0.0, alpha=0.0, a=0.0725),
        DHRow(theta=3 * np.pi / 2, d=0.0, alpha=3 * np.pi / 2, a=0.0),
        DHRow(theta=0.0, d=0.4, alpha=0.0, a=0.0, kind=FIXED),
    ), lower=lower, upper=upper)


def _dh_matrix(theta, d, alpha, a) -> np.ndarray:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def dh_transform(row: DHRow, q: float = 0.0) -> HomogeneousTransform:
    theta, d = row.theta, row.d
    if row.kind == ROTATIONAL:
        theta = theta + q
    elif row.kind == PRISMATIC:
        d = d + q
    return HomogeneousTransform(_dh_matrix(theta, d, row.alpha, row.a))


def _check_q(table: DHTable, q_m) -> np.ndarray:
    q = np.asarray(q_m, dtype=float).reshape(-1)
    if q.size != table.actuated_count:
        raise ValueError(f"joint vector has {q.size} entries, table actuates {table.actuated_count}")
    return q


def _joint_values(table: DHTable, q: np.ndarray) -> list[float]:
    it = iter(q)
    return [0.0 if r.kind == FIXED else float(next(it)) for r in table.rows]


def frames(table: DHTable, q_m) -> list[np.ndarray]:
    """Frame poses L0..Lee relative to L0 as raw 4x4 arrays (first entry is identity)."""
    q = _check_q(table, q_m)
    out = [np.eye(4)]
    for row, qi in zip(table.rows, _joint_values(table, q)):
        out.append(out[-1] @ dh_transform(row, qi).matrix)
    return out


def forward_kinematics(table: DHTable, q_m) -> HomogeneousTransform:
    q = _check_q(table, q_m)
    t = HomogeneousTransform.identity()
    for row, qi in zip(table.rows, _joint_values(table, q)):
        t = t @ dh_transform(row, qi)
    return t


def chain_world_to_ee(t_w_b: HomogeneousTransform, t_b_l0: HomogeneousTransform,
                      table: DHTable, q_m) -> HomogeneousTransform:
    return t_w_b @ t_b_l0 @ forward_kinematics(table, q_m)


def frame_origins_batch(table: DHTable, q_batch: np.ndarray) -> np.ndarray:
    """Origins of L0..Lee for many joint vectors at once, shape (n, rows + 1, 3)."""
    q_batch = np.atleast_2d(np.asarray(q_batch, dtype=float))
    n = q_batch.shape[0]
    if q_batch.shape[1] != table.actuated_count:
        raise ValueError("joint batch has wrong width")
    t = np.broadcast_to(np.eye(4), (n, 4, 4)).copy()
    origins = [t[:, :3, 3].copy()]
    j = 0
    for row in table.rows:
        theta = np.full(n, row.theta)
        d = np.full(n, row.d)
        if row.kind == ROTATIONAL:
            theta = theta + q_batch[:, j]
            j += 1
        elif row.kind == PRISMATIC:
            d = d + q_batch[:, j]
            j += 1
        ct, st = np.cos(theta), np.sin(theta)
        ca, sa = np.cos(row.alpha), np.sin(row.alpha)
        m = np.zeros((n, 4, 4))
        m[:, 0, 0], m[:, 0, 1], m[:, 0, 2], m[:, 0, 3] = ct, -st * ca, st * sa, row.a * ct
        m[:, 1, 0], m[:, 1, 1], m[:, 1, 2], m[:, 1, 3] = st, ct * ca, -ct * sa, row.a * st
        m[:, 2, 1], m[:, 2, 2], m[:, 2, 3] = sa, ca, d
        m[:, 3, 3] = 1.0
        t = t @ m
        origins.append(t[:, :3, 3].copy())
    return np.stack(origins, axis=1)


def rotation_error_vector(r_current: np.ndarray, r_target: np.ndarray) -> np.ndarray:
    """Axis-angle vector taking ``r_current`` onto ``r_target``, in the base frame."""
    return Rotation.from_matrix(r_target @ r_current.T).as_rotvec()


def pose_error(a: HomogeneousTransform, b: HomogeneousTransform) -> tuple[float, float]:
    """(translation error [m], relative rotation angle [rad]) between two poses."""
    dt = float(np.linalg.norm(a.matrix[:3, 3] - b.matrix[:3, 3]))
    rel = a.matrix[:3, :3].T @ b.matrix[:3, :3]
    dr = float(np.linalg.norm(Rotation.from_matrix(rel).as_rotvec()))
    return dt, dr


def jacobian(table: DHTable, fr: Sequence[np.ndarray]) -> np.ndarray:
    """Geometric Jacobian (6 x M) in the L0 frame from precomputed frames."""
    p_ee = fr[-1][:3, 3]
    cols = []
    for i, row in enumerate(table.rows):
        if row.kind == FIXED:
            continue
        z = fr[i][:3, 2]
        if row.kind == ROTATIONAL:
            cols.append(np.concatenate([np.cross(z, p_ee - fr[i][:3, 3]), z]))
        else:
            cols.append(np.concatenate([z, np.zeros(3)]))
    return np.array(cols).T


@dataclass(frozen=True)
class IKOptions:
    tolerance: float = 1e-8
    max_iterations: int = 200
    damping: float = 1e-3
    position_weight: float = 1.0
    rotation_weight: float = 0.5
    # residual above which a solution counts as approximate (compensation bookkeeping)
    accept_tolerance: float = 1e-6
    use_limits: bool = True


def inverse_kinematics(table: DHTable, target: HomogeneousTransform, seed_q,
                       opts: IKOptions = IKOptions()) -> tuple[np.ndarray, tuple[float, float]]:
    """Damped least-squares IK started from ``seed_q``.

    Never raises on non-convergence: the best iterate is returned together with its
    (translation, rotation) residual so callers can decide whether to accept it.
    """
    q = _check_q(table, seed_q).copy()
    if opts.use_limits:
        q = table.clip(q)
    w = np.array([opts.position_weight] * 3 + [opts.rotation_weight] * 3)
    lam2 = opts.damping ** 2
    tgt = target.matrix
    eye = np.eye(q.size)

    def weighted_error(fr):
        e = np.concatenate([tgt[:3, 3] - fr[-1][:3, 3],
                            rotation_error_vector(fr[-1][:3, :3], tgt[:3, :3])])
        return w * e

    fr = frames(table, q)
    ew = weighted_error(fr)
    cost = float(ew @ ew)
    for _ in range(opts.max_iterations):
        if np.sqrt(cost) <= opts.tolerance:
            break
        jw = w[:, None] * jacobian(table, fr)
        step = np.linalg.solve(jw.T @ jw + lam2 * eye, jw.T @ ew)
        # backtrack so the weighted cost never increases
        accepted = False
        alpha = 1.0
        for _ in range(12):
            q_new = q + alpha * step
            if opts.use_limits:
                q_new = table.clip(q_new)
            fr_new = frames(table, q_new)
            ew_new = weighted_error(fr_new)
            cost_new = float(ew_new @ ew_new)
            if cost_new < cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        moved = float(np.max(np.abs(q_new - q)))
        q, fr, ew, cost = q_new, fr_new, ew_new, cost_new
        if moved < 1e-14:
            break
    return q, pose_error(HomogeneousTransform(fr[-1]), target)
