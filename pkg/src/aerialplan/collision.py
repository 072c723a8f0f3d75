"""Sphere/capsule vs. box/cylinder clearance tests for the aerial manipulator.

The vehicle is a bounding sphere at ``p_B``; every arm link is a capsule between
consecutive DH frame origins, evaluated with zero roll and pitch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import DHTable, HomogeneousTransform, frame_origins_batch, wrap_angle

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Box:
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]

    def __post_init__(self):
        if np.any(np.asarray(self.upper) < np.asarray(self.lower)):
            raise ValueError("box upper corner below lower corner")


@dataclass(frozen=True)
class Cylinder:
    """Solid z-aligned cylinder."""
    center: tuple[float, float]
    radius: float
    z_min: float
    z_max: float


@dataclass(frozen=True)
class ObstacleSet:
    boxes: tuple[Box, ...] = ()
    cylinders: tuple[Cylinder, ...] = ()
    inflation: float = 0.0

    def __post_init__(self):
        if self.inflation < 0:
            raise ValueError("inflation must be non-negative")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "cylinders", tuple(self.cylinders))

    def __len__(self):
        return len(self.boxes) + len(self.cylinders)

    def inflated(self, extra: float) -> "ObstacleSet":
        return ObstacleSet(self.boxes, self.cylinders, self.inflation + extra)

    def _arrays(self):
        if self.boxes:
            lo = np.array([b.lower for b in self.boxes], dtype=float)
            hi = np.array([b.upper for b in self.boxes], dtype=float)
        else:
            lo = hi = np.zeros((0, 3))
        if self.cylinders:
            cyl = np.array([[c.center[0], c.center[1], c.radius, c.z_min, c.z_max]
                            for c in self.cylinders], dtype=float)
        else:
            cyl = np.zeros((0, 5))
        return lo, hi, cyl


@dataclass(frozen=True)
class RobotGeometry:
    table: DHTable
    t_b_l0: HomogeneousTransform = field(default_factory=HomogeneousTransform.identity)
    body_radius: float = 0.4
    link_radius: float = 0.02

    @property
    def max_reach(self) -> float:
        """Bound on the distance of any robot point from the body center."""
        return float(np.linalg.norm(self.t_b_l0.translation)) + self.table.reach + self.link_radius


def _box_dist(p, lo, hi):
    return np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=-1)


def _cyl_dist(p, cyl):
    radial = np.hypot(p[..., 0] - cyl[..., 0], p[..., 1] - cyl[..., 1]) - cyl[..., 2]
    dz = np.maximum(np.maximum(cyl[..., 3] - p[..., 2], p[..., 2] - cyl[..., 4]), 0.0)
    return np.hypot(np.maximum(radial, 0.0), dz)


def point_distances(points: np.ndarray, obstacles: ObstacleSet) -> np.ndarray:
    """Unsigned distance from each point to each primitive, shape (n, n_obstacles)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)[:, None, :]
    lo, hi, cyl = obstacles._arrays()
    return np.concatenate([_box_dist(pts, lo, hi), _cyl_dist(pts, cyl)], axis=1)


def _golden_min(f, shape, iterations):
    lo = np.zeros(shape)
    hi = np.ones(shape)
    # keep every probe: on a flat zero stretch the bracket drifts to its edge
    best = np.minimum(f(lo), f(hi))
    for _ in range(iterations):
        span = _GOLDEN * (hi - lo)
        x1, x2 = hi - span, lo + span
        f1, f2 = f(x1), f(x2)
        best = np.minimum(best, np.minimum(f1, f2))
        left = f1 > f2
        lo = np.where(left, x1, lo)
        hi = np.where(left, hi, x2)
    return np.minimum(best, f(0.5 * (lo + hi)))


def _pair_distances(a, b, prim, obstacles: ObstacleSet, iterations: int = 40) -> np.ndarray:
    """Segment-to-primitive distance for explicit (segment, primitive index) pairs.

    Distance to a convex set is convex along a segment, so golden-section search on
    the segment parameter finds the global minimum.
    """
    lo_box, hi_box, cyl = obstacles._arrays()
    nb = lo_box.shape[0]
    out = np.empty(a.shape[0])
    d = b - a
    is_box = prim < nb
    if np.any(is_box):
        aa, dd, j = a[is_box], d[is_box], prim[is_box]
        lo, hi = lo_box[j], hi_box[j]
        out[is_box] = _golden_min(lambda t: _box_dist(aa + t[:, None] * dd, lo, hi),
                                  aa.shape[0], iterations)
    if not np.all(is_box):
        aa, dd, j = a[~is_box], d[~is_box], prim[~is_box] - nb
        c = cyl[j]
        out[~is_box] = _golden_min(lambda t: _cyl_dist(aa + t[:, None] * dd, c),
                                   aa.shape[0], iterations)
    return out


def segment_distances(a: np.ndarray, b: np.ndarray, obstacles: ObstacleSet) -> np.ndarray:
    """Minimum distance from segments ``a[i]-b[i]`` to each primitive, shape (n, n_obs)."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    n, k = a.shape[0], len(obstacles)
    if n == 0 or k == 0:
        return np.zeros((n, k))
    seg = np.repeat(np.arange(n), k)
    prim = np.tile(np.arange(k), n)
    return _pair_distances(a[seg], b[seg], prim, obstacles).reshape(n, k)


def robot_points(x_batch: np.ndarray, geom: RobotGeometry) -> tuple[np.ndarray, np.ndarray]:
    """World positions of body center and arm frame origins for control-space points.

    Returns ``(centers (n, 3), chain (n, rows + 2, 3))`` where ``chain`` starts at the
    body center, then the mount frame L0, then every DH frame origin.
    """
    x = np.atleast_2d(np.asarray(x_batch, dtype=float))
    centers = x[:, :3]
    psi = x[:, 3]
    local = frame_origins_batch(geom.table, x[:, 4:])
    m = geom.t_b_l0.matrix
    in_body = local @ m[:3, :3].T + m[:3, 3]
    in_body = np.concatenate([np.zeros((x.shape[0], 1, 3)), in_body], axis=1)
    c, s = np.cos(psi), np.sin(psi)
    rot = np.zeros((x.shape[0], 3, 3))
    rot[:, 0, 0], rot[:, 0, 1] = c, -s
    rot[:, 1, 0], rot[:, 1, 1] = s, c
    rot[:, 2, 2] = 1.0
    chain = np.einsum("nij,nkj->nki", rot, in_body) + centers[:, None, :]
    return centers, chain


def configs_free(x_batch: np.ndarray, obstacles: ObstacleSet, geom: RobotGeometry) -> np.ndarray:
    """Boolean array, True where the configuration clears every inflated primitive."""
    x = np.atleast_2d(np.asarray(x_batch, dtype=float))
    if len(obstacles) == 0:
        return np.ones(x.shape[0], dtype=bool)
    centers, chain = robot_points(x, geom)
    body_ok = np.all(point_distances(centers, obstacles) >= geom.body_radius + obstacles.inflation,
                     axis=1)
    a = chain[:, :-1, :]
    b = chain[:, 1:, :]
    clearance = geom.link_radius + obstacles.inflation
    # broad phase: a capsule whose bounding sphere clears a primitive cannot touch it
    mid = 0.5 * (a + b)
    half = 0.5 * np.linalg.norm(b - a, axis=-1)
    d_mid = point_distances(mid.reshape(-1, 3), obstacles).reshape(mid.shape[0], mid.shape[1], -1)
    maybe = (d_mid - half[..., None] < clearance) & body_ok[:, None, None]
    ok = body_ok.copy()
    if np.any(maybe):
        cfg, link, prim = np.nonzero(maybe)
        dist = _pair_distances(a[cfg, link], b[cfg, link], prim, obstacles)
        bad = np.zeros(x.shape[0], dtype=bool)
        np.logical_or.at(bad, cfg, dist < clearance)
        ok &= ~bad
    return ok


def collision_check_config(x, obstacles: ObstacleSet, geom: RobotGeometry) -> bool:
    return bool(configs_free(np.asarray(x, dtype=float)[None, :], obstacles, geom)[0])


def interpolate(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Straight control-space interpolation; yaw takes the shortest arc."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    delta = b - a
    delta[3] = wrap_angle(delta[3])
    out = a + np.asarray(t, dtype=float)[:, None] * delta
    out[:, 3] = wrap_angle(out[:, 3])
    return out


def sweep_bound(a, b, geom: RobotGeometry) -> float:
    """Upper bound on how far any robot point moves along the segment a -> b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dp = float(np.linalg.norm(b[:3] - a[:3]))
    angular = abs(float(wrap_angle(b[3] - a[3]))) + float(np.sum(np.abs(b[4:] - a[4:])))
    return dp + geom.max_reach * angular


def segment_samples(a, b, geom: RobotGeometry, resolution: float) -> np.ndarray:
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    n = max(int(np.ceil(sweep_bound(a, b, geom) / resolution)), 1)
    return interpolate(a, b, np.linspace(0.0, 1.0, n + 1))


def collision_check_segment(a, b, obstacles: ObstacleSet, geom: RobotGeometry,
                            resolution: float) -> bool:
    """True iff every sample along a -> b is collision-free.

    Samples are spaced so that no robot point moves more than ``resolution`` between
    consecutive checks.
    """
    if len(obstacles) == 0:
        return True
    return bool(np.all(configs_free(segment_samples(a, b, geom, resolution), obstacles, geom)))
