"""RRT* over control-space coordinates ``[x, y, z, psi, q_1..q_M]``.

Roll and pitch are not part of the search space; the vehicle is assumed level
while collision checking. Consecutive waypoint pairs are planned independently and
joined, and a pair whose straight segment is already free yields just its endpoints.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .collision import (ObstacleSet, RobotGeometry, collision_check_segment, configs_free,
                        interpolate, segment_samples)
from .exceptions import InvalidWaypoint, PlanningTimeout
from .kinematics import wrap_angle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Bounds:
    """Sampling box for the search: workspace for ``p_B`` and joint ranges for ``q_M``."""
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("bounds must have equal length and upper >= lower")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        mask = np.ones(x.size, dtype=bool)
        mask[3] = False  # yaw is periodic
        return bool(np.all(x[mask] >= lo[mask] - tol) and np.all(x[mask] <= hi[mask] + tol))


@dataclass(frozen=True)
class RRTStarParams:
    step: float = 0.3
    goal_bias: float = 0.1
    gamma: float = 2.0
    # the search keeps refining until ``iterations`` samples have been drawn, and gives
    # up when no connection exists after ``max_iterations``
    iterations: int = 1500
    max_iterations: int = 20000
    resolution: float = 0.05
    position_weight: float = 1.0
    yaw_weight: float = 0.5
    joint_weight: float = 0.3
    shortcut_rounds: int = 200


def metric_weights(params: RRTStarParams, m: int) -> np.ndarray:
    return np.array([params.position_weight] * 3 + [params.yaw_weight] + [params.joint_weight] * m)


def control_distance(a, b, weights: np.ndarray) -> np.ndarray:
    """Weighted Euclidean distance with wrapped yaw; ``a`` may be a batch."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    d = np.array(d, dtype=float)
    d[..., 3] = wrap_angle(d[..., 3])
    return np.sqrt(np.sum((d * weights) ** 2, axis=-1))


def path_length(points, weights: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(control_distance(pts[:-1], pts[1:], weights)))


class _Tree:
    def __init__(self, root: np.ndarray, capacity: int):
        self.nodes = np.empty((capacity + 2, root.size))
        self.parent = np.full(capacity + 2, -1, dtype=np.int64)
        self.cost = np.zeros(capacity + 2)
        self.children: list[list[int]] = [[]]
        self.nodes[0] = root
        self.n = 1

    def add(self, x: np.ndarray, parent: int, cost: float) -> int:
        i = self.n
        self.nodes[i] = x
        self.parent[i] = parent
        self.cost[i] = cost
        self.children.append([])
        self.children[parent].append(i)
        self.n += 1
        return i

    def reparent(self, i: int, new_parent: int, new_cost: float) -> None:
        self.children[self.parent[i]].remove(i)
        self.parent[i] = new_parent
        self.children[new_parent].append(i)
        delta = new_cost - self.cost[i]
        stack = [i]
        while stack:
            j = stack.pop()
            self.cost[j] += delta
            stack.extend(self.children[j])

    def branch(self, i: int) -> list[int]:
        out = []
        while i >= 0:
            out.append(i)
            i = int(self.parent[i])
        return out[::-1]


class _Planner:
    def __init__(self, obstacles: ObstacleSet, geom: RobotGeometry, bounds: Bounds,
                 params: RRTStarParams, rng: np.random.Generator):
        self.geom = geom
        self.bounds = bounds
        self.params = params
        self.rng = rng
        # edges are checked against obstacles grown by half the sampling resolution, so
        # nothing can hide between two consecutive samples
        self.obstacles = obstacles.inflated(0.5 * params.resolution)
        self.weights = metric_weights(params, geom.table.actuated_count)
        self.lo = np.asarray(bounds.lower, dtype=float)
        self.hi = np.asarray(bounds.upper, dtype=float)

    def edge_free(self, a, b) -> bool:
        return collision_check_segment(a, b, self.obstacles, self.geom, self.params.resolution)

    def sample(self, goal: np.ndarray) -> np.ndarray:
        if self.rng.random() < self.params.goal_bias:
            return goal.copy()
        x = self.rng.uniform(self.lo, self.hi)
        x[3] = self.rng.uniform(-np.pi, np.pi)
        return x

    def steer(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = float(control_distance(a, b, self.weights))
        if d <= self.params.step:
            return b.copy()
        return interpolate(a, b, np.array([self.params.step / d]))[0]

    def connect(self, start: np.ndarray, goal: np.ndarray) -> list[np.ndarray]:
        p = self.params
        dim = start.size
        tree = _Tree(start, p.max_iterations)
        goal_parents: list[int] = []
        for it in range(1, p.max_iterations + 1):
            if goal_parents and it > p.iterations:
                break
            x_rand = self.sample(goal)
            nodes = tree.nodes[:tree.n]
            dist = control_distance(nodes, x_rand, self.weights)
            nearest = int(np.argmin(dist))
            x_new = self.steer(nodes[nearest], x_rand)
            if not configs_free(x_new[None, :], self.obstacles, self.geom)[0]:
                continue
            if not self.edge_free(nodes[nearest], x_new):
                continue
            n = tree.n
            radius = min(p.gamma * (np.log(n + 1) / (n + 1)) ** (1.0 / dim), p.step)
            d_new = control_distance(nodes, x_new, self.weights)
            near = np.nonzero(d_new <= radius)[0]
            best, best_cost = nearest, tree.cost[nearest] + d_new[nearest]
            order = near[np.argsort(tree.cost[near] + d_new[near], kind="stable")]
            for j in order:
                c = tree.cost[j] + d_new[j]
                if c >= best_cost:
                    break
                if self.edge_free(nodes[j], x_new):
                    best, best_cost = int(j), c
                    break
            i_new = tree.add(x_new, best, best_cost)
            for j in near:
                if j == best:
                    continue
                c = best_cost + d_new[j]
                if c < tree.cost[j] and self.edge_free(x_new, tree.nodes[j]):
                    tree.reparent(int(j), i_new, c)
            if control_distance(x_new, goal, self.weights) <= p.step and self.edge_free(x_new, goal):
                goal_parents.append(i_new)
        if not goal_parents:
            raise PlanningTimeout(f"no connection after {p.max_iterations} iterations")
        d_goal = np.array([tree.cost[i] + control_distance(tree.nodes[i], goal, self.weights)
                           for i in goal_parents])
        best = goal_parents[int(np.argmin(d_goal))]
        pts = [tree.nodes[i].copy() for i in tree.branch(best)]
        if control_distance(pts[-1], goal, self.weights) > 0.0:
            pts.append(goal.copy())
        pts[0] = start.copy()
        pts[-1] = goal.copy()
        return pts


def default_bounds(geom: RobotGeometry, workspace_lower, workspace_upper) -> Bounds:
    t = geom.table
    m = t.actuated_count
    jlo = t.lower if t.lower is not None else (-np.pi,) * m
    jhi = t.upper if t.upper is not None else (np.pi,) * m
    return Bounds(tuple(workspace_lower) + (-np.pi,) + tuple(jlo),
                  tuple(workspace_upper) + (np.pi,) + tuple(jhi))


def plan_path(waypoints, obstacles: ObstacleSet, geom: RobotGeometry, bounds: Bounds,
              params: RRTStarParams = RRTStarParams(), seed: int = 0) -> np.ndarray:
    """Obstacle-free piecewise-straight path visiting every waypoint in order.

    Returns an ``(n, 4 + M)`` array whose rows include every waypoint exactly.
    """
    wps = np.asarray(waypoints, dtype=float)
    if wps.ndim != 2 or wps.shape[0] < 2:
        raise InvalidWaypoint("at least two waypoints are required")
    dim = 4 + geom.table.actuated_count
    if wps.shape[1] != dim:
        raise InvalidWaypoint(f"waypoints have dimension {wps.shape[1]}, expected {dim}")
    planner = _Planner(obstacles, geom, bounds, params, np.random.default_rng(0))
    for i, w in enumerate(wps):
        if not bounds.contains(w):
            raise InvalidWaypoint(f"waypoint {i} lies outside the planning bounds")
        if not configs_free(w[None, :], planner.obstacles, geom)[0]:
            raise InvalidWaypoint(f"waypoint {i} is in collision")
    seeds = np.random.SeedSequence(seed).spawn(len(wps) - 1)
    out = [wps[0].copy()]
    for k in range(len(wps) - 1):
        a, b = wps[k], wps[k + 1]
        if planner.edge_free(a, b):
            seg = [a, b]
        else:
            planner.rng = np.random.default_rng(seeds[k])
            try:
                seg = planner.connect(a, b)
            except PlanningTimeout as exc:
                raise PlanningTimeout(f"waypoints {k} -> {k + 1}: {exc}") from None
            log.debug("pair %d: %d points", k, len(seg))
        out.extend(np.asarray(p, dtype=float).copy() for p in seg[1:])
    return np.array(out)


def shortcut_path(path, obstacles: ObstacleSet, geom: RobotGeometry, params: RRTStarParams,
                  seed: int = 0, rounds: int | None = None, keep=None) -> np.ndarray:
    """Randomized shortcutting that never drops the indices listed in ``keep``.

    Each accepted shortcut replaces a run of points by a straight free segment, so the
    weighted path length can only shrink.
    """
    pts = [np.asarray(p, dtype=float).copy() for p in np.asarray(path, dtype=float)]
    rounds = params.shortcut_rounds if rounds is None else rounds
    fixed = {0, len(pts) - 1} if keep is None else set(int(k) for k in keep)
    fixed |= {0, len(pts) - 1}
    checker = _Planner(obstacles, geom, Bounds((0.0,), (0.0,)), params, np.random.default_rng(0))
    rng = np.random.default_rng(seed)
    pinned = [i in fixed for i in range(len(pts))]
    for _ in range(rounds):
        if len(pts) < 3:
            break
        i, j = sorted(rng.choice(len(pts), size=2, replace=False))
        if j - i < 2 or any(pinned[i + 1:j]):
            continue
        if checker.edge_free(pts[i], pts[j]):
            del pts[i + 1:j]
            del pinned[i + 1:j]
    return np.array(pts)


def waypoint_indices(path: np.ndarray, waypoints: np.ndarray) -> list[int]:
    """Indices of the path rows that coincide with each waypoint, in order."""
    out = []
    start = 0
    for w in np.asarray(waypoints, dtype=float):
        for i in range(start, len(path)):
            if np.array_equal(path[i], w):
                out.append(i)
                start = i
                break
        else:
            raise ValueError("path does not visit every waypoint")
    return out


def audit_path(path, obstacles: ObstacleSet, geom: RobotGeometry, resolution: float) -> bool:
    pts = np.asarray(path, dtype=float)
    return all(collision_check_segment(pts[i], pts[i + 1], obstacles, geom, resolution)
               for i in range(len(pts) - 1))


__all__ = ["Bounds", "RRTStarParams", "plan_path", "shortcut_path", "control_distance",
           "path_length", "audit_path", "waypoint_indices", "segment_samples", "default_bounds",
           "metric_weights"]
