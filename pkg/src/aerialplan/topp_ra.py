"""Time-optimal path parametrization by reachability analysis.

Works on squared path speed ``x = sdot**2`` and path acceleration ``u = sddot`` over a
uniform grid on ``s``. With per-coordinate limits ``|P'_i sdot| <= v_i`` and
``|P'_i u + P''_i x| <= a_i`` every stage constraint is a line in the ``(x, u)`` plane,
so the controllable sets are computed exactly with interval arithmetic instead of an
LP solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import InfeasibleParametrization

# |P'_i| below this leaves coordinate i without a velocity bound at that stage
TANGENT_EPS = 1e-12
X_FLOOR = 1e-9


@dataclass(frozen=True)
class KinodynamicLimits:
    v_max: np.ndarray
    a_max: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v_max, dtype=float)
        a = np.asarray(self.a_max, dtype=float)
        if v.shape != a.shape or v.ndim != 1:
            raise ValueError("v_max and a_max must be vectors of equal length")
        if np.any(v <= 0) or np.any(a <= 0):
            raise ValueError("kinodynamic limits must be strictly positive")
        object.__setattr__(self, "v_max", v)
        object.__setattr__(self, "a_max", a)


class GeometricPath:
    """Clamped cubic spline through path points, parametrized by cumulative chord length."""

    def __init__(self, knots: np.ndarray, points: np.ndarray):
        self.knots = np.asarray(knots, dtype=float)
        self.points = np.asarray(points, dtype=float)
        self.dim = self.points.shape[1]
        if len(self.knots) >= 2:
            self._spline = CubicSpline(self.knots, self.points, bc_type="clamped", axis=0)
        else:
            self._spline = None

    @property
    def s_end(self) -> float:
        return float(self.knots[-1])

    def __call__(self, s, order: int = 0) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self._spline is None:
            base = self.points[0] if order == 0 else np.zeros(self.dim)
            return np.broadcast_to(base, s.shape + (self.dim,)).copy()
        s = np.clip(s, 0.0, self.s_end)
        return self._spline(s, order)


def fit_geometric_path(path) -> GeometricPath:
    """Fit the interpolating spline; coincident consecutive points are merged.

    Yaw (column 3) is unwrapped first so the spline never takes the long way round.
    """
    pts = np.array(path, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("a geometric path needs at least two points")
    if pts.shape[1] > 3:
        pts[:, 3] = np.unwrap(pts[:, 3])
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    pts = pts[keep]
    chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    knots = np.concatenate([[0.0], np.cumsum(chord)])
    return GeometricPath(knots, pts)


def _stage_lines(acc_u: np.ndarray, acc_x: np.ndarray, a: np.ndarray, d1: np.ndarray,
                 v: np.ndarray):
    """Constraint lines for a batch of stages.

    Acceleration rows read ``|acc_u * u + acc_x * x| <= a`` (one per coordinate and
    collocation point). Returns ``(alpha, beta, gamma, delta, active, x_static)`` with
    upper lines ``u <= alpha + beta x`` and lower lines ``u >= gamma + delta x`` where
    ``active`` is set, and ``x_static`` the part of the stage bound free of ``u``.
    """
    ad = np.abs(acc_u)
    active = ad >= TANGENT_EPS
    safe = np.where(active, acc_u, 1.0)
    slope = np.where(active, -acc_x / safe, 0.0)
    alpha = np.where(active, a / np.where(active, ad, 1.0), np.inf)
    gamma = -alpha
    vel_ok = np.abs(d1) >= TANGENT_EPS
    vel = np.where(vel_ok, (v / np.where(vel_ok, np.abs(d1), 1.0)) ** 2, np.inf)
    bx = np.abs(acc_x)
    acc0 = np.where(~active & (bx > 0), a / np.where(bx > 0, bx, 1.0), np.inf)
    x_static = np.minimum(vel.min(axis=-1), acc0.min(axis=-1))
    # pairs (lower j, upper l): (delta_j - beta_l) x <= alpha_l - gamma_j
    c = slope[..., :, None] - slope[..., None, :]
    pair = active[..., :, None] & active[..., None, :] & (c > 0)
    with np.errstate(invalid="ignore"):
        r = alpha[..., None, :] - gamma[..., :, None]
    bound = np.where(pair, r / np.where(pair, c, 1.0), np.inf)
    x_static = np.minimum(x_static, bound.reshape(bound.shape[:-2] + (-1,)).min(axis=-1))
    return alpha, slope, gamma, slope, active, x_static


def second_order_bounds(path: GeometricPath, limits: KinodynamicLimits, s: float):
    """``(x_max, u_bounds)`` at one path parameter.

    ``x_max`` is the velocity bound on ``sdot**2``; ``u_bounds(x)`` returns the
    admissible ``[u_lo, u_hi]`` for a given squared speed.
    """
    d1 = path(s, 1)
    d2 = path(s, 2)
    ad = np.abs(d1)
    active = ad >= TANGENT_EPS
    x_max = float(np.min((limits.v_max[active] / ad[active]) ** 2)) if np.any(active) else np.inf
    alpha, beta, gamma, delta, active, _ = _stage_lines(d1, d2, limits.a_max, d1, limits.v_max)

    def u_bounds(x: float) -> tuple[float, float]:
        if not np.any(active):
            return -np.inf, np.inf
        hi = float(np.min(alpha[active] + beta[active] * x))
        lo = float(np.max(gamma[active] + delta[active] * x))
        return lo, hi

    return x_max, u_bounds


@dataclass
class _Stages:
    grid: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    active: np.ndarray
    x_static: np.ndarray


def _stages(path: GeometricPath, limits: KinodynamicLimits, grid: np.ndarray) -> _Stages:
    d1 = path(grid, 1)
    d2 = path(grid, 2)
    if d1.shape[-1] != limits.v_max.size:
        raise ValueError("limits dimension does not match the path")
    # each stage also constrains the acceleration at the next grid point, reached
    # with x + 2 * ds * u: rows |(P'_next + 2 ds P''_next) u + P''_next x| <= a
    two_d = np.append(2.0 * np.diff(grid), 0.0)[:, None]
    n1 = np.vstack([d1[1:], d1[-1:]])
    n2 = np.vstack([d2[1:], d2[-1:]])
    acc_u = np.concatenate([d1, n1 + two_d * n2], axis=1)
    acc_x = np.concatenate([d2, n2], axis=1)
    a = np.concatenate([limits.a_max, limits.a_max])
    alpha, beta, gamma, delta, active, x_static = _stage_lines(
        acc_u, acc_x, a, _tangent_envelope(path, grid, d1, d2), limits.v_max)
    return _Stages(grid, alpha, beta, gamma, delta, active, x_static)


def _tangent_envelope(path: GeometricPath, grid: np.ndarray, d1: np.ndarray,
                      d2: np.ndarray) -> np.ndarray:
    """Per stage, max |P'_i| over the grid intervals touching it.

    ``x`` is linear in ``s`` inside an interval while ``v**2 / P'(s)**2`` is not, so the
    velocity bound is taken against the largest tangent anywhere in the interval. P' is
    quadratic on each spline piece: its extremum is at an endpoint or where P'' = 0.
    """
    if len(grid) < 2:
        return np.abs(d1)
    env = np.maximum(np.abs(d1[:-1]), np.abs(d1[1:]))
    d3l = path(grid[:-1], 3)
    d3r = path(np.nextafter(grid[1:], -np.inf), 3)
    for s0, dd2, dd3 in ((grid[:-1], d2[:-1], d3l), (grid[1:], d2[1:], d3r)):
        with np.errstate(divide="ignore", invalid="ignore"):
            vertex = s0[:, None] - dd2 / dd3
        inside = np.isfinite(vertex) & (vertex > grid[:-1, None]) & (vertex < grid[1:, None])
        if np.any(inside):
            rows, cols = np.nonzero(inside)
            vals = np.abs(path(vertex[rows, cols], 1)[np.arange(rows.size), cols])
            np.maximum.at(env, (rows, cols), vals)
    out = np.abs(d1).copy()
    out[:-1] = np.maximum(out[:-1], env)
    out[1:] = np.maximum(out[1:], env)
    return out


def make_grid(path: GeometricPath, n: int = 1000) -> np.ndarray:
    if path.s_end <= 0.0:
        return np.zeros(1)
    return np.linspace(0.0, path.s_end, n + 1)


def _tangent_vanishes(path: GeometricPath, s: float) -> bool:
    return bool(np.all(np.abs(path(s, 1)) < TANGENT_EPS))


def _one_step_set(st: _Stages, k: int, lo: float, hi: float) -> tuple[float, float]:
    """States at stage k that can reach ``[lo, hi]`` at stage k + 1 in one admissible step."""
    two_d = 2.0 * (st.grid[k + 1] - st.grid[k])
    x_lo, x_hi = 0.0, float(st.x_static[k])
    act = st.active[k]
    al, be, ga, de = st.alpha[k][act], st.beta[k][act], st.gamma[k][act], st.delta[k][act]
    # reach-lower u >= (lo - x)/2d against every upper line
    c = -1.0 / two_d - be
    r = al - lo / two_d
    # every static lower line against reach-upper u <= (hi - x)/2d
    c2 = de + 1.0 / two_d
    r2 = hi / two_d - ga
    cs = np.concatenate([c, c2])
    rs = np.concatenate([r, r2])
    pos = cs > 0
    neg = cs < 0
    if np.any(pos):
        x_hi = min(x_hi, float(np.min(rs[pos] / cs[pos])))
    if np.any(neg):
        x_lo = max(x_lo, float(np.max(rs[neg] / cs[neg])))
    zero = ~(pos | neg)
    if np.any(zero & (rs < 0)):
        return 1.0, 0.0
    return x_lo, x_hi


def backward_pass(path: GeometricPath, limits: KinodynamicLimits, grid: np.ndarray,
                  x_end: float | None = 0.0) -> np.ndarray:
    """Controllable sets ``K_k = [x_low, x_high]`` for every grid stage, shape (N + 1, 2).

    ``x_end=None`` leaves the terminal speed free when the path tangent vanishes there
    (the clamped spline is at rest for any ``sdot``), and pins it to zero otherwise.
    """
    grid = np.asarray(grid, dtype=float)
    st = _stages(path, limits, grid)
    n = len(grid) - 1
    k_sets = np.zeros((n + 1, 2))
    if x_end is None:
        if _tangent_vanishes(path, grid[-1]):
            k_sets[n] = (0.0, float(st.x_static[n]))
        else:
            k_sets[n] = (0.0, 0.0)
    else:
        if x_end < 0:
            raise ValueError("x_end must be non-negative")
        k_sets[n] = (x_end, x_end)
    for k in range(n - 1, -1, -1):
        lo, hi = _one_step_set(st, k, *k_sets[k + 1])
        if lo > hi:
            if lo - hi <= 1e-12 * max(1.0, abs(hi)):
                lo = hi
            else:
                raise InfeasibleParametrization(f"empty controllable set at stage {k} (s={grid[k]:.6g})")
        k_sets[k] = (lo, hi)
    return k_sets


def forward_pass(path: GeometricPath, limits: KinodynamicLimits, grid: np.ndarray,
                 k_sets: np.ndarray, x_start: float | None = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Greedy forward sweep; returns ``(x, t)`` on the grid.

    ``x_start=None`` starts at the controllable ceiling when the path tangent vanishes
    at ``s = 0`` and at zero otherwise.
    """
    grid = np.asarray(grid, dtype=float)
    st = _stages(path, limits, grid)
    n = len(grid) - 1
    if x_start is None:
        x0 = float(k_sets[0, 1]) if _tangent_vanishes(path, grid[0]) else 0.0
    else:
        x0 = float(x_start)
    if not (k_sets[0, 0] - 1e-12 <= x0 <= k_sets[0, 1] + 1e-12):
        raise InfeasibleParametrization(f"start speed {x0} outside the controllable set {k_sets[0]}")
    x = np.zeros(n + 1)
    x[0] = min(max(x0, k_sets[0, 0]), k_sets[0, 1])
    for k in range(n):
        two_d = 2.0 * (grid[k + 1] - grid[k])
        lo, hi = k_sets[k + 1]
        act = st.active[k]
        u_hi = (hi - x[k]) / two_d
        if np.any(act):
            u_hi = min(u_hi, float(np.min(st.alpha[k][act] + st.beta[k][act] * x[k])))
        x[k + 1] = min(max(x[k] + two_d * u_hi, lo, 0.0), hi)
    t = np.zeros(n + 1)
    if n > 0:
        root = np.sqrt(np.maximum(x, 0.0))
        denom = root[:-1] + root[1:]
        denom = np.maximum(denom, np.sqrt(X_FLOOR))
        t[1:] = np.cumsum(2.0 * np.diff(grid) / denom)
    return x, t


@dataclass
class SampledTrajectory:
    """Uniformly sampled control-space trajectory; row ``k`` is at ``t = k * T_s``."""
    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray
    T_s: float

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dim(self) -> int:
        return self.q.shape[1]

    def copy(self) -> "SampledTrajectory":
        return SampledTrajectory(self.t.copy(), self.q.copy(), self.dq.copy(), self.ddq.copy(),
                                 self.T_s)


def sample_times(t_end: float, T_s: float) -> np.ndarray:
    n_t = int(np.ceil(t_end / T_s - 1e-9)) if t_end > 0 else 0
    return np.arange(n_t + 1) * T_s


def sample_trajectory(path: GeometricPath, grid: np.ndarray, x: np.ndarray, t: np.ndarray,
                      T_s: float) -> SampledTrajectory:
    """Evaluate ``q*, dq*, ddq*`` at ``k * T_s``.

    Inside a grid interval the path acceleration is constant, which matches the
    discrete model used by the passes. Samples after the final grid time hold the
    end point at rest.
    """
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    grid = np.asarray(grid, dtype=float)
    times = sample_times(float(t[-1]), T_s)
    n = len(grid) - 1
    s = np.full(times.shape, grid[-1])
    sd = np.zeros(times.shape)
    sdd = np.zeros(times.shape)
    moving = times < t[-1]
    if n > 0 and np.any(moving):
        tm = times[moving]
        i = np.clip(np.searchsorted(t, tm, side="right") - 1, 0, n - 1)
        u = (x[i + 1] - x[i]) / (2.0 * (grid[i + 1] - grid[i]))
        sd0 = np.sqrt(np.maximum(x[i], 0.0))
        dt = tm - t[i]
        s[moving] = np.minimum(grid[i] + sd0 * dt + 0.5 * u * dt ** 2, grid[i + 1])
        sd[moving] = np.maximum(sd0 + u * dt, 0.0)
        sdd[moving] = u
    q = path(s)
    d1 = path(s, 1)
    d2 = path(s, 2)
    dq = d1 * sd[:, None]
    ddq = d1 * sdd[:, None] + d2 * (sd ** 2)[:, None]
    dq[~moving] = 0.0
    ddq[~moving] = 0.0
    return SampledTrajectory(times, q, dq, ddq, float(T_s))


@dataclass
class Parametrization:
    path: GeometricPath
    grid: np.ndarray
    k_sets: np.ndarray
    x: np.ndarray
    t: np.ndarray

    @property
    def duration(self) -> float:
        return float(self.t[-1])


def parametrize(path: GeometricPath, limits: KinodynamicLimits, n_grid: int = 1000,
                x_start: float | None = None, x_end: float | None = None) -> Parametrization:
    """Backward then forward pass; endpoints default to rest."""
    grid = make_grid(path, n_grid)
    k_sets = backward_pass(path, limits, grid, x_end)
    x, t = forward_pass(path, limits, grid, k_sets, x_start)
    return Parametrization(path, grid, k_sets, x, t)


def time_parametrize(points, limits: KinodynamicLimits, T_s: float, n_grid: int = 1000
                     ) -> tuple[SampledTrajectory, Parametrization]:
    gp = fit_geometric_path(points)
    par = parametrize(gp, limits, n_grid)
    return sample_trajectory(gp, par.grid, par.x, par.t, T_s), par
