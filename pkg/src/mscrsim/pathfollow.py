"""Tip position control with a translating base and the rotating magnet.

Actuation is ``u = (nu_dot, psi_dot)``: the base slides along x of the
base frame and carries the magnet mount with it, so the deformed shape
depends only on ``psi`` and the base offset enters the tip position
additively.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .elastica import (Actuation, PlaneConfig, RobotParams, Shape, magnet_above_tip, solve_bvp,
                       workspace_sweep)
from .jacobian import JacobianProfile, analytic_jacobian

DEFAULT_GAIN = 0.5
BASE_RATE_LIMIT = 5e-3  # m/s
COND_LIMIT = 1e6


class TaskSingularity(RuntimeError):
    pass


class WaypointTimeout(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class BaseState:
    nu: float = 0.0
    nu_min: float = -0.05
    nu_max: float = 0.05

    def __post_init__(self):
        if not self.nu_min <= self.nu <= self.nu_max:
            raise ValueError(f"base position {self.nu} outside [{self.nu_min}, {self.nu_max}]")


@dataclass(frozen=True)
class TaskJacobian:
    B: np.ndarray  # 3 x 2

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.B))


def shape_tip(shape: Shape, nu: float = 0.0, phi: float = 0.0) -> np.ndarray:
    X, Y = shape.xy[-1]
    return np.array([nu, 0.0, 0.0]) + PlaneConfig(phi).from_plane(float(X), float(Y))


def tip_position(params: RobotParams, act: Actuation, nu: float = 0.0, phi: float = 0.0,
                 shape: Shape | None = None) -> np.ndarray:
    if shape is None:
        shape = solve_bvp(params, act, phi)
    return shape_tip(shape, nu, phi)


def task_jacobian(shape: Shape, profile: JacobianProfile, phi: float = 0.0) -> TaskJacobian:
    s, th, J = shape.s, shape.theta, profile.J
    dx = np.trapezoid(-np.sin(th) * J, s)
    dy = np.trapezoid(np.cos(th) * J, s)
    col = PlaneConfig(phi).from_plane(float(dx), float(dy))
    return TaskJacobian(np.column_stack([[1.0, 0.0, 0.0], col]))


def pseudo_inverse_control(B, x, x_ref, xdot_ref=None, k_x: float = DEFAULT_GAIN) -> np.ndarray:
    """Feedforward and proportional feedback, both mapped through ``pinv(B)``."""
    B = np.asarray(B, dtype=float)
    if not np.all(np.isfinite(B)):
        raise TaskSingularity("task Jacobian is not finite")
    if np.linalg.cond(B) > COND_LIMIT:
        raise TaskSingularity(f"task Jacobian is rank deficient (cond {np.linalg.cond(B):.3g})")
    Bp = np.linalg.pinv(B)
    v = k_x * (np.asarray(x_ref, dtype=float) - np.asarray(x, dtype=float))
    if xdot_ref is not None:
        v = v + np.asarray(xdot_ref, dtype=float)
    return Bp @ v


@dataclass
class PathSpec:
    waypoints: np.ndarray  # (n, 3)
    advance_threshold: float = 0.01
    window: int = 5
    error_floor: float = 5e-4  # m; below this the rate is taken relative to the floor

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[1] != 3:
            raise ValueError("waypoints must have three columns")
        if not 0 < self.advance_threshold < 1:
            raise ValueError("advance threshold must lie in (0, 1)")

    def __len__(self):
        return len(self.waypoints)

    @classmethod
    def read_csv(cls, path, **kw) -> "PathSpec":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"x_m", "y_m", "z_m"} <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected header x_m,y_m,z_m")
            pts = [[float(r["x_m"]), float(r["y_m"]), float(r["z_m"])] for r in reader]
        if not pts:
            raise ValueError(f"{path}: no waypoints")
        return cls(np.array(pts), **kw)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_m", "y_m", "z_m"])
            for p in self.waypoints:
                w.writerow([f"{v:.9g}" for v in p])


@dataclass
class PathConfig:
    k_x: float = DEFAULT_GAIN
    dt: float = 0.1
    base_rate: float = BASE_RATE_LIMIT
    max_steps_per_waypoint: int = 400
    phi: float = 0.0
    base: BaseState = field(default_factory=BaseState)


@dataclass
class PathResult:
    t: np.ndarray
    x_ref: np.ndarray  # (n, 3)
    x: np.ndarray  # (n, 3)
    nu: np.ndarray
    psi: np.ndarray
    waypoint: np.ndarray
    L: float
    wall_time: float = 0.0

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(np.sum((self.x - self.x_ref) ** 2, axis=1))))

    @property
    def rmse_fraction(self) -> float:
        return self.rmse / self.L

    def summary(self) -> str:
        return (f"# rmse_m={self.rmse:.6g} rmse_over_L={self.rmse_fraction:.6g} "
                f"steps={len(self.t)} waypoints={int(self.waypoint.max()) + 1 if len(self.t) else 0}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_ref", "y_ref", "z_ref", "x", "y", "z", "nu", "psi"])
            for i in range(len(self.t)):
                w.writerow([f"{v:.9g}" for v in (self.t[i], *self.x_ref[i], *self.x[i], self.nu[i], self.psi[i])])
            fh.write(self.summary() + "\n")


def _plateau(errors, window, threshold, floor) -> bool:
    if len(errors) <= window:
        return False
    e0, e1 = errors[-window - 1], errors[-1]
    rate = (e0 - e1) / (window * max(e0, floor))
    return rate < threshold


def follow_path(params: RobotParams, act: Actuation, path: PathSpec, config: PathConfig | None = None) -> PathResult:
    """Regulate the tip through the waypoints in order.

    A waypoint is left once the relative per-step decrease of the position
    error, averaged over ``path.window`` steps, drops below the threshold.
    The step that leaves it carries the reference jump as the feedforward
    velocity ``(next - current) / dt``, so the tip moves with the reference
    instead of chasing it afterwards.
    """
    cfg = config or PathConfig()
    phi, dt = cfg.phi, cfg.dt
    t0 = time.perf_counter()
    nu, psi = cfg.base.nu, act.psi
    shape = solve_bvp(params, act, phi)
    rows = {k: [] for k in ("t", "x_ref", "x", "nu", "psi", "wp")}

    def result():
        return PathResult(np.array(rows["t"]), np.array(rows["x_ref"]).reshape(-1, 3),
                          np.array(rows["x"]).reshape(-1, 3), np.array(rows["nu"]), np.array(rows["psi"]),
                          np.array(rows["wp"], dtype=int), params.L, time.perf_counter() - t0)

    wps = path.waypoints
    i, errors, prev, step = 0, [], None, 0
    while True:
        ref = wps[i]
        x = shape_tip(shape, nu, phi)
        errors.append(float(np.linalg.norm(ref - x)))
        for key, val in zip(("t", "x_ref", "x", "nu", "psi", "wp"), (step * dt, ref, x, nu, psi, i)):
            rows[key].append(val)
        advance = _plateau(errors, path.window, path.advance_threshold, path.error_floor)
        if advance and i == len(wps) - 1:
            break
        if not advance and len(errors) >= cfg.max_steps_per_waypoint:
            raise WaypointTimeout(f"waypoint {i} not settled within {cfg.max_steps_per_waypoint} steps", result())
        xdot_ref = (wps[i + 1] - ref) / dt if advance else None
        profile = analytic_jacobian(shape, act.with_psi(psi), params, phi)
        B = task_jacobian(shape, profile, phi).B
        u = pseudo_inverse_control(B, x, ref, xdot_ref, cfg.k_x)
        nu_dot = float(np.clip(u[0], -cfg.base_rate, cfg.base_rate))
        nu = float(np.clip(nu + nu_dot * dt, cfg.base.nu_min, cfg.base.nu_max))
        new_psi = psi + float(u[1]) * dt
        guess = shape.slope0
        if prev is not None and prev[0] != psi:
            guess += (shape.slope0 - prev[1]) / (psi - prev[0]) * (new_psi - psi)
        prev = (psi, shape.slope0)
        psi = new_psi
        shape = solve_bvp(params, act.with_psi(psi), phi, guess=guess)
        step += 1
        if advance:
            i, errors = i + 1, []
    return result()


# demo paths --------------------------------------------------------------------

def reachable_band(params: RobotParams, act: Actuation, phi: float = 0.0, margin: float = 0.8):
    """In-plane tip height range reachable by rotation alone, shrunk by ``margin``."""
    ws = workspace_sweep(params, act, phi=phi)
    ys = [float(sh.xy[-1, 1]) for sh in ws.shapes]
    lo, hi = min(ys), max(ys)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * margin
    return mid - half, mid + half


def demo_path(params: RobotParams, act: Actuation, kind: str = "planar", n: int = 100,
              phi: float = 0.0, span: float = 0.012) -> PathSpec:
    """Two-arc waypoint path inside the reachable band.

    ``planar`` keeps the deflection plane at phi = 0; ``tilted`` places the same
    curve in the plane rotated by ``phi`` (default pi/4), so all three task
    coordinates vary.
    """
    if kind not in ("planar", "tilted"):
        raise ValueError(f"unknown demo path {kind!r}")
    if kind == "tilted" and phi == 0.0:
        phi = math.pi / 4
    lo, hi = reachable_band(params, act, phi)
    mid, amp = 0.5 * (lo + hi), 0.5 * (hi - lo)
    tau = np.linspace(0.0, 1.0, n)
    x0 = float(solve_bvp(params, act, phi).xy[-1, 0])
    xs = x0 + span * tau
    ys = mid + amp * np.sin(2 * math.pi * tau)
    plane = PlaneConfig(phi)
    pts = np.array([plane.from_plane(x, y) for x, y in zip(xs, ys)])
    return PathSpec(pts)


def path_workspace_envelope(params: RobotParams, act: Actuation, base: BaseState, phi: float = 0.0):
    """Cylinder-like envelope: x range from base travel, in-plane radius from the sweep."""
    ws = workspace_sweep(params, act, phi=phi)
    xs = np.array([sh.xy[-1, 0] for sh in ws.shapes])
    ys = np.array([sh.xy[-1, 1] for sh in ws.shapes])
    return (base.nu_min + xs.min(), base.nu_max + xs.max()), (float(ys.min()), float(ys.max()))
