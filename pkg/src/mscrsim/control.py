"""Closed-loop tip-angle control around the quasi-static rod model.

Signals: ``y`` is the measured tip angle, ``u`` the magnet rotation rate.
The observer estimates ``x1 = y`` and the lumped disturbance ``x2``; the
tracking differentiator smooths the reference and supplies its rate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .elastica import Actuation, RobotParams, Shape, feasibility_check, solve_bvp, sweep_psi, workspace_sweep
from .jacobian import analytic_jacobian, damped_jacobian

VARIANTS = ("PD", "QSC", "damped-QSC")


class ControlSingularity(ZeroDivisionError):
    """Plain QSC asked to invert a zero Jacobian."""


class PlantFailure(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class LesoState:
    x1: float = 0.0
    x2: float = 0.0
    beta1: float = 1.0
    beta2: float = 0.01
    eps: float = 0.01

    def __post_init__(self):
        if not (self.eps > 0 and self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("observer gains and eps must be positive")


@dataclass(frozen=True)
class TdState:
    y: float = 0.0
    dy: float = 0.0
    k1: float = 0.1
    k2: float = 1.0
    R: float = 10.0

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0 and self.R > 0):
            raise ValueError("differentiator gains must be positive")


@dataclass(frozen=True)
class ControllerConfig:
    variant: str = "damped-QSC"
    k: float = 1.02
    lam: float = 0.05
    psi_min: float = -3 * math.pi / 4
    psi_max: float = 3 * math.pi / 4
    rate_limit: float | None = None
    jacobian_mode: str = "table"  # or "exact"
    beta1: float = 1.0
    beta2: float = 0.01
    eps: float = 0.01
    k1: float = 0.1
    k2: float = 1.0
    R: float = 10.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.psi_min < self.psi_max:
            raise ValueError("psi_min must be below psi_max")
        if self.jacobian_mode not in ("table", "exact"):
            raise ValueError("jacobian_mode must be 'table' or 'exact'")
        if self.rate_limit is not None and not self.rate_limit > 0:
            raise ValueError("rate_limit must be positive")


def leso_step(state: LesoState, y: float, u: float, J: float, dt: float) -> LesoState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = y - state.x1
    x1 = state.x1 + dt * (state.x2 + state.beta1 / state.eps * e + J * u)
    x2 = state.x2 + dt * state.beta2 / state.eps**2 * e
    return replace(state, x1=x1, x2=x2)


def leso_transition(state: LesoState, dt: float) -> np.ndarray:
    """Discrete error-dynamics matrix of the Euler observer."""
    return np.array([[1 - dt * state.beta1 / state.eps, dt],
                     [-dt * state.beta2 / state.eps**2, 1.0]])


def td_step(state: TdState, y_r: float, dt: float) -> TdState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    ddy = -state.k1 * state.R**2 * (state.y - y_r) - state.k2 * state.R * state.dy
    return replace(state, y=state.y + dt * state.dy, dy=state.dy + dt * ddy)


def control_pd(td: TdState, x1: float, k: float = 1.02) -> float:
    return td.dy + k * (td.y - x1)


def control_qsc(u0: float, x2: float, J: float, variant: str = "QSC", lam: float = 0.05) -> float:
    if variant == "PD":
        return u0
    if variant == "damped-QSC":
        J = damped_jacobian(J, lam)
    elif J == 0:
        raise ControlSingularity("QSC cannot invert J_psi = 0; use the damped variant")
    return (u0 - x2) / J


# references and disturbances ------------------------------------------------

@dataclass(frozen=True)
class Reference:
    kind: str = "step"  # step | cosine
    amplitude: float = 0.3
    period: float = 10.0
    offset: float = 0.0
    start: float = 0.0
    unreachable: bool = False

    def __post_init__(self):
        if self.kind not in ("step", "cosine"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if not self.period > 0:
            raise ValueError("period must be positive")

    def __call__(self, t: float) -> float:
        if self.kind == "step":
            return self.offset + (self.amplitude if t >= self.start else 0.0)
        return self.offset + self.amplitude * math.cos(2 * math.pi * t / self.period)


@dataclass(frozen=True)
class Disturbance:
    """Additive tip-angle disturbance switched on at ``start``.

    ``noise`` is Gaussian noise through a first-order low pass with corner
    ``bandwidth`` (Hz), scaled to standard deviation ``magnitude``.
    """
    kind: str = "none"  # none | step | sine | noise
    magnitude: float = 0.0
    start: float = 0.0
    period: float = 1.0
    bandwidth: float = 2.0

    def __post_init__(self):
        if self.kind not in ("none", "step", "sine", "noise"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")

    def sampler(self, dt: float, rng: np.random.Generator) -> Callable[[float], float]:
        if self.kind == "none" or self.magnitude == 0:
            return lambda t: 0.0
        if self.kind == "step":
            return lambda t: self.magnitude if t >= self.start else 0.0
        if self.kind == "sine":
            return lambda t: self.magnitude * math.sin(2 * math.pi * (t - self.start) / self.period) \
                if t >= self.start else 0.0
        a = math.exp(-2 * math.pi * self.bandwidth * dt)
        gain = self.magnitude * math.sqrt(1 - a * a)
        state = [0.0]

        def noise(t):
            if t < self.start:
                return 0.0
            state[0] = a * state[0] + gain * rng.standard_normal()
            return state[0]
        return noise


# simulation -----------------------------------------------------------------

@dataclass
class SimTrace:
    t: np.ndarray
    y_r: np.ndarray
    y_r_tracked: np.ndarray
    theta_L: np.ndarray
    x1_hat: np.ndarray
    x2_hat: np.ndarray
    u: np.ndarray
    psi: np.ndarray
    limit_hit: bool = False
    meta: dict = field(default_factory=dict)

    COLUMNS = ("t", "y_r", "y_r_tracked", "theta_L", "x1_hat", "x2_hat", "u", "psi")

    def __len__(self):
        return len(self.t)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in zip(*(getattr(self, c) for c in self.COLUMNS)):
                w.writerow([f"{v:.10g}" for v in row])


@dataclass(frozen=True)
class TraceMetrics:
    overshoot: float  # percent of the final reference change
    steady_state_error: float
    rmse: float
    energy: float
    sign_flips: int


def count_sign_flips(u, t=None, window: tuple[float, float] | None = None, tol: float = 0.0) -> int:
    u = np.asarray(u, dtype=float)
    if window is not None:
        t = np.asarray(t)
        u = u[(t >= window[0]) & (t <= window[1])]
    s = np.sign(np.where(np.abs(u) > tol, u, 0.0))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def trace_metrics(trace: SimTrace) -> TraceMetrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    t, y, r = trace.t, trace.theta_L, trace.y_r
    e = r - y
    tail = t >= t[0] + 0.8 * (t[-1] - t[0])
    dt = t[1] - t[0] if len(t) > 1 else 0.0
    target, start = r[-1], y[0]
    delta = target - start
    overshoot = 0.0
    if abs(delta) > 1e-12:
        past = np.sign(delta) * (y - target)
        crossed = np.nonzero(past >= 0)[0]
        if crossed.size:
            overshoot = float(100.0 * max(0.0, float(np.max(past[crossed[0]:]))) / abs(delta))
    return TraceMetrics(overshoot, float(np.mean(np.abs(e[tail]))), float(np.sqrt(np.mean(e**2))),
                        float(np.sum(trace.u**2) * dt), count_sign_flips(trace.u))


@dataclass
class JacobianTable:
    psi: np.ndarray
    J: np.ndarray
    theta_L: np.ndarray

    def __call__(self, psi: float) -> float:
        return float(np.interp(psi, self.psi, self.J, period=2 * math.pi))

    @classmethod
    def build(cls, params: RobotParams, act: Actuation, phi: float = 0.0, n: int = 128) -> "JacobianTable":
        grid = np.linspace(-math.pi, math.pi, n + 1)
        sweep = sweep_psi(params, act, grid, phi)
        J = np.array([analytic_jacobian(sh, act.with_psi(p), params, phi).J_psi
                      for p, sh in zip(sweep.psi, sweep.shapes)])
        return cls(grid[:-1], J[:-1], sweep.theta_L[:-1])


def unreachable_target(params, act, amplitude, phi=0.0) -> float:
    """Reference placed ``|amplitude|`` beyond the workspace edge on its side."""
    ws = workspace_sweep(params, act, phi=phi)
    return ws.theta_max + abs(amplitude) if amplitude >= 0 else ws.theta_min - abs(amplitude)


def simulate_closed_loop(params: RobotParams, act0: Actuation, ctrl: ControllerConfig,
                         reference: Reference | Callable[[float], float], disturbance: Disturbance | None = None,
                         dt: float = 0.01, T: float = 10.0, seed: int = 0, noise: float = 0.0,
                         phi: float = 0.0, table: JacobianTable | None = None,
                         measure: Callable[[Shape], float] | None = None) -> SimTrace:
    """Run the loop on a uniform grid of ``round(T / dt) + 1`` samples.

    ``measure`` maps the plant shape to a tip-angle reading (default: the
    model tip angle); disturbance and noise are added on top.
    """
    if not 0 < dt <= 0.02:
        raise ValueError("dt must be in (0, 0.02] s")
    if not T > 0:
        raise ValueError("T must be positive")
    report = feasibility_check(params, act0, phi=phi)
    if not report.ok:
        raise ValueError(f"initial configuration infeasible: {report}")
    rng = np.random.default_rng(seed)
    dist = (disturbance or Disturbance()).sampler(dt, rng)
    if isinstance(reference, Reference) and reference.unreachable:
        reference = replace(reference, offset=unreachable_target(params, act0, reference.amplitude, phi),
                            amplitude=0.0)
    if ctrl.jacobian_mode == "table" and table is None:
        table = JacobianTable.build(params, act0, phi)

    n = int(round(T / dt))
    cols = {c: np.zeros(n + 1) for c in SimTrace.COLUMNS}
    psi = float(act0.psi)
    shape = solve_bvp(params, act0, phi)
    y0 = (measure(shape) if measure else shape.theta_L)
    obs = LesoState(y0, 0.0, ctrl.beta1, ctrl.beta2, ctrl.eps)
    td = TdState(y0, 0.0, ctrl.k1, ctrl.k2, ctrl.R)
    limit_hit = False
    prev = None
    for i in range(n + 1):
        t = i * dt
        d = dist(t)
        theta = shape.theta_L + d
        y = (measure(shape) if measure else shape.theta_L) + d
        if noise:
            y += noise * rng.standard_normal()
        y_r = reference(t)
        if ctrl.jacobian_mode == "table":
            J = table(psi)
        else:
            J = analytic_jacobian(shape, act0.with_psi(psi), params, phi).J_psi
        u0 = control_pd(td, obs.x1, ctrl.k)
        u = control_qsc(u0, obs.x2, J, ctrl.variant, ctrl.lam)
        if ctrl.rate_limit is not None:
            u = min(max(u, -ctrl.rate_limit), ctrl.rate_limit)
        for c, v in zip(SimTrace.COLUMNS, (t, y_r, td.y, theta, obs.x1, obs.x2, u, psi)):
            cols[c][i] = v
        if i == n:
            break
        psi_next = psi + u * dt
        if not ctrl.psi_min <= psi_next <= ctrl.psi_max:
            limit_hit = True
            psi_next = min(max(psi_next, ctrl.psi_min), ctrl.psi_max)
        # the observer sees the rate the actuator actually delivered and the
        # nominal plant gain; damping only shapes the command
        obs = leso_step(obs, y, (psi_next - psi) / dt, J, dt)
        td = td_step(td, y_r, dt)
        if psi_next == psi:
            continue
        # linear extrapolation of the initial curvature along psi
        guess = shape.slope0
        if prev is not None and prev[0] != psi:
            guess += (shape.slope0 - prev[1]) / (psi - prev[0]) * (psi_next - psi)
        prev = (psi, shape.slope0)
        psi = psi_next
        try:
            shape = solve_bvp(params, act0.with_psi(psi), phi, guess=guess)
        except Exception as exc:
            partial = SimTrace(**{c: v[: i + 1] for c, v in cols.items()}, limit_hit=limit_hit)
            raise PlantFailure(f"plant solve failed at t={t + dt:.3f} s: {exc}", partial) from exc
    return SimTrace(**cols, limit_hit=limit_hit,
                    meta={"variant": ctrl.variant, "dt": dt, "T": T, "seed": seed})
