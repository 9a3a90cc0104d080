"""Quasi-static hard-magnetic elastica of a clamped magnetic rod.

The rod deflects in the plane selected by the roll angle ``phi``. The magnet
is constrained to that plane and spins about its normal, so the governing
equation

    theta'' = sigma(s, theta),   theta(0) = 0,   theta'(L) = 0

is identical for every ``phi`` once the magnet position is expressed in
in-plane coordinates. The numerical kernel therefore works in the plane with
scalar ``math`` (fast for a 3-vector problem) while the public helpers take
and return 3D vectors in the base frame G.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from . import magnetics
from .magnetics import DEFAULT_MOMENT, MU0, SingularDipoleError

log = logging.getLogger(__name__)

# Scale on the magnetic body couple relative to bending stiffness. With the
# per-volume magnetization M carried through A/(EI), a factor pi^2/2 is what
# makes the clearance bound for MSCR #1 come out at the reported 0.1425 m.
LOAD_FACTOR = math.pi**2 / 2

DEFAULT_NODES = 128
DEFAULT_TOL = 1e-8
MAX_SHOTS = 50


class DomainError(ValueError):
    """Magnet coincides with (or is within one grid cell of) the body."""


class ShootingError(RuntimeError):
    def __init__(self, message, residual=float("nan"), psi=None):
        super().__init__(message)
        self.residual = residual
        self.psi = psi


@dataclass(frozen=True)
class RobotParams:
    L: float
    r: float
    E: float
    M: float

    def __post_init__(self):
        for name in ("L", "r", "E", "M"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.L / (2 * self.r) < 5:
            warnings.warn(f"rod is not slender: L/D = {self.L / (2 * self.r):.2f}", stacklevel=2)

    @property
    def area(self) -> float:
        return math.pi * self.r**2

    @property
    def inertia(self) -> float:
        return math.pi * self.r**4 / 4

    @property
    def load(self) -> float:
        """Coefficient turning a field (T) into curvature rate (1/m^2)."""
        return LOAD_FACTOR * self.M * self.area / (self.E * self.inertia)

    @classmethod
    def from_mapping(cls, data) -> "RobotParams":
        extra = set(data) - {"L", "r", "E", "M"}
        if extra:
            raise ValueError(f"unknown robot keys: {sorted(extra)}")
        return cls(**{k: float(data[k]) for k in ("L", "r", "E", "M")})


PRESETS = {
    "mscr1": RobotParams(L=0.024, r=0.54e-3, E=3.0e6, M=8.0e3),
    "mscr2": RobotParams(L=0.030, r=0.65e-3, E=2.8e6, M=9.3e3),
}


@dataclass(frozen=True)
class PlaneConfig:
    phi: float = 0.0

    @property
    def o_hat(self) -> np.ndarray:
        return np.array([0.0, math.cos(self.phi), math.sin(self.phi)])

    @property
    def n_hat(self) -> np.ndarray:
        return np.array([0.0, math.sin(self.phi), -math.cos(self.phi)])

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.phi), math.sin(self.phi)
        return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])

    def to_plane(self, p) -> tuple[float, float]:
        p = np.asarray(p, dtype=float)
        return float(p[0]), float(p @ self.o_hat)

    def from_plane(self, x: float, y: float) -> np.ndarray:
        return np.array([x, 0.0, 0.0]) + y * self.o_hat


@dataclass(frozen=True)
class Actuation:
    """Magnet pose in frame G: position (m), rotation angle (rad), moment."""

    position: np.ndarray
    psi: float = 0.0
    moment: float = DEFAULT_MOMENT

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.moment < 0:
            raise ValueError("moment must be non-negative")

    def with_psi(self, psi: float) -> "Actuation":
        return Actuation(self.position, psi, self.moment)

    def with_position(self, position) -> "Actuation":
        return Actuation(np.asarray(position, dtype=float), self.psi, self.moment)

    def m_hat(self, phi: float = 0.0) -> np.ndarray:
        return PlaneConfig(phi).rotation @ magnetics.unit_moment(self.psi, "G")

    def check_plane(self, phi: float = 0.0, tol: float = 1e-9) -> None:
        off = float(self.position @ PlaneConfig(phi).n_hat)
        if abs(off) > tol:
            raise DomainError(f"magnet is {off:.3e} m off the deflection plane")


def magnet_above_tip(params: RobotParams, height: float, psi: float = 0.0,
                     moment: float = DEFAULT_MOMENT, phi: float = 0.0) -> Actuation:
    """Magnet at ``height`` above the undeformed distal end, in the phi-plane."""
    return Actuation(PlaneConfig(phi).from_plane(params.L, height), psi, moment)


@dataclass
class Shape:
    s: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    xy: np.ndarray  # in-plane body coordinates from the integrator
    phi: float = 0.0
    iterations: int = 0
    residual: float = 0.0

    @property
    def L(self) -> float:
        return float(self.s[-1])

    @property
    def theta_L(self) -> float:
        return float(self.theta[-1])

    @property
    def slope0(self) -> float:
        return float(self.dtheta[0])

    @classmethod
    def from_function(cls, L: float, theta: Callable, dtheta: Callable | None = None,
                      n: int = DEFAULT_NODES, phi: float = 0.0) -> "Shape":
        """Shape from an analytic angle profile (positions by trapezoid rule)."""
        s = np.linspace(0.0, L, n + 1)
        th = np.asarray(theta(s), dtype=float) * np.ones_like(s)
        dth = np.gradient(th, s) if dtheta is None else np.asarray(dtheta(s), dtype=float) * np.ones_like(s)
        xy = np.column_stack([_cumtrapz(np.cos(th), s), _cumtrapz(np.sin(th), s)])
        return cls(s, th, dth, xy, phi)


def _cumtrapz(f, s):
    out = np.zeros_like(s)
    out[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(s))
    return out


def _integrals(shape: Shape, s: float) -> tuple[float, float]:
    """(int_0^s cos theta, int_0^s sin theta) by the trapezoid rule."""
    grid = shape.s
    if not -1e-15 <= s <= grid[-1] * (1 + 1e-12):
        raise ValueError(f"arc length {s} outside [0, {grid[-1]}]")
    s = min(max(s, 0.0), grid[-1])
    c = _cumtrapz(np.cos(shape.theta), grid)
    sn = _cumtrapz(np.sin(shape.theta), grid)
    i = min(int(np.searchsorted(grid, s, side="right")) - 1, len(grid) - 2)
    h = s - grid[i]
    if h == 0:
        return float(c[i]), float(sn[i])
    t_end = shape.theta[i] + (shape.theta[i + 1] - shape.theta[i]) * h / (grid[i + 1] - grid[i])
    return (float(c[i] + 0.5 * h * (math.cos(shape.theta[i]) + math.cos(t_end))),
            float(sn[i] + 0.5 * h * (math.sin(shape.theta[i]) + math.sin(t_end))))


def body_point(shape: Shape, s: float, phi: float = 0.0) -> np.ndarray:
    ic, is_ = _integrals(shape, s)
    return PlaneConfig(phi).rotation @ np.array([ic, is_, 0.0])


def dx_dtheta(shape: Shape, s: float, phi: float = 0.0) -> np.ndarray:
    ic, is_ = _integrals(shape, s)
    return PlaneConfig(phi).rotation @ np.array([-is_, ic, 0.0])


def sigma_at(x, x_theta, theta: float, act: Actuation, params: RobotParams, phi: float = 0.0) -> float:
    """Right-hand side of the governing equation from 3D field evaluations."""
    rot = PlaneConfig(phi).rotation
    p = np.asarray(x, dtype=float) - act.position
    m_hat = act.m_hat(phi)
    b = magnetics.dipole_field(p, m_hat, act.moment)
    G = magnetics.dipole_gradient(p, m_hat, act.moment)
    Rm = params.M * (rot @ np.array([math.cos(theta), math.sin(theta), 0.0]))
    dRm = params.M * (rot @ np.array([-math.sin(theta), math.cos(theta), 0.0]))
    scale = LOAD_FACTOR * params.area / (params.E * params.inertia)
    return float(-scale * (dRm @ b + (G.T @ Rm) @ np.asarray(x_theta, dtype=float)))


def rhs_sigma(s: float, theta: float, shape: Shape, act: Actuation, params: RobotParams,
              phi: float = 0.0) -> float:
    """sigma at arc length ``s`` for angle ``theta`` on the body curve of ``shape``."""
    x = body_point(shape, s, phi)
    if np.linalg.norm(x - act.position) == 0:
        raise DomainError(f"magnet coincides with body point s={s}")
    return sigma_at(x, dx_dtheta(shape, s, phi), theta, act, params, phi)


# ---------------------------------------------------------------------------
# planar kernel


def planar_fields(px: float, py: float, mx: float, my: float, k: float):
    """In-plane field and gradient entries of a dipole, ``k = mu0 M_A / 4 pi``."""
    r2 = px * px + py * py
    r = math.sqrt(r2)
    ux, uy = px / r, py / r
    pm = ux * mx + uy * my
    kb = k / (r2 * r)
    kg = 3.0 * kb / r
    return (kb * (3.0 * pm * ux - mx), kb * (3.0 * pm * uy - my),
            kg * (2.0 * mx * ux + pm * (1.0 - 5.0 * ux * ux)),
            kg * (mx * uy + ux * my - 5.0 * pm * ux * uy),
            kg * (2.0 * my * uy + pm * (1.0 - 5.0 * uy * uy)))


class PlanarModel:
    """Everything the integrators need, reduced to in-plane scalars."""

    def __init__(self, params: RobotParams, act: Actuation, phi: float = 0.0):
        self.params = params
        self.phi = phi
        self.C = params.load
        self.k = MU0 * act.moment / (4 * math.pi)
        self.xa, self.ya = PlaneConfig(phi).to_plane(act.position)
        self.psi = act.psi
        self.mx, self.my = -math.cos(act.psi), math.sin(act.psi)
        self.min_gap = 0.0

    def fields(self, X, Y, mx=None, my=None):
        px, py = X - self.xa, Y - self.ya
        if px * px + py * py < self.min_gap**2:
            raise DomainError(f"body point ({X:.4g}, {Y:.4g}) within {self.min_gap:.3g} m of the magnet")
        return planar_fields(px, py, self.mx if mx is None else mx, self.my if my is None else my, self.k)

    def sigma(self, th, X, Y, mx=None, my=None):
        bx, by, g11, g12, g22 = self.fields(X, Y, mx, my)
        c, s = math.cos(th), math.sin(th)
        return -self.C * (-s * bx + c * by - Y * (g11 * c + g12 * s) + X * (g12 * c + g22 * s))

    def sigma_row(self, th, X, Y):
        """Components of sigma along the in-plane magnet axes (linear in m_hat)."""
        return self.sigma(th, X, Y, 1.0, 0.0), self.sigma(th, X, Y, 0.0, 1.0)

    def shooting_rhs(self, s, y):
        th, w, X, Y, dth, dw, dX, dY = y
        bx, by, g11, g12, g22 = self.fields(X, Y)
        c, sn = math.cos(th), math.sin(th)
        C = self.C
        sig = -C * (-sn * bx + c * by - Y * (g11 * c + g12 * sn) + X * (g12 * c + g22 * sn))
        sig_th = -C * (-c * bx - sn * by - Y * (-g11 * sn + g12 * c) + X * (-g12 * sn + g22 * c))
        h = 1e-7
        sig_x = (self.sigma(th, X + h, Y) - sig) / h
        sig_y = (self.sigma(th, X, Y + h) - sig) / h
        return [w, sig, c, sn, dw, sig_th * dth + sig_x * dX + sig_y * dY, -sn * dth, c * dth]

    def state_rhs(self, s, y):
        th, w, X, Y = y
        c, sn = math.cos(th), math.sin(th)
        return [w, self.sigma(th, X, Y), c, sn]


def rk4(rhs, y0: Sequence[float], L: float, n: int, record: bool = False):
    """Fixed-step RK4 on [0, L]; returns final state or all node states."""
    h = L / n
    y = list(y0)
    m = len(y)
    out = [y] if record else None
    s = 0.0
    for i in range(n):
        k1 = rhs(s, y)
        k2 = rhs(s + h / 2, [y[j] + h / 2 * k1[j] for j in range(m)])
        k3 = rhs(s + h / 2, [y[j] + h / 2 * k2[j] for j in range(m)])
        k4 = rhs(s + h, [y[j] + h * k3[j] for j in range(m)])
        y = [y[j] + h / 6 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]) for j in range(m)]
        s = (i + 1) * h
        if record:
            out.append(y)
    return out if record else y


def _min_distance(model: PlanarModel, xy: np.ndarray) -> float:
    return float(np.min(np.hypot(xy[:, 0] - model.xa, xy[:, 1] - model.ya)))


def solve_bvp(params: RobotParams, act: Actuation, phi: float = 0.0, n: int = DEFAULT_NODES,
              tol: float = DEFAULT_TOL, guess: float | None = None, previous: Shape | None = None,
              max_shots: int = MAX_SHOTS) -> Shape:
    """Shooting solution of the clamped-free rod under the magnet.

    Newton iteration on the initial curvature ``theta'(0)``; the derivative of
    the end residual is carried by the variational equations, whose position
    partials come from divided differences of sigma. Steps are halved when
    they fail to reduce the residual and a bracketing fallback takes over if
    that keeps failing. ``iterations`` on the result counts integrations.
    """
    if n < 64:
        raise ValueError("need at least 64 grid cells")
    act.check_plane(phi)
    L = params.L
    model = PlanarModel(params, act, phi)
    cell = L / n
    if previous is not None:
        curve = previous.xy
    else:
        s = np.linspace(0, L, n + 1)
        curve = np.column_stack([s, np.zeros_like(s)])
    if _min_distance(model, curve) <= cell:
        raise DomainError("magnet within one grid cell of the body curve")
    model.min_gap = 0.5 * cell

    if guess is None:
        guess = previous.slope0 if previous is not None else 0.0

    shots = 0

    last = {}

    def shoot(a):
        nonlocal shots
        shots += 1
        nodes = rk4(model.shooting_rhs, [0.0, a, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0], L, n, record=True)
        last[a] = nodes
        if len(last) > 8:
            del last[next(iter(last))]
        return nodes[-1][1], nodes[-1][5]

    if act.moment == 0:
        guess = 0.0
    a = guess
    F, dF = shoot(a)
    lo = hi = None  # bracket (a, F) pairs with opposite signs

    def note(a_, F_):
        nonlocal lo, hi
        if F_ < 0 and (lo is None or abs(F_) < abs(lo[1])):
            lo = (a_, F_)
        elif F_ > 0 and (hi is None or abs(F_) < abs(hi[1])):
            hi = (a_, F_)

    note(a, F)
    while abs(F) >= tol:
        if shots >= max_shots:
            raise ShootingError(f"shooting did not converge after {shots} integrations, "
                                f"residual {F:.3e}", F, act.psi)
        step = -F / dF if dF != 0 and math.isfinite(dF) else None
        accepted = False
        if step is not None:
            for _ in range(6):
                trial = a + step
                try:
                    Ft, dFt = shoot(trial)
                except (DomainError, OverflowError, ZeroDivisionError):
                    step *= 0.5
                    continue
                if math.isfinite(Ft):
                    note(trial, Ft)
                if math.isfinite(Ft) and abs(Ft) < abs(F):
                    a, F, dF = trial, Ft, dFt
                    accepted = True
                    break
                step *= 0.5
        if not accepted:
            if lo is None or hi is None:
                # expand outward from the best point to find a sign change
                width = max(1.0, abs(a))
                for direction in (1, -1) * 8:
                    trial = a + direction * width
                    width *= 2
                    try:
                        Ft, _ = shoot(trial)
                    except (DomainError, OverflowError, ZeroDivisionError):
                        continue
                    note(trial, Ft)
                    if lo is not None and hi is not None:
                        break
                if lo is None or hi is None:
                    raise ShootingError("no sign change found for the shooting residual", F, act.psi)
            mid = 0.5 * (lo[0] + hi[0])
            a = mid
            F, dF = shoot(a)
            note(a, F)

    arr = np.array(last[a])[:, :4]
    s = np.linspace(0, L, n + 1)
    arr[0, 0] = 0.0
    return Shape(s, arr[:, 0], arr[:, 1], arr[:, 2:4], phi, shots, float(abs(arr[-1, 1])))


def tip_angle(params: RobotParams, act: Actuation, phi: float = 0.0, **kw) -> float:
    return solve_bvp(params, act, phi, **kw).theta_L


# ---------------------------------------------------------------------------
# feasibility


def clearance_threshold(params: RobotParams, moment: float = DEFAULT_MOMENT) -> float:
    """Smallest magnet distance keeping the field-only Lipschitz bound admissible.

    Inverts ``load * mu0 M_A / (2 pi d^3) = (pi / 2L)^2`` in closed form.
    """
    x = 2 * LOAD_FACTOR * MU0 * moment * params.M * params.area * params.L**2 / (params.E * params.inertia)
    return x ** (1.0 / 3.0) / math.pi


@dataclass
class FeasibilityReport:
    min_distance: float
    threshold: float
    grid_cell: float
    no_contact: bool
    clearance_ok: bool

    @property
    def ok(self) -> bool:
        return self.no_contact and self.clearance_ok


def feasibility_check(params: RobotParams, act: Actuation, moment: float | None = None,
                      shape: Shape | None = None, phi: float = 0.0, n: int = DEFAULT_NODES) -> FeasibilityReport:
    """Distance diagnostics for the magnet against the body (never raises)."""
    M_A = act.moment if moment is None else moment
    model = PlanarModel(params, act, phi)
    if shape is None:
        s = np.linspace(0, params.L, n + 1)
        xy = np.column_stack([s, np.zeros_like(s)])
    else:
        xy = shape.xy
    d = _min_distance(model, xy)
    cell = params.L / n
    thr = clearance_threshold(params, M_A)
    return FeasibilityReport(d, thr, cell, d > cell, d > thr)


# ---------------------------------------------------------------------------
# sweeps


def extrapolate(xs: Sequence[float], ys: Sequence[float], x: float, order: int = 3) -> float:
    """Polynomial predictor through the last ``order + 1`` samples."""
    k = min(order + 1, len(xs))
    if k == 0:
        return 0.0
    if k == 1:
        return float(ys[-1])
    xs_, ys_ = np.asarray(xs[-k:]), np.asarray(ys[-k:])
    # Neville on a handful of points; avoids polyfit conditioning warnings
    p = list(ys_)
    for level in range(1, k):
        for i in range(k - level):
            p[i] = ((x - xs_[i + level]) * p[i] + (xs_[i] - x) * p[i + 1]) / (xs_[i] - xs_[i + level])
    return float(p[0])


@dataclass
class SweepResult:
    psi: np.ndarray
    theta_L: np.ndarray
    iterations: np.ndarray
    shapes: list = field(repr=False, default_factory=list)
    psi_min: float = float("nan")
    psi_max: float = float("nan")
    theta_min: float = float("nan")
    theta_max: float = float("nan")

    @property
    def workspace(self) -> tuple[float, float]:
        return self.theta_min, self.theta_max

    @property
    def width(self) -> float:
        return self.theta_max - self.theta_min

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["psi_rad", "theta_L_rad", "iterations"])
            for p, t, i in zip(self.psi, self.theta_L, self.iterations):
                w.writerow([f"{p:.10g}", f"{t:.12g}", int(i)])


def sweep_psi(params: RobotParams, act: Actuation, psi_grid, phi: float = 0.0, **kw) -> SweepResult:
    """Warm-started solves along a monotone psi grid (sequential by design)."""
    psi_grid = np.asarray(psi_grid, dtype=float)
    if psi_grid.size == 0:
        raise ValueError("empty psi grid")
    slopes, done, thetas, its, shapes = [], [], [], [], []
    for psi in psi_grid:
        guess = extrapolate(done, slopes, psi) if done else None
        try:
            sh = solve_bvp(params, act.with_psi(psi), phi, guess=guess, **kw)
        except ShootingError as exc:
            exc.psi = psi
            raise
        slopes.append(sh.slope0)
        done.append(psi)
        thetas.append(sh.theta_L)
        its.append(sh.iterations)
        shapes.append(sh)
    return SweepResult(psi_grid, np.array(thetas), np.array(its), shapes)


def _refine_extremum(params, act, phi, psi_grid, shapes, i, sign, xtol=1e-7, **kw):
    step = psi_grid[1] - psi_grid[0]
    seed = shapes[i].slope0

    def f(psi):
        return -sign * solve_bvp(params, act.with_psi(psi), phi, guess=seed, **kw).theta_L

    c = psi_grid[i]
    res = optimize.minimize_scalar(f, bracket=(c - step, c, c + step), method="golden",
                                   options={"xtol": xtol / max(abs(c), 1.0)})
    return float(res.x), float(-sign * res.fun)


def workspace_sweep(params: RobotParams, act: Actuation, psi_grid=None, phi: float = 0.0,
                    refine: bool = True, **kw) -> SweepResult:
    """Tip angle over a psi grid plus golden-section refined extremes."""
    if psi_grid is None:
        psi_grid = np.linspace(-math.pi, math.pi, 101)
    psi_grid = np.asarray(psi_grid, dtype=float)
    if psi_grid.size < 3:
        raise ValueError("psi grid needs at least 3 points")
    if psi_grid[-1] - psi_grid[0] < 2 * math.pi - 1e-9:
        raise ValueError("psi grid must cover a full period")
    res = sweep_psi(params, act, psi_grid, phi, **kw)
    imax, imin = int(np.argmax(res.theta_L)), int(np.argmin(res.theta_L))
    if refine:
        res.psi_max, res.theta_max = _refine_extremum(params, act, phi, psi_grid, res.shapes, imax, +1, **kw)
        res.psi_min, res.theta_min = _refine_extremum(params, act, phi, psi_grid, res.shapes, imin, -1, **kw)
    else:
        res.psi_max, res.theta_max = psi_grid[imax], res.theta_L[imax]
        res.psi_min, res.theta_min = psi_grid[imin], res.theta_L[imin]
    return res


def count_extrema(values, periodic: bool = True) -> tuple[int, int]:
    """Number of strict local maxima and minima of a sampled curve."""
    v = np.asarray(values, dtype=float)
    if periodic and np.isclose(v[0], v[-1], atol=1e-9, rtol=0):
        v = v[:-1]
    if periodic:
        prev, nxt = np.roll(v, 1), np.roll(v, -1)
    else:
        prev, nxt = v[:-2], v[2:]
        v = v[1:-1]
    return int(np.sum((v > prev) & (v >= nxt))), int(np.sum((v < prev) & (v <= nxt)))


# ---------------------------------------------------------------------------
# input-separated form


@dataclass(frozen=True)
class SinusoidDecomposition:
    vbar1: float
    vbar2: float
    vbar3: float = 0.0

    @property
    def amplitude(self) -> float:
        return math.copysign(math.hypot(self.vbar1, self.vbar2), self.vbar2)

    @property
    def phase(self) -> float:
        if self.vbar2 == 0:
            return math.copysign(math.pi / 2, self.vbar1) if self.vbar1 else 0.0
        return math.atan(self.vbar1 / self.vbar2)

    def theta_L(self, psi: float) -> float:
        return -self.vbar1 * math.cos(psi) + self.vbar2 * math.sin(psi)


def sinusoid_decomposition(shape: Shape, act: Actuation, params: RobotParams,
                           phi: float = 0.0) -> SinusoidDecomposition:
    """Row vector ``vbar`` with ``theta_L = vbar . m_hat_G(psi)`` on ``shape``.

    With theta(0) = 0 and theta'(L) = 0 the tip angle is
    ``-int_0^L s sigma(s) ds``; sigma is linear in the magnet direction, so
    each in-plane direction contributes one component. Integrated with the
    same RK4 steps as the shape for consistency.
    """
    model = PlanarModel(params, act, phi)
    n = len(shape.s) - 1

    def rhs(s, y):
        th, w, X, Y = y[:4]
        sx, sy = model.sigma_row(th, X, Y)
        return [w, model.sigma(th, X, Y), math.cos(th), math.sin(th), -s * sx, -s * sy]

    y = rk4(rhs, [0.0, shape.slope0, 0.0, 0.0, 0.0, 0.0], shape.L, n)
    return SinusoidDecomposition(y[4], y[5])
