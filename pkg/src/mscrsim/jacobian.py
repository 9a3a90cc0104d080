"""Sensitivity of the tip angle to the magnet rotation and position.

The analytic route solves the Sturm-Liouville problem

    J'' = q(s) J + r(s),   J(0) = 0,   J'(L) = 0

with ``q = d sigma / d theta`` (second field derivatives dropped) and
``r = d sigma / d psi``, as a superposition of two initial value problems.
Finite differences of the full boundary-value solve serve as the oracle.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .elastica import (Actuation, PlaneConfig, PlanarModel, RobotParams, Shape,
                       magnet_above_tip, rk4, solve_bvp, sweep_psi)

DEFAULT_DAMPING = 0.05


class JacobianContradiction(RuntimeError):
    """J2'(L) vanished although the admissibility test passed."""


@dataclass(frozen=True)
class LipschitzReport:
    K: float  # full bound with the gradient term, 1/m^2
    K_field: float  # field-only estimate used for the clearance bound
    B: float
    grad_norm: float
    hess_norm: float
    bound: float  # (pi / 2L)^2
    admissible: bool  # K_field in the admissible set
    admissible_full: bool


@dataclass
class JacobianProfile:
    s: np.ndarray
    J: np.ndarray
    dJ: np.ndarray
    method: str
    v: float = 0.0
    lipschitz: LipschitzReport | None = None

    @property
    def J_psi(self) -> float:
        return float(self.J[-1])


def admissible(K: float, L: float) -> bool:
    """Membership of K in [0, (pi/2L)^2] or one of the bands ((4k -+ 1) pi / 2L)^2."""
    if K < 0:
        return False
    if K <= (math.pi / (2 * L)) ** 2:
        return True
    root = math.sqrt(K) * 2 * L / math.pi  # band k covers [4k - 1, 4k + 1]
    k = round(root / 4)
    return k >= 1 and 4 * k - 1 <= root <= 4 * k + 1


def _body_xy(params: RobotParams, shape: Shape | None, n: int = 128) -> np.ndarray:
    if shape is not None:
        return shape.xy
    s = np.linspace(0, params.L, n + 1)
    return np.column_stack([s, np.zeros_like(s)])


def lipschitz_K(params: RobotParams, act: Actuation, shape: Shape | None = None,
                phi: float = 0.0) -> LipschitzReport:
    """Bound on |d sigma / d theta| with field norms maximised over the body.

    The second-gradient contribution is taken as zero. ``K_field`` keeps only
    the field magnitude term and is the quantity the clearance bound inverts.
    """
    model = PlanarModel(params, act, phi)
    B = G = 0.0
    for X, Y in _body_xy(params, shape):
        bx, by, g11, g12, g22 = model.fields(X, Y)
        B = max(B, math.hypot(bx, by))
        # out-of-plane diagonal entry follows from the zero trace
        G = max(G, float(np.max(np.abs(np.linalg.eigvalsh([[g11, g12], [g12, g22]])))), abs(g11 + g22))
    load = params.load
    K = load * (B + 3 * G * params.L)
    K_field = load * B
    bound = (math.pi / (2 * params.L)) ** 2
    return LipschitzReport(K, K_field, B, G, 0.0, bound, admissible(K_field, params.L),
                           admissible(K, params.L))


def _q(model: PlanarModel, th, X, Y):
    bx, by, g11, g12, g22 = model.fields(X, Y)
    c, s = math.cos(th), math.sin(th)
    # e = (c, s) body axis, t = (-s, c), rigid-rotation derivative x_theta = (-Y, X)
    gex, gey = g11 * X + g12 * Y, g12 * X + g22 * Y
    gtx, gty = -g11 * Y + g12 * X, -g12 * Y + g22 * X
    return model.C * (c * bx + s * by + c * gex + s * gey - 2.0 * (-s * gtx + c * gty))


def _r(model: PlanarModel, th, X, Y):
    sx, sy = model.sigma_row(th, X, Y)
    return sx * math.sin(model.psi) + sy * math.cos(model.psi)


def sl_coefficients(shape: Shape, act: Actuation, params: RobotParams, phi: float = 0.0):
    """``q`` and ``r`` sampled at the shape nodes."""
    model = PlanarModel(params, act, phi)
    q = np.array([_q(model, th, X, Y) for th, (X, Y) in zip(shape.theta, shape.xy)])
    r = np.array([_r(model, th, X, Y) for th, (X, Y) in zip(shape.theta, shape.xy)])
    return q, r


def analytic_jacobian(shape: Shape, act: Actuation, params: RobotParams,
                      phi: float = 0.0) -> JacobianProfile:
    model = PlanarModel(params, act, phi)
    n = len(shape.s) - 1

    def rhs(s, y):
        th, w, X, Y, j1, dj1, j2, dj2 = y
        q = _q(model, th, X, Y)
        return [w, model.sigma(th, X, Y), math.cos(th), math.sin(th),
                dj1, q * j1 + _r(model, th, X, Y), dj2, q * j2]

    nodes = np.array(rk4(rhs, [0.0, shape.slope0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], shape.L, n, record=True))
    lip = lipschitz_K(params, act, shape, phi)
    J1, dJ1, J2, dJ2 = nodes[:, 4], nodes[:, 5], nodes[:, 6], nodes[:, 7]
    if not lip.admissible:
        return JacobianProfile(shape.s, J1, dJ1, "fallback-J1", 0.0, lip)
    if dJ2[-1] <= 0:
        raise JacobianContradiction(
            f"J2'(L) = {dJ2[-1]:.3e} with K_field = {lip.K_field:.4g} <= {lip.bound:.4g}; "
            f"magnet at {act.position}, psi = {act.psi}")
    v = -dJ1[-1] / dJ2[-1]
    return JacobianProfile(shape.s, J1 + v * J2, dJ1 + v * dJ2, "analytical", float(v), lip)


def tip_jacobian(params: RobotParams, act: Actuation, phi: float = 0.0, **kw) -> float:
    shape = solve_bvp(params, act, phi, **kw)
    return analytic_jacobian(shape, act, params, phi).J_psi


def numeric_jacobian(params: RobotParams, act: Actuation, phi: float = 0.0, dpsi: float = 1e-4,
                     shape: Shape | None = None, **kw) -> float:
    """Central difference of the solved tip angle in psi."""
    guess = shape.slope0 if shape is not None else None
    up = solve_bvp(params, act.with_psi(act.psi + dpsi), phi, guess=guess, **kw).theta_L
    down = solve_bvp(params, act.with_psi(act.psi - dpsi), phi, guess=guess, **kw).theta_L
    return (up - down) / (2 * dpsi)


def position_jacobian(params: RobotParams, act: Actuation, phi: float = 0.0, dp: float = 1e-5,
                      shape: Shape | None = None, **kw) -> np.ndarray:
    """Row ``d theta_L / d p_G`` by central differences along the in-plane axes.

    The deflection plane is a mirror plane of the problem, so the tip angle
    is even in off-plane magnet offsets and the normal component is zero.
    """
    plane = PlaneConfig(phi)
    guess = shape.slope0 if shape is not None else None
    row = np.zeros(3)
    for axis in (np.array([1.0, 0.0, 0.0]), plane.o_hat):
        up = solve_bvp(params, act.with_position(act.position + dp * axis), phi, guess=guess, **kw).theta_L
        down = solve_bvp(params, act.with_position(act.position - dp * axis), phi, guess=guess, **kw).theta_L
        row += (up - down) / (2 * dp) * axis
    return row


def damped_jacobian(J_psi: float, lam: float = DEFAULT_DAMPING) -> float:
    """Sign-preserving floor on |J_psi| (sgn(0) taken as +1)."""
    if not lam > 0:
        raise ValueError("damping must be positive")
    if abs(J_psi) >= lam:
        return J_psi
    return lam if J_psi >= 0 else -lam


@dataclass
class JacobianMapRow:
    psi: float
    H: float
    theta_L: float
    J_analytic: float
    J_numeric: float


def jacobian_map(params: RobotParams, heights, psi_grid, phi: float = 0.0,
                 moment: float | None = None, dpsi: float = 1e-4) -> list[JacobianMapRow]:
    rows = []
    for H in heights:
        act = magnet_above_tip(params, H, phi=phi) if moment is None else \
            magnet_above_tip(params, H, moment=moment, phi=phi)
        sweep = sweep_psi(params, act, psi_grid, phi)
        for psi, shape in zip(sweep.psi, sweep.shapes):
            a = act.with_psi(psi)
            Ja = analytic_jacobian(shape, a, params, phi).J_psi
            Jn = numeric_jacobian(params, a, phi, dpsi, shape=shape)
            rows.append(JacobianMapRow(float(psi), float(H), shape.theta_L, Ja, Jn))
    return rows


def write_jacobian_map(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["psi_rad", "H_m", "J_analytic", "J_numeric"])
        for r in rows:
            w.writerow([f"{r.psi:.10g}", f"{r.H:.6g}", f"{r.J_analytic:.12g}", f"{r.J_numeric:.12g}"])


@dataclass
class SingularityRow:
    H: float
    psi_min: float
    psi_max: float


def _jpsi_fn(params, act, phi, seeds):
    def f(psi):
        # nearest precomputed slope is a good Newton seed
        guess = seeds[int(np.argmin(np.abs(seeds[:, 0] - psi))), 1]
        shape = solve_bvp(params, act.with_psi(psi), phi, guess=guess)
        return analytic_jacobian(shape, act.with_psi(psi), params, phi).J_psi
    return f


def singular_angles(params: RobotParams, act: Actuation, phi: float = 0.0, n_psi: int = 64,
                    xtol: float = 1e-9) -> tuple[float, float]:
    """(psi at the tip-angle minimum, psi at the maximum) from zeros of J_psi."""
    grid = np.linspace(-math.pi, math.pi, n_psi + 1)
    sweep = sweep_psi(params, act, grid, phi)
    J = np.array([analytic_jacobian(sh, act.with_psi(p), params, phi).J_psi
                  for p, sh in zip(sweep.psi, sweep.shapes)])
    seeds = np.column_stack([sweep.psi, [sh.slope0 for sh in sweep.shapes]])
    f = _jpsi_fn(params, act, phi, seeds)
    psi_min = psi_max = float("nan")
    for i in range(n_psi):
        if J[i] == 0 or J[i] * J[i + 1] < 0:
            root = grid[i] if J[i] == 0 else optimize.brentq(f, grid[i], grid[i + 1], xtol=xtol)
            if J[i] > 0 or (J[i] == 0 and J[i + 1] < 0):
                psi_max = root
            else:
                psi_min = root
    return psi_min, psi_max


def singularity_table(params: RobotParams, heights, phi: float = 0.0, n_psi: int = 64,
                      moment: float | None = None) -> list[SingularityRow]:
    rows = []
    for H in heights:
        act = magnet_above_tip(params, H, phi=phi) if moment is None else \
            magnet_above_tip(params, H, moment=moment, phi=phi)
        lo, hi = singular_angles(params, act, phi, n_psi)
        rows.append(SingularityRow(float(H), lo, hi))
    return rows


def write_singularities(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["H_m", "psi_min_rad", "psi_max_rad"])
        for r in rows:
            w.writerow([f"{r.H:.6g}", f"{r.psi_min:.10g}", f"{r.psi_max:.10g}"])
