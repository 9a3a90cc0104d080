import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mscrsim import elastica as el, jacobian as jc, magnetics as mg

P1 = el.PRESETS["mscr1"]


def frozen_gradient_q(params, act, th, X, Y, h=1e-6):
    """d sigma / d theta for a rigid rotation of the body, gradient held fixed."""
    C = params.load
    G0 = mg.dipole_gradient(np.array([X, Y, 0.0]) - act.position, act.m_hat(), act.moment)

    def sigma(dth):
        c, s = math.cos(dth), math.sin(dth)
        x = np.array([c * X - s * Y, s * X + c * Y, 0.0])
        xt = np.array([-x[1], x[0], 0.0])
        e = np.array([math.cos(th + dth), math.sin(th + dth), 0.0])
        t = np.array([-e[1], e[0], 0.0])
        b = mg.dipole_field(x - act.position, act.m_hat(), act.moment)
        return -C * (t @ b + xt @ G0 @ e)

    return (sigma(h) - sigma(-h)) / (2 * h)


def test_admissible_set():
    L = 0.024
    b = (math.pi / (2 * L)) ** 2
    assert jc.admissible(0.0, L) and jc.admissible(b, L)
    assert not jc.admissible(1.01 * b, L)
    assert not jc.admissible(4 * b, L)  # root 2 lies between bands
    assert jc.admissible(16 * b, L)  # root 4 is inside the first band
    assert not jc.admissible(-1.0, L)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.15, 0.3), st.floats(-math.pi, math.pi), st.floats(0, 1), st.floats(-0.6, 0.6))
def test_q_matches_frozen_gradient_oracle(H, psi, frac, th):
    act = el.magnet_above_tip(P1, H, psi)
    model = el.PlanarModel(P1, act)
    X, Y = frac * P1.L * math.cos(th), frac * P1.L * math.sin(th)
    q = jc._q(model, th, X, Y)
    ref = frozen_gradient_q(P1, act, th, X, Y)
    assert q == pytest.approx(ref, rel=1e-6, abs=1e-6 * P1.load * 1e-3)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.15, 0.3), st.floats(-math.pi, math.pi), st.floats(0, 1), st.floats(-0.6, 0.6))
def test_r_matches_psi_derivative(H, psi, frac, th):
    act = el.magnet_above_tip(P1, H, psi)
    X, Y = frac * P1.L * math.cos(th), frac * P1.L * math.sin(th)
    h = 1e-6
    up = el.PlanarModel(P1, act.with_psi(psi + h)).sigma(th, X, Y)
    down = el.PlanarModel(P1, act.with_psi(psi - h)).sigma(th, X, Y)
    r = jc._r(el.PlanarModel(P1, act), th, X, Y)
    assert r == pytest.approx((up - down) / (2 * h), rel=1e-6, abs=1e-4)


def test_zero_moment_gives_zero_jacobian():
    act = el.magnet_above_tip(P1, 0.2, 0.5, moment=0.0)
    shape = el.solve_bvp(P1, act)
    prof = jc.analytic_jacobian(shape, act, P1)
    assert np.max(np.abs(prof.J)) == 0.0


def test_profile_boundary_conditions():
    act = el.magnet_above_tip(P1, 0.2, 0.4)
    shape = el.solve_bvp(P1, act)
    prof = jc.analytic_jacobian(shape, act, P1)
    assert prof.method == "analytical"
    assert prof.J[0] == 0.0
    assert abs(prof.dJ[-1]) < 1e-9 * max(1.0, np.max(np.abs(prof.dJ)))


@pytest.mark.parametrize("psi", [-2.5, -1.0, 0.0, 0.7, 2.0])
def test_analytic_close_to_numeric(psi):
    act = el.magnet_above_tip(P1, 0.22, psi)
    shape = el.solve_bvp(P1, act)
    Ja = jc.analytic_jacobian(shape, act, P1).J_psi
    Jn = jc.numeric_jacobian(P1, act, shape=shape)
    assert abs(Ja - Jn) <= 0.1 * max(abs(Jn), 0.1)


def test_fallback_outside_admissible_set():
    # a strong magnet close to the rod breaks the field-only bound
    act = el.magnet_above_tip(P1, 0.11, 0.3)
    shape = el.solve_bvp(P1, act)
    prof = jc.analytic_jacobian(shape, act, P1)
    assert not prof.lipschitz.admissible
    assert prof.method == "fallback-J1"


def test_lipschitz_field_term():
    act = el.magnet_above_tip(P1, 0.2)
    rep = jc.lipschitz_K(P1, act)
    d = np.hypot(np.linspace(0, P1.L, 129) - P1.L, 0.2)
    bmax = max(np.linalg.norm(mg.dipole_field(np.array([x, 0, 0]) - act.position, act.m_hat()))
               for x in np.linspace(0, P1.L, 129))
    assert rep.K_field == pytest.approx(P1.load * bmax, rel=1e-12)
    assert rep.K >= rep.K_field
    assert d.min() == pytest.approx(0.2)


def test_clearance_threshold_is_admissibility_edge():
    d = el.clearance_threshold(P1)
    # on the principal axis at distance d the field-only bound sits at the edge
    K = P1.load * mg.on_axis_field(d)
    assert K == pytest.approx((math.pi / (2 * P1.L)) ** 2, rel=1e-12)


@pytest.mark.parametrize("J,expected", [(0.3, 0.3), (-0.3, -0.3), (0.01, 0.05), (-0.01, -0.05), (0.0, 0.05),
                                        (0.05, 0.05)])
def test_damped_jacobian(J, expected):
    assert jc.damped_jacobian(J, 0.05) == expected


def test_damped_jacobian_rejects_bad_floor():
    with pytest.raises(ValueError):
        jc.damped_jacobian(0.1, 0.0)


def test_position_jacobian_in_plane():
    act = el.magnet_above_tip(P1, 0.18, 0.9, phi=0.6)
    row = jc.position_jacobian(P1, act, 0.6)
    plane = el.PlaneConfig(0.6)
    assert row @ plane.n_hat == pytest.approx(0.0, abs=1e-15)
    assert abs(row[0]) > 0 and abs(row @ plane.o_hat) > 0
    # in-plane components agree with a coarser difference
    coarse = jc.position_jacobian(P1, act, 0.6, dp=1e-4)
    np.testing.assert_allclose(row, coarse, rtol=1e-3, atol=1e-6)


def test_singular_angles_are_tip_extrema():
    act = el.magnet_above_tip(P1, 0.2)
    lo, hi = jc.singular_angles(P1, act)
    ws = el.workspace_sweep(P1, act)
    assert lo == pytest.approx(ws.psi_min, abs=0.02)
    assert hi == pytest.approx(ws.psi_max, abs=0.02)


def test_jacobian_map_csv(tmp_path):
    rows = jc.jacobian_map(P1, [0.2], [0.0, 1.0])
    jc.write_jacobian_map(tmp_path / "j.csv", rows)
    lines = (tmp_path / "j.csv").read_text().splitlines()
    assert lines[0] == "psi_rad,H_m,J_analytic,J_numeric"
    assert len(lines) == 3
    jc.write_singularities(tmp_path / "s.csv", [jc.SingularityRow(0.2, -1.0, 1.0)])
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "H_m,psi_min_rad,psi_max_rad"
