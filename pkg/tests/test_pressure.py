import numpy as np
import pytest

from cbcfd.grid import BoundaryKind, Domain, Location, build_grid
from cbcfd.operators import context
from cbcfd.physics import Analytic, PhysicsConfig, PhysicsError, QuarterPower, quadratic_viscosity
from cbcfd.pressure import (
    PressureOperator,
    assemble_pressure_operator,
    divergence_residual,
    mobility_faces,
    solve_pressure_velocity,
)
from cbcfd.scenarios import get_scenario

from conftest import unit_grid
from oracles import dense_1d


def _k(x, y):
    return 1.0 + 0.5 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y) + 0.0 * x


def test_mobility_of_zero_concentration():
    g = unit_grid(6, bc=BoundaryKind.NOFLOW)
    phys = PhysicsConfig(porosity=0.1, permeability=_k, viscosity=QuarterPower(1.0, 41.0))
    ax, ay = mobility_faces(np.zeros((6, 6)), phys, g)
    X, Y = g.coords(Location.XFACE)
    np.testing.assert_allclose(ax, 1 / _k(X, Y), rtol=1e-14)
    ax, _ = mobility_faces(np.full((6, 6), 0.3), phys, g)
    np.testing.assert_allclose(ax, QuarterPower(1.0, 41.0)(0.3) / _k(X, Y), rtol=1e-13)


def test_mobility_composition_oracle(rng):
    g = unit_grid(6)
    C = rng.uniform(0, 1, (6, 6))
    phys = PhysicsConfig(porosity=0.1, permeability=_k, viscosity=Analytic(quadratic_viscosity))
    ax, ay = mobility_faces(C, phys, g)
    w = np.array([-1, 9, 9, -1]) / 16
    Xx, Yx = g.coords(Location.XFACE)
    Xy, Yy = g.coords(Location.YFACE)
    for k in range(6):
        for j in range(6):
            cx = sum(w[m] * C[(k - 2 + m) % 6, j] for m in range(4))
            cy = sum(w[m] * C[k, (j - 2 + m) % 6] for m in range(4))
            assert ax[k, j] == pytest.approx((1 + cx**2) / _k(Xx[k, j], Yx[k, j]), rel=1e-13)
            assert ay[k, j] == pytest.approx((1 + cy**2) / _k(Xy[k, j], Yy[k, j]), rel=1e-13)


def test_nonpositive_mobility_rejected():
    g = unit_grid(4)
    with pytest.raises(PhysicsError):
        PressureOperator(np.zeros((4, 4)), np.ones((4, 4)), g)


def test_dense_composition_oracle():
    for bc in BoundaryKind:
        g = unit_grid(4, bc=bc)
        op = assemble_pressure_operator(np.ones(g.shape(Location.XFACE)), np.ones(g.shape(Location.YFACE)), g)
        Dcf, Dfc, Lc, Lf, _, _ = dense_1d(4, g.hx, g.periodic)
        idx = np.arange(Lf.shape[0]) if g.periodic else np.arange(1, 4)
        Lf_inv = np.zeros_like(Lf)
        Lf_inv[np.ix_(idx, idx)] = np.linalg.inv(Lf[np.ix_(idx, idx)])
        A1 = -np.linalg.inv(Lc) @ Dfc @ Lf_inv @ Dcf
        I = np.eye(4)
        ref = np.kron(A1, I) + np.kron(I, A1)  # row-major (i, j) flattening
        np.testing.assert_allclose(op.dense(), ref, atol=1e-10 * np.abs(ref).max())


def test_constants_in_nullspace():
    for bc in BoundaryKind:
        g = unit_grid(6, bc=bc)
        op = PressureOperator(np.ones(g.shape(Location.XFACE)), np.ones(g.shape(Location.YFACE)), g)
        assert np.max(np.abs(op.apply(np.full((6, 6), 3.0)))) < 1e-10


def test_coercivity(rng):
    g = unit_grid(6)
    for _ in range(20):
        ax = rng.uniform(0.5, 2.0, (6, 6))
        ay = rng.uniform(0.5, 2.0, (6, 6))
        op = PressureOperator(ax, ay, g)
        w = rng.standard_normal((6, 6))
        w -= w.mean()
        gx, gy = op.face_gradient(w)
        form = np.sum(op.apply(w) * w) * g.hx * g.hy
        lower = (np.sum(gx**2 / ax) + np.sum(gy**2 / ay)) * g.hx * g.hy
        assert form > 0
        assert form == pytest.approx(lower, rel=1e-10)


def test_zero_source_gives_zero_solution(rng):
    g = unit_grid(6, bc=BoundaryKind.NOFLOW)
    phys = PhysicsConfig(porosity=0.1, permeability=1.0)
    sol = solve_pressure_velocity(rng.uniform(0, 1, (6, 6)), 0.0, phys, g)
    assert not sol.P.any() and not sol.Ux.any() and not sol.Uy.any()


def test_manufactured_velocity_is_fourth_order():
    sc = get_scenario("e1")
    errs = []
    ns = (20, 30, 40)
    for n in ns:
        g = unit_grid(n)
        Xc, Yc = g.coords(Location.CELL)
        sol = solve_pressure_velocity(np.array(sc.exact.c(Xc, Yc, 0.0)), 0.0, sc.physics, g, check_sources=False)
        assert sol.P[0, 0] == 0.0 and sol.residual <= 1e-12
        Xx, Yx = g.coords(Location.XFACE)
        Xy, Yy = g.coords(Location.YFACE)
        ex = sc.exact.ux(Xx, Yx, 0.0) - sol.Ux
        ey = sc.exact.uy(Xy, Yy, 0.0) - sol.Uy
        errs.append(np.sqrt((np.sum(ex**2) + np.sum(ey**2)) * g.hx * g.hy))
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(ns[1:]) / ns[:-1])
    assert np.all(orders > 3.8), orders


def test_five_spot_initial_velocity():
    sc = get_scenario("e3")
    g = build_grid(sc.domain, 50, 50, sc.bc)
    sol = solve_pressure_velocity(np.zeros((50, 50)), 0.0, sc.physics, g)
    assert not sol.Ux[[0, -1], :].any() and not sol.Uy[:, [0, -1]].any()
    res = divergence_residual(sol, sc.physics, g)
    assert np.max(np.abs(res)) <= 1e-10 * 0.075
    again = solve_pressure_velocity(np.zeros((50, 50)), 0.0, sc.physics, g)
    np.testing.assert_allclose(again.P, sol.P, atol=1e-12 * np.abs(sol.P).max())
