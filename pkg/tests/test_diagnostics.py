import math

import numpy as np
import pytest

from cbcfd.diagnostics import ErrorRecord, MassTracker, aligned_pressure, cell_integral, eoc, eoc_pair, error_norms, mass_error
from cbcfd.grid import BoundaryKind, Location
from cbcfd.physics import PhysicsConfig
from cbcfd.scenarios import get_scenario

from conftest import unit_grid


def test_zero_trajectory_has_zero_mass_error():
    g = unit_grid(5)
    phys = PhysicsConfig(porosity=0.2, permeability=1.0)
    z = np.zeros((5, 5))
    s = mass_error([z, z, z], [0.0, 0.1, 0.2], phys, g)
    assert s.errors == [0.0, 0.0, 0.0]
    assert s.max_abs == 0.0


def test_mass_error_formula(rng):
    g = unit_grid(6, bc=BoundaryKind.NOFLOW)
    sc = get_scenario("e2")
    C = [rng.standard_normal((6, 6)) for _ in range(3)]
    t = [0.0, 0.1, 0.3]
    s = mass_error(C, t, sc.physics, g)
    assert s.errors[0] == 0.0
    phi = sc.physics.porosity_at(g, Location.CELL)
    src = 0.0
    for n in (1, 2):
        dt = t[n] - t[n - 1]
        tm = t[n - 1] + dt / 2
        f = sc.physics.sources.fields(g, tm)
        src += dt * cell_integral(g, f.production * 0.5 * (C[n] + C[n - 1]) + f.injection)
        ref = cell_integral(g, phi * C[n]) - cell_integral(g, phi * C[0]) - src
        assert s.errors[n] == pytest.approx(ref, rel=1e-12, abs=1e-14)
    with pytest.raises(ValueError):
        mass_error(C, t[:2], sc.physics, g)


def test_error_norms_of_exact_samples_vanish():
    sc = get_scenario("e1")
    g = unit_grid(8)
    X, Y = g.coords(Location.CELL)
    Xx, Yx = g.coords(Location.XFACE)
    Xy, Yy = g.coords(Location.YFACE)
    t = 0.4
    rec = error_norms(g, sc.exact, t, sc.exact.c(X, Y, t), sc.exact.p(X, Y, t) + 3.0,
                      sc.exact.ux(Xx, Yx, t), sc.exact.uy(Xy, Yy, t))
    assert rec.values() == pytest.approx((0, 0, 0, 0), abs=1e-14)
    with pytest.raises(ValueError):
        error_norms(g, None, t, X, X, Xx, Xy)


def test_pressure_alignment():
    P = np.array([[0.0, 1.0], [2.0, 3.0]])
    pe = P + 5.0
    np.testing.assert_allclose(aligned_pressure(P, pe), pe)


def test_eoc_examples():
    assert eoc_pair(1e-4, 6.25e-6, 10, 20) == pytest.approx(4.0)
    assert eoc_pair(3.86e-05, 7.62e-06, 20, 30) == pytest.approx(4.00, abs=0.005)
    recs = eoc([ErrorRecord(10, 1e-4, 2e-4, 3e-4, 4e-4), ErrorRecord(20, 6.25e-6, 1.25e-5, 1.875e-5, 2.5e-5)])
    assert recs[0].orders is None
    assert recs[1].orders == pytest.approx((4, 4, 4, 4))


def test_eoc_random_and_scaling(rng):
    ns = [10, 17, 23, 40]
    e = np.sort(rng.uniform(1e-8, 1e-3, 4))[::-1]
    recs = eoc([ErrorRecord(n, v, v, v, v) for n, v in zip(ns, e)])
    for k in range(1, 4):
        ref = math.log(e[k - 1] / e[k]) / math.log(ns[k] / ns[k - 1])
        assert recs[k].orders[0] == pytest.approx(ref, rel=1e-14)
    scaled = eoc([ErrorRecord(n, 7 * v, v, v, v) for n, v in zip(ns, e)])
    for a, b in zip(recs[1:], scaled[1:]):
        assert a.orders[0] == pytest.approx(b.orders[0], rel=1e-12)


def test_eoc_rejects_duplicates():
    with pytest.raises(ValueError):
        eoc([ErrorRecord(10, 1, 1, 1, 1), ErrorRecord(10, 1, 1, 1, 1)])
    with pytest.raises(ValueError):
        eoc([ErrorRecord(10, 1, 1, 1, 1)])


def test_tracker_first_entry_is_exactly_zero(rng):
    g = unit_grid(5)
    tr = MassTracker(g, PhysicsConfig(porosity=0.2, permeability=1.0), rng.standard_normal((5, 5)))
    assert tr.series.errors == [0.0]
