import numpy as np
import pytest

from cbcfd.grid import BoundaryKind, Domain, Location, build_grid
from cbcfd.physics import (
    Analytic,
    BearScheidegger,
    CompatibilityError,
    ManufacturedForcing,
    PhysicsConfig,
    PhysicsError,
    Piecewise,
    QuarterPower,
    ViscosityDomainError,
    Well,
    WellConfig,
    check_compatibility,
    dispersion_tensor,
    quadratic_viscosity,
    viscosity,
    well_source_fields,
)
from cbcfd.scenarios import get_scenario

from conftest import unit_grid


def test_quarter_power_examples():
    c = np.linspace(0, 1, 11)
    np.testing.assert_allclose(viscosity(QuarterPower(1.0, 1.0), c), 1.0)
    assert viscosity(QuarterPower(1.0, 41.0), 1.0) == pytest.approx(1 / 41)
    assert viscosity(QuarterPower(2.0, 41.0), 0.0) == pytest.approx(2.0)


def test_analytic_viscosity():
    assert viscosity(Analytic(quadratic_viscosity), 0.5) == pytest.approx(1.25)


def test_quarter_power_monotone_and_clamped():
    mu = QuarterPower(1.0, 41.0)
    vals = mu(np.linspace(0, 1, 101))
    assert np.all(np.diff(vals) < 0)
    assert mu(1.5) == mu(1.1)


def test_quarter_power_domain_error():
    with pytest.raises(ViscosityDomainError):
        QuarterPower(1.0, 1e-8, clamp=(-5.0, 5.0))(2.0)


def _physics(phi=0.1, **kw):
    return PhysicsConfig(porosity=phi, permeability=80.0, dispersion=BearScheidegger(**kw))


def test_dispersion_zero_velocity():
    D = dispersion_tensor(_physics(alpha_m=5.0, alpha_l=50.0, alpha_t=5.0), (1.0, 2.0), (0.0, 0.0))
    np.testing.assert_allclose(D, 0.1 * 5.0 * np.eye(2))


def test_dispersion_axis_aligned():
    D = dispersion_tensor(_physics(alpha_m=5.0, alpha_l=50.0, alpha_t=5.0), (1.0, 2.0), (1.0, 0.0))
    np.testing.assert_allclose(D, np.diag([5.5, 1.0]), atol=1e-15)


def test_dispersion_eigenvalues(rng):
    phys = _physics(alpha_m=5.0, alpha_l=50.0, alpha_t=5.0)
    for _ in range(50):
        u = rng.standard_normal(2) * 10 ** rng.uniform(-3, 2)
        D = dispersion_tensor(phys, (0.0, 0.0), u)
        assert np.allclose(D, D.T)
        s = np.linalg.norm(u)
        ev = np.sort(np.linalg.eigvalsh(D))
        ref = np.sort([0.1 * (5 + 50 * s), 0.1 * (5 + 5 * s)])
        np.testing.assert_allclose(ev, ref, rtol=1e-12)
        assert ev[0] > 0


def test_dispersion_parameter_validation():
    with pytest.raises(PhysicsError):
        BearScheidegger(alpha_m=0.0)
    with pytest.raises(PhysicsError):
        BearScheidegger(alpha_m=1.0, alpha_l=-1.0)


def test_piecewise_half_open_boxes():
    k = Piecewise(20.0, ((0.0, np.inf, -np.inf, 500.0, 80.0),))
    np.testing.assert_allclose(k(np.array([10.0, 10.0, 10.0]), np.array([499.0, 500.0, 501.0])), [80, 20, 20])


def test_five_spot_wells():
    g = build_grid(Domain(0, 1000, 0, 1000), 50, 50, BoundaryKind.NOFLOW)
    wells = get_scenario("e3").physics.sources
    q, inj, q_p = well_source_fields(wells, g, 0.0)
    assert q[-1, -1] == pytest.approx(0.075) and q[0, 0] == pytest.approx(-0.075)
    assert inj[-1, -1] == pytest.approx(0.075) and q_p[0, 0] == pytest.approx(-0.075)
    assert np.count_nonzero(q) == 2
    assert abs(q.sum() * g.hx * g.hy) < 1e-12
    assert abs(check_compatibility(g, q)) < 1e-12


def test_no_wells():
    g = unit_grid(6, bc=BoundaryKind.NOFLOW)
    for f in well_source_fields(WellConfig(), g, 0.0):
        assert not f.any()


def test_incompatible_wells_rejected():
    g = unit_grid(6, bc=BoundaryKind.NOFLOW)
    wells = WellConfig(injectors=(Well(1.0, 1.0, 2.0),), producers=(Well(0.0, 0.0, -1.0),))
    with pytest.raises(CompatibilityError):
        well_source_fields(wells, g, 0.0)


def test_compatibility_with_hatted_L(rng):
    # Sum(L q) weighs each cell by a column sum of the one-sided L, which is
    # not 1 next to a wall; deposits in mirror-image cells still cancel.
    g = unit_grid(7, bc=BoundaryKind.NOFLOW)
    for _ in range(10):
        i, j = rng.integers(0, 7, size=2)
        q = np.zeros((7, 7))
        q[i, j] += 1.0
        q[6 - i, 6 - j] -= 1.0
        assert abs(check_compatibility(g, q)) < 1e-12
    q = np.zeros((7, 7))
    q[0, 0], q[3, 3] = 1.0, -1.0
    with pytest.raises(CompatibilityError):
        check_compatibility(g, q)


def test_manufactured_source_is_divergence():
    sc = get_scenario("e1")
    g = unit_grid(8)
    q, _, _ = well_source_fields(sc.physics.sources, g, 0.3, check=False)
    X, Y = g.coords(Location.CELL)
    h = 1e-6
    div = (sc.exact.ux(X + h, Y, 0.3) - sc.exact.ux(X - h, Y, 0.3)) / (2 * h)
    div += (sc.exact.uy(X, Y + h, 0.3) - sc.exact.uy(X, Y - h, 0.3)) / (2 * h)
    np.testing.assert_allclose(q, div, atol=1e-7)


def test_manufactured_darcy_forcing_needs_mobility():
    f = get_scenario("e1").physics.sources
    assert isinstance(f, ManufacturedForcing) and f.mobility is None
    with pytest.raises(PhysicsError):
        f.darcy_forcing(unit_grid(4), 0.0)
