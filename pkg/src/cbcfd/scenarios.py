"""Built-in scenarios: two manufactured solutions and four quarter five-spot set-ups."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import sympy as sy

from .grid import BoundaryKind, Domain
from .physics import (
    Analytic,
    BearScheidegger,
    ManufacturedForcing,
    PhysicsConfig,
    Piecewise,
    QuadraticDispersion,
    QuarterPower,
    Well,
    WellConfig,
    quadratic_viscosity,
)

X, Y, T = sy.symbols("x y t", real=True)


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form fields of a manufactured solution, all as f(x, y, t)."""

    c: Callable
    p: Callable
    ux: Callable
    uy: Callable
    vx: Callable  # -dc/dx
    vy: Callable  # -dc/dy


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    domain: Domain
    bc: BoundaryKind
    t_end: float
    physics: PhysicsConfig
    initial_c: Callable  # c(x, y) at t = 0
    initial_v: Optional[tuple] = None  # (vx, vy) at t = 0; defaults to zero
    exact: Optional[ExactSolution] = None
    defaults: dict = field(default_factory=dict)  # nx, n_pressure, ratio_q

    @property
    def manufactured(self) -> bool:
        return self.exact is not None


def _lambdify(expr) -> Callable:
    f = sy.lambdify((X, Y, T), expr, modules="numpy")

    def wrapped(x, y, t=0.0):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(np.asarray(f(x, np.asarray(y, dtype=np.float64), t), dtype=np.float64), np.broadcast(x, np.asarray(y)).shape)

    return wrapped


def _lambdify_xy(expr) -> Callable:
    g = _lambdify(expr)
    return lambda x, y: g(x, y, 0.0)


@dataclass(frozen=True)
class ManufacturedData:
    """Symbolic description from which all sources are derived."""

    c: sy.Expr
    p: sy.Expr
    u: tuple
    phi: sy.Expr
    k: sy.Expr
    mu: Callable  # sympy-compatible function of c
    q_p: sy.Expr
    dispersion: Callable  # (phi, ux, uy) -> 2x2 sympy Matrix

    def forcings(self) -> dict:
        c, ux, uy = self.c, self.u[0], self.u[1]
        grad_c = sy.Matrix([sy.diff(c, X), sy.diff(c, Y)])
        D = self.dispersion(self.phi, ux, uy)
        flux = sy.Matrix([ux * c, uy * c]) - D * grad_c
        q = sy.diff(ux, X) + sy.diff(uy, Y)
        f_c = self.phi * sy.diff(c, T) + sy.diff(flux[0], X) + sy.diff(flux[1], Y) - self.q_p * c
        return {
            "q": q,
            "f_c": f_c,
            "px": sy.diff(self.p, X),
            "py": sy.diff(self.p, Y),
            "mobility": self.mu(c) / self.k,
            "vx": -grad_c[0],
            "vy": -grad_c[1],
        }


def _scalar_dispersion(alpha_m):
    return lambda phi, ux, uy: phi * alpha_m * sy.eye(2)


def _quadratic_dispersion(alpha_m, beta):
    return lambda phi, ux, uy: phi * (alpha_m * sy.eye(2) + beta * sy.Matrix([[ux * ux, ux * uy], [uy * ux, uy * uy]]))


def e1_data() -> ManufacturedData:
    pi = sy.pi
    s = sy.sin(pi * T / 2 + pi / 4)
    return ManufacturedData(
        c=sy.sin(5 * pi * T / 2 + pi / 4) * sy.cos(2 * pi * X) * sy.cos(2 * pi * Y),
        p=s * sy.sin(2 * pi * X) * sy.sin(2 * pi * Y),
        u=(s * sy.sin(2 * pi * X) * sy.cos(2 * pi * Y), s * sy.cos(2 * pi * X) * sy.sin(2 * pi * Y)),
        phi=(sy.cos(2 * pi * (X + Y)) + 2) / 4,
        k=(sy.sin(2 * pi * (X + Y)) + 2) ** 2,
        mu=lambda c: 1 + c**2,
        q_p=sy.sin(2 * pi * (X + Y + T)) - 2,
        dispersion=_scalar_dispersion(sy.sin(2 * pi * (X + Y)) + 2),
    )


def e2_data() -> ManufacturedData:
    pi = sy.pi
    return ManufacturedData(
        c=2 * sy.exp(T) * (X**2 * (X - 1) ** 2 + Y**2 * (Y - 1) ** 2),
        p=T**3 * sy.sin(pi * X) * sy.sin(pi * Y),
        u=(T**3 * X * (X - 1) * (2 * X - 1), T**3 * Y * (Y - 1) * (2 * Y - 1)),
        phi=(X + Y + 1) ** 2 / 10,
        k=(X + Y + 1) ** 3,
        mu=lambda c: 1 + c**2,
        q_p=sy.cos(2 * pi * (X + Y + T)) - 2,
        dispersion=_quadratic_dispersion(sy.Rational(1, 10), 1),
    )


def _manufactured(name, description, data: ManufacturedData, bc, dispersion, exact_mobility=True) -> Scenario:
    f = data.forcings()
    exact = ExactSolution(
        c=_lambdify(data.c),
        p=_lambdify(data.p),
        ux=_lambdify(data.u[0]),
        uy=_lambdify(data.u[1]),
        vx=_lambdify(f["vx"]),
        vy=_lambdify(f["vy"]),
    )
    sources = ManufacturedForcing(
        q=_lambdify(f["q"]),
        production=_lambdify(data.q_p),
        injection=_lambdify(f["f_c"]),
        velocity=(exact.ux, exact.uy),
        pressure_gradient=(_lambdify(f["px"]), _lambdify(f["py"])),
        mobility=_lambdify(f["mobility"]) if exact_mobility else None,
    )
    physics = PhysicsConfig(
        porosity=_lambdify_xy(data.phi),
        permeability=_lambdify_xy(data.k),
        viscosity=Analytic(quadratic_viscosity, "1+c^2"),
        dispersion=dispersion,
        sources=sources,
    )
    return Scenario(
        name=name,
        description=description,
        domain=Domain(0.0, 1.0, 0.0, 1.0),
        bc=bc,
        t_end=1.0,
        physics=physics,
        initial_c=lambda x, y: exact.c(x, y, 0.0),
        initial_v=(lambda x, y: exact.vx(x, y, 0.0), lambda x, y: exact.vy(x, y, 0.0)),
        exact=exact,
        defaults={"nx": 20, "ratio_q": 1},
    )


FIVE_SPOT_DOMAIN = Domain(0.0, 1000.0, 0.0, 1000.0)
FIVE_SPOT_WELLS = WellConfig(
    injectors=(Well(1000.0, 1000.0, 30.0, 1.0),),
    producers=(Well(0.0, 0.0, -30.0),),
)


def _five_spot(name, description, porosity, permeability, mobility_ratio, alpha_m, alpha_l, alpha_t):
    physics = PhysicsConfig(
        porosity=porosity,
        permeability=permeability,
        viscosity=QuarterPower(1.0, mobility_ratio),
        dispersion=BearScheidegger(alpha_m, alpha_l, alpha_t),
        sources=FIVE_SPOT_WELLS,
    )
    return Scenario(
        name=name,
        description=description,
        domain=FIVE_SPOT_DOMAIN,
        bc=BoundaryKind.NOFLOW,
        t_end=3600.0,
        physics=physics,
        initial_c=lambda x, y: np.zeros(np.broadcast(x, y).shape),
        defaults={"nx": 50, "n_pressure": 120, "ratio_q": 3},
    )


def e1_alpha_m(x, y):
    return np.sin(2 * np.pi * (x + y)) + 2.0


@lru_cache(maxsize=None)
def get_scenario(name: str) -> Scenario:
    if name == "e1":
        disp = BearScheidegger(alpha_m=e1_alpha_m)
        return _manufactured(
            "e1", "periodic manufactured solution, scalar diffusion", e1_data(), BoundaryKind.PERIODIC, disp,
            exact_mobility=False,
        )
    if name == "e2":
        disp = QuadraticDispersion(alpha_m=0.1, beta=1.0)
        return _manufactured(
            "e2", "no-flow manufactured solution, velocity-dependent tensor diffusion", e2_data(),
            BoundaryKind.NOFLOW, disp,
        )
    if name == "e3":
        return _five_spot("e3", "five-spot, homogeneous, M=1, molecular diffusion", 0.1, 80.0, 1.0, 10.0, 0.0, 0.0)
    if name == "e4":
        return _five_spot("e4", "five-spot, homogeneous, M=41, tensor dispersion", 0.1, 80.0, 41.0, 5.0, 50.0, 5.0)
    if name == "e5":
        k = Piecewise(20.0, ((0.0, np.inf, -np.inf, 500.0, 80.0),))
        return _five_spot("e5", "five-spot, layered permeability, M=41", 0.1, k, 41.0, 5.0, 50.0, 5.0)
    if name == "e6":
        phi = Piecewise(0.1, ((150.0, 550.0, 150.0, 550.0, 0.09),))
        k = Piecewise(80.0, ((150.0, 550.0, 150.0, 550.0, 25.0),))
        return _five_spot("e6", "five-spot, low-permeability inclusion, M=41", phi, k, 41.0, 5.0, 50.0, 5.0)
    raise KeyError(f"unknown scenario {name!r}")


SCENARIOS = ("e1", "e2", "e3", "e4", "e5", "e6")
