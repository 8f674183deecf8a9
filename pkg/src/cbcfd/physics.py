"""Physical coefficients: porosity, permeability, viscosity, dispersion, sources."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np

from .grid import GridSpec, Location

ScalarFn = Callable[..., np.ndarray]
Coefficient = Union[float, ScalarFn]


class PhysicsError(ValueError):
    pass


class ViscosityDomainError(PhysicsError):
    pass


class CompatibilityError(PhysicsError):
    pass


def evaluate(coef: Coefficient, x, y) -> np.ndarray:
    """Evaluate a constant or a callable ``coef(x, y)`` at broadcast points."""
    x = np.asarray(x, dtype=np.float64)
    if callable(coef):
        return np.broadcast_to(np.asarray(coef(x, np.asarray(y)), dtype=np.float64), x.shape)
    return np.full(x.shape, float(coef))


@dataclass(frozen=True)
class Piecewise:
    """Piecewise-constant coefficient: ``default`` outside the listed boxes.

    Each box is ``(x0, x1, y0, y1, value)`` and includes its lower/left edges
    but not its upper/right ones; later boxes win where boxes overlap.
    """

    default: float
    boxes: tuple = ()

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.full(x.shape, float(self.default))
        for x0, x1, y0, y1, v in self.boxes:
            out[(x >= x0) & (x < x1) & (y >= y0) & (y < y1)] = v
        return out


# -- viscosity ---------------------------------------------------------------


@dataclass(frozen=True)
class QuarterPower:
    """mu(c) = mu0 * [M^(1/4) c + (1 - c)]^(-4)."""

    mu0: float = 1.0
    mobility_ratio: float = 1.0
    clamp: tuple = (-0.1, 1.1)

    def __call__(self, c):
        c = np.clip(np.asarray(c, dtype=np.float64), *self.clamp)
        base = self.mobility_ratio**0.25 * c + (1.0 - c)
        if np.any(base <= 0.0):
            raise ViscosityDomainError(
                f"quarter-power bracket non-positive (min {np.min(base):.3e})"
            )
        return self.mu0 * base**-4


@dataclass(frozen=True)
class Analytic:
    """Viscosity given by an arbitrary vectorised function of c."""

    func: Callable[[np.ndarray], np.ndarray]
    label: str = "analytic"

    def __call__(self, c):
        return np.asarray(self.func(np.asarray(c, dtype=np.float64)), dtype=np.float64)


def quadratic_viscosity(c):
    return 1.0 + c * c


# -- dispersion ----------------------------------------------------------------


@dataclass(frozen=True)
class BearScheidegger:
    """D = phi (alpha_m I + alpha_l |u| E(u) + alpha_t |u| E_perp(u))."""

    alpha_m: Coefficient
    alpha_l: float = 0.0
    alpha_t: float = 0.0
    eps_u: float = 1e-14

    def __post_init__(self):
        if not callable(self.alpha_m) and self.alpha_m <= 0:
            raise PhysicsError("molecular diffusivity must be positive")
        if self.alpha_l < 0 or self.alpha_t < 0 or self.eps_u <= 0:
            raise PhysicsError("dispersivities must be >= 0 and eps_u > 0")

    @property
    def velocity_dependent(self) -> bool:
        return self.alpha_l != 0.0 or self.alpha_t != 0.0

    def components(self, phi, ux, uy, x, y):
        am = evaluate(self.alpha_m, x, y)
        ux = np.asarray(ux, dtype=np.float64)
        uy = np.asarray(uy, dtype=np.float64)
        speed = np.hypot(ux, uy)
        iso = phi * (am + self.alpha_t * speed)
        big = speed > self.eps_u
        # (alpha_l - alpha_t) u u^T / |u|, zero below the regularisation floor
        w = np.where(big, (self.alpha_l - self.alpha_t) / np.where(big, speed, 1.0), 0.0)
        d11 = iso + phi * w * ux * ux
        d22 = iso + phi * w * uy * uy
        d12 = phi * w * ux * uy
        return d11, d12, d12, d22


@dataclass(frozen=True)
class QuadraticDispersion:
    """D = phi (alpha_m I + beta u u^T)."""

    alpha_m: Coefficient
    beta: float = 1.0

    @property
    def velocity_dependent(self) -> bool:
        return self.beta != 0.0

    def components(self, phi, ux, uy, x, y):
        am = evaluate(self.alpha_m, x, y)
        ux = np.asarray(ux, dtype=np.float64)
        uy = np.asarray(uy, dtype=np.float64)
        d11 = phi * (am + self.beta * ux * ux)
        d22 = phi * (am + self.beta * uy * uy)
        d12 = phi * self.beta * ux * uy
        return d11, d12, d12, d22


DispersionModel = Union[BearScheidegger, QuadraticDispersion]


# -- sources -----------------------------------------------------------------


@dataclass(frozen=True)
class SourceFields:
    """Cell samples of q, the injected mass source c_I q_I, and q_P."""

    q: np.ndarray
    injection: np.ndarray
    production: np.ndarray


@dataclass(frozen=True)
class Well:
    x: float
    y: float
    rate: float
    concentration: float = 1.0


@dataclass(frozen=True)
class WellConfig:
    injectors: tuple = ()
    producers: tuple = ()

    def __post_init__(self):
        for w in self.injectors:
            if w.rate <= 0:
                raise PhysicsError(f"injection rate must be positive: {w}")
            if not 0.0 <= w.concentration <= 1.0:
                raise PhysicsError(f"injected concentration must lie in [0, 1]: {w}")
        for w in self.producers:
            if w.rate >= 0:
                raise PhysicsError(f"production rate must be negative: {w}")

    def nearest_cell(self, grid: GridSpec, well: Well) -> tuple[int, int]:
        d = grid.domain
        if not (d.x_lo <= well.x <= d.x_hi and d.y_lo <= well.y <= d.y_hi):
            raise PhysicsError(f"well {well} lies outside the domain")
        i = min(max(int(math.floor((well.x - d.x_lo) / grid.hx)), 0), grid.nx - 1)
        j = min(max(int(math.floor((well.y - d.y_lo) / grid.hy)), 0), grid.ny - 1)
        return i, j

    def fields(self, grid: GridSpec, t: float) -> SourceFields:
        area = grid.hx * grid.hy
        q_i = np.zeros((grid.nx, grid.ny))
        inj = np.zeros_like(q_i)
        q_p = np.zeros_like(q_i)
        for w in self.injectors:
            i, j = self.nearest_cell(grid, w)
            q_i[i, j] += w.rate / area
            inj[i, j] += w.concentration * w.rate / area
        for w in self.producers:
            i, j = self.nearest_cell(grid, w)
            q_p[i, j] += w.rate / area
        return SourceFields(q_i + q_p, inj, q_p)

    def darcy_forcing(self, grid: GridSpec, t: float, ax=None, ay=None):
        return None


@dataclass(frozen=True)
class ManufacturedForcing:
    """Analytic sources for manufactured solutions.

    ``injection`` plays the role of c_I q_I and carries the residual of the
    concentration equation. The Darcy residual ``a u + grad p`` is formed
    from the exact velocity and pressure gradient. ``mobility`` gives the
    exact ``a(c(x, y, t), x, y)``; when it is ``None`` the face mobility of
    the discrete solve is used instead, which decouples the pressure error
    from the concentration error. Samples cover all faces including the
    boundary ones.
    """

    q: ScalarFn
    production: ScalarFn
    injection: ScalarFn
    velocity: Optional[tuple] = None  # (ux, uy)
    pressure_gradient: Optional[tuple] = None  # (dp/dx, dp/dy)
    mobility: Optional[ScalarFn] = None

    def fields(self, grid: GridSpec, t: float) -> SourceFields:
        X, Y = grid.coords(Location.CELL)
        s = lambda f: np.broadcast_to(np.asarray(f(X, Y, t), dtype=np.float64), X.shape).copy()
        return SourceFields(s(self.q), s(self.injection), s(self.production))

    def darcy_forcing(self, grid: GridSpec, t: float, ax=None, ay=None):
        if self.velocity is None:
            return None
        if self.mobility is None and (ax is None or ay is None):
            raise PhysicsError("the Darcy forcing needs the face mobilities")
        out = []
        for loc, a, u, dp in zip((Location.XFACE, Location.YFACE), (ax, ay), self.velocity, self.pressure_gradient):
            Xf, Yf = grid.coords(loc)
            if self.mobility is not None:
                a = self.mobility(Xf, Yf, t)
            out.append(a * np.broadcast_to(u(Xf, Yf, t), Xf.shape) + np.broadcast_to(dp(Xf, Yf, t), Xf.shape))
        return tuple(np.asarray(f, dtype=np.float64) for f in out)


class SourceModel(Protocol):
    def fields(self, grid: GridSpec, t: float) -> SourceFields: ...

    def darcy_forcing(self, grid: GridSpec, t: float, ax=None, ay=None): ...


NO_WELLS = WellConfig()


@dataclass(frozen=True)
class PhysicsConfig:
    porosity: Coefficient
    permeability: Coefficient
    viscosity: Callable = field(default_factory=QuarterPower)
    dispersion: DispersionModel = field(default_factory=lambda: BearScheidegger(1.0))
    sources: SourceModel = NO_WELLS

    def porosity_at(self, grid: GridSpec, loc: Location) -> np.ndarray:
        X, Y = grid.coords(loc)
        return evaluate(self.porosity, X, Y)

    def permeability_at(self, grid: GridSpec, loc: Location) -> np.ndarray:
        X, Y = grid.coords(loc)
        return evaluate(self.permeability, X, Y)

    def mobility(self, c, k):
        """a(c) = mu(c) / k."""
        return self.viscosity(c) / k


def viscosity(model, c):
    return model(c)


def dispersion_tensor(physics: PhysicsConfig, point: Sequence[float], u: Sequence[float]):
    """The 2x2 dispersion tensor at one point for velocity ``u``."""
    x, y = (np.asarray(float(v)) for v in point)
    phi = evaluate(physics.porosity, x, y)
    d11, d12, d21, d22 = physics.dispersion.components(phi, u[0], u[1], x, y)
    return np.array([[float(d11), float(d12)], [float(d21), float(d22)]])


def discrete_source_integral(grid: GridSpec, q: np.ndarray) -> tuple[float, float]:
    """Return ``(sum (L q) h_x h_y, sum |L q| h_x h_y)`` on the cells."""
    from .operators import context

    ctx = context(grid)
    lq = ctx.along("y", ctx.lines["y"].L_cell, ctx.along("x", ctx.lines["x"].L_cell, q))
    area = grid.hx * grid.hy
    return math.fsum(lq.ravel()) * area, math.fsum(np.abs(lq).ravel()) * area


def check_compatibility(grid: GridSpec, q: np.ndarray, rtol: float = 1e-10) -> float:
    total, scale = discrete_source_integral(grid, q)
    if scale > 0 and abs(total) > rtol * scale:
        raise CompatibilityError(
            f"source is not compatible: sum(Lq) h^2 = {total:.3e} (scale {scale:.3e})"
        )
    return total


def well_source_fields(sources: SourceModel, grid: GridSpec, t: float, check: bool = True):
    """Cell fields ``(q, c_I q_I, q_P)`` at time ``t``."""
    f = sources.fields(grid, t)
    if check and isinstance(sources, WellConfig):
        check_compatibility(grid, f.q)
    return f.q, f.injection, f.production
