"""Mass-error functional, manufactured-solution error norms and convergence orders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .grid import Field, GridSpec, Location, discrete_inner, h1_seminorm, norm
from .operators import context
from .physics import PhysicsConfig, well_source_fields


def _cell_L(grid: GridSpec, a: np.ndarray) -> np.ndarray:
    ctx = context(grid)
    return ctx.along("y", ctx.lines["y"].L_cell, ctx.along("x", ctx.lines["x"].L_cell, a))


def cell_integral(grid: GridSpec, a: np.ndarray) -> float:
    """``sum h_x h_y (L a)`` with exactly rounded summation."""
    return grid.hx * grid.hy * math.fsum(_cell_L(grid, a).ravel())


@dataclass
class MassSeries:
    times: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    scale: float = 1.0  # |sum h^2 L[phi C^0]| + |sum h^2 L[|source|]| style normaliser

    @property
    def max_abs(self) -> float:
        return max((abs(e) for e in self.errors), default=0.0)

    @property
    def max_relative(self) -> float:
        return self.max_abs / self.scale if self.scale > 0 else self.max_abs


class MassTracker:
    """Accumulates the discrete mass error step by step.

    ``E^n = m(C^n) - m(C^0) - dt sum_l s_l`` with ``m(C) = sum h^2 L[phi C]``
    and ``s_l = sum h^2 L[q_P Cbar + c_I q_I]`` at ``t^{l+1/2}``.
    """

    def __init__(self, grid: GridSpec, physics: PhysicsConfig, C0: np.ndarray, t0: float = 0.0):
        self.grid = grid
        self.physics = physics
        self.phi = physics.porosity_at(grid, Location.CELL)
        self.m0 = cell_integral(grid, self.phi * C0)
        self._source_terms: list = []
        self._scale_terms = [abs(cell_integral(grid, np.abs(self.phi * C0)))]
        self.series = MassSeries([t0], [0.0])

    def record(self, C_old: np.ndarray, C_new: np.ndarray, t_mid: float, dt: float, t_new: float) -> float:
        _, inj, q_p = well_source_fields(self.physics.sources, self.grid, t_mid, check=False)
        cbar = 0.5 * (C_old + C_new)
        self._source_terms.append(dt * cell_integral(self.grid, q_p * cbar + inj))
        self._scale_terms.append(dt * abs(cell_integral(self.grid, np.abs(q_p * cbar) + np.abs(inj))))
        mn = cell_integral(self.grid, self.phi * C_new)
        err = math.fsum([mn, -self.m0] + [-s for s in self._source_terms])
        self.series.times.append(t_new)
        self.series.errors.append(err)
        self.series.scale = max(
            abs(mn), abs(self.m0), math.fsum(self._scale_terms), np.finfo(float).tiny
        )
        return err


def mass_error(
    concentrations: Sequence[np.ndarray],
    times: Sequence[float],
    physics: PhysicsConfig,
    grid: GridSpec,
) -> MassSeries:
    """Mass-error series of a stored trajectory ``C^0, C^1, ...`` at ``times``."""
    if len(concentrations) != len(times) or len(times) == 0:
        raise ValueError("the trajectory needs one concentration per time level")
    tracker = MassTracker(grid, physics, concentrations[0], times[0])
    for n in range(1, len(times)):
        dt = times[n] - times[n - 1]
        tracker.record(concentrations[n - 1], concentrations[n], times[n - 1] + 0.5 * dt, dt, times[n])
    return tracker.series


@dataclass(frozen=True)
class ErrorRecord:
    nx: int
    e_c: float
    e_p: float
    e_u: float
    e_p_h1: float
    orders: Optional[tuple] = None  # orders for (e_c, e_p, e_u, e_p_h1)

    def values(self) -> tuple:
        return (self.e_c, self.e_p, self.e_u, self.e_p_h1)


def aligned_pressure(P: np.ndarray, p_exact: np.ndarray) -> np.ndarray:
    """Shift ``P`` by a constant so that it agrees with the exact pressure in the first cell."""
    return P + (p_exact[0, 0] - P[0, 0])


def error_norms(grid: GridSpec, exact, t: float, C: np.ndarray, P: np.ndarray,
                Ux: np.ndarray, Uy: np.ndarray) -> ErrorRecord:
    """Discrete errors of a numerical solution against a manufactured one at time ``t``."""
    if exact is None:
        raise ValueError("error norms need a manufactured exact solution")
    Xc, Yc = grid.coords(Location.CELL)
    Xx, Yx = grid.coords(Location.XFACE)
    Xy, Yy = grid.coords(Location.YFACE)
    ec = Field(exact.c(Xc, Yc, t) - C, grid, Location.CELL)
    pe = exact.p(Xc, Yc, t)
    ep = Field(pe - aligned_pressure(P, pe), grid, Location.CELL)
    eux = Field(exact.ux(Xx, Yx, t) - Ux, grid, Location.XFACE)
    euy = Field(exact.uy(Xy, Yy, t) - Uy, grid, Location.YFACE)
    e_u = math.sqrt(max(discrete_inner("T", (eux, euy), (eux, euy)), 0.0))
    return ErrorRecord(grid.nx, norm("M", ec), norm("M", ep), e_u, h1_seminorm(ep))


def eoc_pair(e1: float, e2: float, n1: int, n2: int) -> float:
    return math.log(e1 / e2) / math.log(n2 / n1)


def eoc(records: Sequence[ErrorRecord]) -> list:
    """Fill in pairwise orders ``ln(e1/e2) / ln(N2/N1)``; the first row has none."""
    if len(records) < 2:
        raise ValueError("at least two records are needed")
    ns = [r.nx for r in records]
    if len(set(ns)) != len(ns):
        raise ValueError("duplicate grid sizes")
    out = [replace(records[0], orders=None)]
    for a, b in zip(records[:-1], records[1:]):
        orders = tuple(eoc_pair(x, y, a.nx, b.nx) for x, y in zip(a.values(), b.values()))
        out.append(replace(b, orders=orders))
    return out
