"""Staggered spatial grids, the two-rate time grid, and discrete grid functions.

Storage conventions (all arrays are indexed ``[i, j]`` with x first):

* cell fields live at ``(x_i, y_j)`` and have shape ``(nx, ny)``;
  storage index ``i`` is the 1-based cell ``i + 1``.
* x-face fields live at ``(x_{k+1/2}, y_j)``.  With periodic boundaries the
  face ``x_{1/2}`` is the same as ``x_{nx+1/2}`` so there are ``nx`` distinct
  faces (storage index ``k`` is face ``k + 1/2``).  With no-flow boundaries
  all ``nx + 1`` faces are stored and the two boundary rows hold the
  (identically zero) normal component.
* y-face fields are the transpose of the above.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class BoundaryKind(str, enum.Enum):
    PERIODIC = "periodic"
    NOFLOW = "noflow"


class Location(str, enum.Enum):
    """Where a grid function lives, as (x-location, y-location) of c/f."""

    CELL = "cell"
    XFACE = "xface"
    YFACE = "yface"
    NODE = "node"  # (x-face, y-face) corners; only used as an intermediate

    @property
    def staggering(self) -> tuple[str, str]:
        return _STAGGER[self]

    @classmethod
    def from_staggering(cls, sx: str, sy: str) -> "Location":
        return _FROM_STAGGER[(sx, sy)]


_STAGGER = {
    Location.CELL: ("c", "c"),
    Location.XFACE: ("f", "c"),
    Location.YFACE: ("c", "f"),
    Location.NODE: ("f", "f"),
}
_FROM_STAGGER = {v: k for k, v in _STAGGER.items()}


class GridError(ValueError):
    pass


MIN_CELLS = 4


@dataclass(frozen=True)
class Domain:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise GridError(f"degenerate domain {self}")

    @property
    def lx(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def ly(self) -> float:
        return self.y_hi - self.y_lo

    @property
    def area(self) -> float:
        return self.lx * self.ly


@dataclass(frozen=True)
class GridSpec:
    domain: Domain
    nx: int
    ny: int
    bc: BoundaryKind = BoundaryKind.PERIODIC

    def __post_init__(self):
        if self.nx < MIN_CELLS or self.ny < MIN_CELLS:
            raise GridError(
                f"compact stencils need at least {MIN_CELLS} cells per direction, "
                f"got nx={self.nx}, ny={self.ny}"
            )
        object.__setattr__(self, "bc", BoundaryKind(self.bc))

    @property
    def hx(self) -> float:
        return self.domain.lx / self.nx

    @property
    def hy(self) -> float:
        return self.domain.ly / self.ny

    @property
    def periodic(self) -> bool:
        return self.bc is BoundaryKind.PERIODIC

    def n_along(self, axis: str) -> int:
        return self.nx if axis == "x" else self.ny

    def h_along(self, axis: str) -> float:
        return self.hx if axis == "x" else self.hy

    def n_faces(self, axis: str) -> int:
        n = self.n_along(axis)
        return n if self.periodic else n + 1

    def centers(self, axis: str) -> np.ndarray:
        lo = self.domain.x_lo if axis == "x" else self.domain.y_lo
        n, h = self.n_along(axis), self.h_along(axis)
        return lo + (np.arange(n) + 0.5) * h

    def edges(self, axis: str) -> np.ndarray:
        """Coordinates of the stored faces along ``axis``."""
        lo = self.domain.x_lo if axis == "x" else self.domain.y_lo
        h = self.h_along(axis)
        return lo + np.arange(self.n_faces(axis)) * h

    def _axis_coords(self, axis: str, kind: str) -> np.ndarray:
        return self.centers(axis) if kind == "c" else self.edges(axis)

    def shape(self, loc: Location) -> tuple[int, int]:
        sx, sy = Location(loc).staggering
        nx = self.nx if sx == "c" else self.n_faces("x")
        ny = self.ny if sy == "c" else self.n_faces("y")
        return nx, ny

    def coords(self, loc: Location) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (``indexing='ij'``) of the node coordinates of ``loc``."""
        sx, sy = Location(loc).staggering
        return np.meshgrid(
            self._axis_coords("x", sx), self._axis_coords("y", sy), indexing="ij"
        )

    def norm_mask(self, loc: Location) -> np.ndarray:
        """Weights (0/1) selecting the nodes summed by the discrete inner products.

        Face sums run over ``i = 1..n`` (faces ``x_{3/2} .. x_{n+1/2}``).  In
        periodic storage that is every stored face; with no-flow storage the
        left boundary face is excluded.
        """
        mask = np.ones(self.shape(loc))
        if not self.periodic:
            sx, sy = Location(loc).staggering
            if sx == "f":
                mask[0, :] = 0.0
            if sy == "f":
                mask[:, 0] = 0.0
        return mask


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_pressure: int
    ratio_q: int = 1

    def __post_init__(self):
        if self.t_end <= 0:
            raise GridError("t_end must be positive")
        if self.n_pressure < 1 or self.ratio_q < 1:
            raise GridError("n_pressure and ratio_q must be positive integers")

    @property
    def dt_p(self) -> float:
        return self.t_end / self.n_pressure

    @property
    def dt_c(self) -> float:
        return self.dt_p / self.ratio_q

    @property
    def n_conc(self) -> int:
        return self.n_pressure * self.ratio_q

    def t_conc(self, n: int) -> float:
        return n * self.dt_c

    def t_pressure(self, m: int) -> float:
        return m * self.dt_p

    @classmethod
    def from_steps(cls, t_end: float, n_conc: int, ratio_q: int) -> "TimeGrid":
        if n_conc % ratio_q:
            raise GridError(f"N_c={n_conc} is not a multiple of Q={ratio_q}")
        return cls(t_end, n_conc // ratio_q, ratio_q)


@dataclass(frozen=True)
class Field:
    """A grid function tagged with its grid and staggered location."""

    values: np.ndarray
    grid: GridSpec
    loc: Location

    def __post_init__(self):
        loc = Location(self.loc)
        object.__setattr__(self, "loc", loc)
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape(loc):
            raise GridError(
                f"{loc.value} field on this grid needs shape {self.grid.shape(loc)}, "
                f"got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    def like(self, values: np.ndarray, loc: Location | None = None) -> "Field":
        return Field(values, self.grid, self.loc if loc is None else loc)

    @classmethod
    def zeros(cls, grid: GridSpec, loc: Location) -> "Field":
        return cls(np.zeros(grid.shape(loc)), grid, loc)


def build_grid(domain: Domain, nx: int, ny: int, bc=BoundaryKind.PERIODIC) -> GridSpec:
    return GridSpec(domain, int(nx), int(ny), BoundaryKind(bc))


def _check_same(a: Field, b: Field, loc: Location) -> None:
    if a.grid != b.grid:
        raise GridError("fields live on different grids")
    if a.loc is not loc or b.loc is not loc:
        raise GridError(
            f"inner product expects {loc.value} fields, got {a.loc.value}/{b.loc.value}"
        )


_KIND_LOC = {"M": Location.CELL, "x": Location.XFACE, "y": Location.YFACE}


def _kahan_sum(values: np.ndarray) -> float:
    # fsum is exactly rounded, which subsumes compensated summation
    return math.fsum(np.ravel(values))


def discrete_inner(kind: str, a, b) -> float:
    """Discrete L2 inner product ``(a, b)_kind`` for kind in M, x, y, T.

    For ``T`` the arguments are pairs ``(a_x, a_y)`` and ``(b_x, b_y)``.
    """
    if kind == "T":
        (ax, ay), (bx, by) = a, b
        return discrete_inner("x", ax, bx) + discrete_inner("y", ay, by)
    try:
        loc = _KIND_LOC[kind]
    except KeyError:
        raise GridError(f"unknown inner product kind {kind!r}") from None
    _check_same(a, b, loc)
    g = a.grid
    return g.hx * g.hy * _kahan_sum(g.norm_mask(loc) * a.values * b.values)


def norm(kind: str, a) -> float:
    return float(np.sqrt(max(discrete_inner(kind, a, a), 0.0)))


def max_norm(a: Field) -> float:
    return float(np.max(np.abs(a.values)))


def h1_seminorm(w: Field) -> float:
    """``|w|_1`` with ``|w|_1^2 = ||delta_x w||_x^2 + ||delta_y w||_y^2``."""
    from .operators import apply_delta

    dx = apply_delta("x", w)
    dy = apply_delta("y", w)
    return float(np.sqrt(discrete_inner("x", dx, dx) + discrete_inner("y", dy, dy)))


def sample_function(
    f: Callable[..., np.ndarray], loc: Location, grid: GridSpec, t: float | None = None
) -> Field:
    """Evaluate ``f(x, y)`` (or ``f(x, y, t)``) at the nodes of ``loc``."""
    X, Y = grid.coords(loc)
    vals = f(X, Y) if t is None else f(X, Y, t)
    vals = np.broadcast_to(np.asarray(vals, dtype=np.float64), X.shape).copy()
    return Field(vals, grid, loc)
