"""Pressure-velocity solve.

Eliminating the velocity from the compact Darcy system leaves a scalar
equation for the cell pressure,

    -Lx^-1 dx [ax^-1 Lx^-1 dx P] - Ly^-1 dy [ay^-1 Ly^-1 dy P] = q - (forcing terms),

which is solved matrix-free with GMRES. The preconditioner is the ordinary
second-order five-point operator with the same mobilities. The velocity is
then recovered from ``U = a^-1 (f - L^-1 d P)`` without differentiating P twice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .grid import GridSpec, Location
from .linsolve import LUPreconditioner, SolverError, SparseSystem, solve
from .operators import OperatorContext, context
from .physics import PhysicsConfig, PhysicsError, well_source_fields

PRESSURE_RTOL = 1e-12


@dataclass(frozen=True)
class PressureSolution:
    P: np.ndarray
    Ux: np.ndarray
    Uy: np.ndarray
    t: float
    residual: float
    iterations: int


def _dense_gradients(ctx: OperatorContext, axis: str):
    """Dense 1-D ``G = L_face^-1 delta_cf`` and ``G2 = L_cell^-1 delta_fc``."""
    key = ("pressure-G", axis)
    if key not in ctx._cache:
        line = ctx.lines[axis]
        G = line.solve_face(line.delta_cf.toarray())
        G2 = line.solve_cell(line.delta_fc.toarray())
        ctx._cache[key] = (G, G2)
    return ctx._cache[key]


def effective_face_forcing(fx: np.ndarray, fy: np.ndarray, grid: GridSpec):
    """``L^-1 (L f)`` where the right-hand ``L`` reads the boundary-face samples too.

    With periodic boundaries this is ``f`` itself. With no-flow boundaries the
    compact Darcy rows at the first interior faces need the forcing at the
    wall even though the velocity there is zero.
    """
    if grid.periodic:
        return fx, fy
    ctx = context(grid)
    lx, ly = ctx.lines["x"], ctx.lines["y"]
    gx = lx.solve_face(lx.L_face @ fx)
    gy = ly.solve_face(ly.L_face @ fy.T).T
    return gx, gy


def mobility_faces(C: np.ndarray, physics: PhysicsConfig, grid: GridSpec):
    """``a(T C) = mu(T C) / k`` on x-faces and y-faces."""
    ctx = context(grid)
    cx = ctx.along("x", ctx.lines["x"].T, C)
    cy = ctx.along("y", ctx.lines["y"].T, C)
    ax = physics.viscosity(cx) / physics.permeability_at(grid, Location.XFACE)
    ay = physics.viscosity(cy) / physics.permeability_at(grid, Location.YFACE)
    for a in (ax, ay):
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise PhysicsError("mobility must be finite and strictly positive")
    return ax, ay


class PressureOperator:
    """The reduced pressure operator for fixed face mobilities."""

    def __init__(self, ax: np.ndarray, ay: np.ndarray, grid: GridSpec):
        if np.any(ax <= 0) or np.any(ay <= 0):
            raise PhysicsError("mobility must be strictly positive")
        self.grid = grid
        self.ctx = context(grid)
        self.inv_ax = 1.0 / ax
        self.inv_ay = 1.0 / ay
        self.Gx, self.G2x = _dense_gradients(self.ctx, "x")
        self.Gy, self.G2y = _dense_gradients(self.ctx, "y")
        self.shape = (grid.nx, grid.ny)
        self.n = grid.nx * grid.ny

    def face_gradient(self, P: np.ndarray):
        """``(Lx^-1 dx P, Ly^-1 dy P)`` on the faces."""
        return self.Gx @ P, P @ self.Gy.T

    def apply(self, P: np.ndarray) -> np.ndarray:
        gx, gy = self.face_gradient(P)
        return -(self.G2x @ (self.inv_ax * gx)) - (self.inv_ay * gy) @ self.G2y.T

    def divergence_of(self, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        """``Lx^-1 dx fx + Ly^-1 dy fy`` on cells."""
        return self.G2x @ fx + fy @ self.G2y.T

    def matvec(self, p: np.ndarray) -> np.ndarray:
        return self.apply(p.reshape(self.shape)).ravel()

    def pinned_matvec(self, p: np.ndarray) -> np.ndarray:
        out = self.matvec(p)
        out[0] = p[0]
        return out

    def five_point(self) -> sp.csr_matrix:
        """Second-order analogue ``-dx ax^-1 dx - dy ay^-1 dy``, pinned at cell 0."""
        c = self.ctx
        S = -(c.Dx_fc @ sp.diags(self.inv_ax.ravel()) @ c.Dx_cf) - (
            c.Dy_fc @ sp.diags(self.inv_ay.ravel()) @ c.Dy_cf
        )
        return _pin_rows(S.tocsr())

    def dense(self, pinned: bool = False) -> np.ndarray:
        """Explicit matrix obtained by applying the operator to unit vectors."""
        f = self.pinned_matvec if pinned else self.matvec
        return np.column_stack([f(e) for e in np.eye(self.n)])


def _pin_rows(S: sp.csr_matrix) -> sp.csr_matrix:
    mask = np.ones(S.shape[0])
    mask[0] = 0.0
    e0 = sp.csr_matrix(([1.0], ([0], [0])), shape=S.shape)
    return (sp.diags(mask) @ S + e0).tocsr()


def assemble_pressure_operator(ax: np.ndarray, ay: np.ndarray, grid: GridSpec) -> PressureOperator:
    return PressureOperator(ax, ay, grid)


def solve_pressure_velocity(
    C: np.ndarray,
    t: float,
    physics: PhysicsConfig,
    grid: GridSpec,
    tol: float = PRESSURE_RTOL,
    x0: Optional[np.ndarray] = None,
    check_sources: bool = True,
) -> PressureSolution:
    """Solve the compact Darcy system for ``(P, Ux, Uy)`` with ``P[0, 0] = 0``."""
    ax, ay = mobility_faces(C, physics, grid)
    op = PressureOperator(ax, ay, grid)
    q, _, _ = well_source_fields(physics.sources, grid, t, check=check_sources)
    forcing = physics.sources.darcy_forcing(grid, t, ax, ay)
    if forcing is not None:
        forcing = effective_face_forcing(*forcing, grid)

    rhs = np.array(q, dtype=np.float64)
    if forcing is not None:
        fx, fy = forcing
        rhs -= op.divergence_of(op.inv_ax * fx, op.inv_ay * fy)
    rhs = rhs.ravel()
    rhs[0] = 0.0

    if np.linalg.norm(rhs) == 0.0:
        P = np.zeros(op.shape)
        res, its = 0.0, 0
    else:
        pre = LUPreconditioner(op.five_point())
        system = SparseSystem(rhs, action=op.pinned_matvec, preconditioner=pre)
        guess = None if x0 is None else np.asarray(x0, dtype=np.float64).ravel()
        try:
            P, res, its = solve(system, tol_rel=tol, max_iter=400, x0=guess, backward=True)
        except SolverError as exc:
            raise SolverError(f"pressure solve at t={t:g}: {exc}", exc.residual, exc.iterations) from exc
        P = P.reshape(op.shape)
        P = P - P[0, 0]  # the pinned row holds only to solver tolerance; constants do not change U

    gx, gy = op.face_gradient(P)
    if forcing is not None:
        gx = gx - forcing[0]
        gy = gy - forcing[1]
    Ux = -op.inv_ax * gx
    Uy = -op.inv_ay * gy
    if not grid.periodic:
        Ux[[0, -1], :] = 0.0
        Uy[:, [0, -1]] = 0.0
    return PressureSolution(P, Ux, Uy, t, res, its)


def divergence_residual(sol: PressureSolution, physics: PhysicsConfig, grid: GridSpec) -> np.ndarray:
    """``Ly dx Ux + Lx dy Uy - L q`` on cells."""
    ctx = context(grid)
    lx, ly = ctx.lines["x"], ctx.lines["y"]
    div = ctx.along("y", ly.L_cell, ctx.along("x", lx.delta_fc, sol.Ux))
    div += ctx.along("x", lx.L_cell, ctx.along("y", ly.delta_fc, sol.Uy))
    q, _, _ = well_source_fields(physics.sources, grid, sol.t, check=False)
    return div - ctx.along("y", ly.L_cell, ctx.along("x", lx.L_cell, q))
