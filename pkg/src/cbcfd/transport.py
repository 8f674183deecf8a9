"""Crank-Nicolson compact concentration step.

The unknowns of one step are ``(C, Vx, Vy)`` at the new time level, with
the face unknowns restricted to interior faces under no-flow boundaries.
The flux ``W`` is eliminated from the mass balance and recovered explicitly
after the solve.

Every coefficient block has the form ``left @ diag(w) @ right`` with fixed
sparse ``left``/``right``, so the global matrix has a fixed sparsity pattern
whose values depend linearly on the coefficient vectors. :class:`BlockPattern`
precomputes that linear map once per grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .grid import GridSpec, Location
from .linsolve import LUPreconditioner, SolverError, SparseSystem, direct_solve, solve
from .operators import OperatorContext, context
from .physics import PhysicsConfig, evaluate, well_source_fields

TRANSPORT_RTOL = 1e-12
REFACTOR_ITERATIONS = 12


@dataclass(frozen=True)
class TransportState:
    C: np.ndarray
    Vx: np.ndarray
    Vy: np.ndarray
    Wx: np.ndarray
    Wy: np.ndarray
    t: float


# -- velocity extrapolation ------------------------------------------------------


@dataclass
class VelocityHistory:
    """Pressure-time velocities needed to build ``U_#``.

    In the first pressure window (``m == 0``) the pair is ``(U^0, U^{1,*})``;
    afterwards it is ``(U^{m-1}, U^m)``.
    """

    dt_p: float
    U0: tuple
    U_pred: Optional[tuple] = None
    U_prev: Optional[tuple] = None
    U_curr: Optional[tuple] = None
    m: int = 0

    def advance(self, U_new: tuple) -> None:
        """Record the velocity at pressure time ``t_p^{m+1}``."""
        self.U_prev = self.U0 if self.m == 0 else self.U_curr
        self.U_curr = U_new
        self.m += 1

    def weights(self, t: float) -> tuple:
        """Weights ``(w_old, w_new)`` applied to the history pair."""
        tm = self.m * self.dt_p
        eps = 1e-12 * max(1.0, abs(t))
        if self.m == 0:
            if t < -eps or t > self.dt_p + eps:
                raise ValueError(f"t={t} outside the first pressure window")
            s = t / self.dt_p
            return 1.0 - s, s
        if t <= tm - eps or t > tm + self.dt_p + eps:
            raise ValueError(f"t={t} outside the pressure window ({tm}, {tm + self.dt_p}]")
        t_prev = tm - self.dt_p
        return -(t - tm) / self.dt_p, (t - t_prev) / self.dt_p

    def pair(self) -> tuple:
        if self.m == 0:
            if self.U_pred is None:
                raise ValueError("the predicted velocity is needed in the first window")
            return self.U0, self.U_pred
        return self.U_prev, self.U_curr


def extrapolate_velocity(history: VelocityHistory, t_target: float) -> tuple:
    w_old, w_new = history.weights(t_target)
    old, new = history.pair()
    return tuple(w_old * a + w_new * b for a, b in zip(old, new))


# -- coefficient fields ----------------------------------------------------------


def _interior_mask(grid: GridSpec, loc: Location) -> np.ndarray:
    m = np.ones(grid.shape(loc))
    if not grid.periodic:
        if loc is Location.XFACE:
            m[[0, -1], :] = 0.0
        else:
            m[:, [0, -1]] = 0.0
    return m


@dataclass(frozen=True)
class Dispersion:
    """Tensor entries on the faces: ``(D11, D12)`` on x-faces, ``(D21, D22)`` on y-faces."""

    d11: np.ndarray
    d12: np.ndarray
    d21: np.ndarray
    d22: np.ndarray


def face_dispersion(Ux: np.ndarray, Uy: np.ndarray, physics: PhysicsConfig, grid: GridSpec) -> Dispersion:
    """Evaluate D with the face-collocated velocity pairs ``(Ux, Hx Uy)`` and ``(Hy Ux, Uy)``."""
    ctx = context(grid)
    uy_on_x = (ctx.Hx @ Uy.ravel()).reshape(grid.shape(Location.XFACE))
    ux_on_y = (ctx.Hy @ Ux.ravel()).reshape(grid.shape(Location.YFACE))
    Xx, Yx = grid.coords(Location.XFACE)
    Xy, Yy = grid.coords(Location.YFACE)
    phx = evaluate(physics.porosity, Xx, Yx)
    phy = evaluate(physics.porosity, Xy, Yy)
    d11, d12, _, _ = physics.dispersion.components(phx, Ux, uy_on_x, Xx, Yx)
    _, _, d21, d22 = physics.dispersion.components(phy, ux_on_y, Uy, Xy, Yy)
    mx = _interior_mask(grid, Location.XFACE)
    my = _interior_mask(grid, Location.YFACE)
    return Dispersion(d11 * mx, d12 * mx, d21 * my, d22 * my)


def recover_flux(C, Vx, Vy, Ux, Uy, disp: Dispersion, grid: GridSpec):
    """``W = U T C + D (V, H V)`` on interior faces; zero on no-flow walls."""
    ctx = context(grid)
    tx = ctx.along("x", ctx.lines["x"].T, C)
    ty = ctx.along("y", ctx.lines["y"].T, C)
    hvy = (ctx.Hx @ Vy.ravel()).reshape(Vx.shape)
    hvx = (ctx.Hy @ Vx.ravel()).reshape(Vy.shape)
    Wx = Ux * tx + disp.d11 * Vx + disp.d12 * hvy
    Wy = Uy * ty + disp.d21 * hvx + disp.d22 * Vy
    if not grid.periodic:
        Wx[[0, -1], :] = 0.0
        Wy[:, [0, -1]] = 0.0
    return Wx, Wy


def initial_W(C0, Vx0, Vy0, U0: tuple, physics: PhysicsConfig, grid: GridSpec):
    disp = face_dispersion(U0[0], U0[1], physics, grid)
    return recover_flux(C0, Vx0, Vy0, U0[0], U0[1], disp, grid)


def compact_gradient(C: np.ndarray, grid: GridSpec):
    """``V`` solving ``L V + delta C = 0`` on the interior faces."""
    ctx = context(grid)
    lx, ly = ctx.lines["x"], ctx.lines["y"]
    Vx = -lx.solve_face(lx.delta_cf @ C)
    Vy = -ly.solve_face(ly.delta_cf @ C.T).T
    return Vx, Vy


# -- block pattern ---------------------------------------------------------------


class BlockPattern:
    """Fixed sparsity pattern of the block matrix with values linear in the coefficients.

    Coefficient vector layout: ``[s (cells), Ux, Uy, D11, D21, D12, D22]`` with
    face vectors flattened over all stored faces. The mass block is
    ``L diag(s)`` with ``s = (2/dt) phi - q_P``.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        ctx = context(grid)
        self.ctx = ctx
        nc = grid.nx * grid.ny
        fxd = ctx.face_dofs(Location.XFACE)
        fyd = ctx.face_dofs(Location.YFACE)
        self.nc, self.nvx, self.nvy = nc, fxd.size, fyd.size
        self.n = nc + fxd.size + fyd.size
        self.fx_dofs, self.fy_dofs = fxd, fyd
        nfx = ctx.size(Location.XFACE)
        nfy = ctx.size(Location.YFACE)

        LyDx = (ctx.Ly_cell @ ctx.Dx_fc).tocsr()
        LxDy = (ctx.Lx_cell @ ctx.Dy_fc).tocsr()
        self.LyDx, self.LxDy = LyDx, LxDy
        Ix = sp.identity(nfx, format="csr")[:, fxd]
        Iy = sp.identity(nfy, format="csr")[:, fyd]
        Hy = ctx.Hy[:, fxd]
        Hx = ctx.Hx[:, fyd]
        c0, c1, c2 = 0, nc, nc + fxd.size

        offsets = np.cumsum([0, nc, nfx, nfy, nfx, nfy, nfx, nfy])
        self.param_offsets = offsets
        self.n_params = offsets[-1]
        # (left, right, row offset, col offset, parameter block)
        terms = [
            (ctx.L_cell2, sp.identity(nc, format="csr"), 0, c0, 0),
            (LyDx, ctx.Tx, 0, c0, 1),
            (LxDy, ctx.Ty, 0, c0, 2),
            (LyDx, Ix, 0, c1, 3),
            (LxDy, Hy, 0, c1, 4),
            (LyDx, Hx, 0, c2, 5),
            (LxDy, Iy, 0, c2, 6),
        ]
        rows, cols, pidx, vals = [], [], [], []
        for left, right, r0, col0, blk in terms:
            r, c, k, v = _triple_product_entries(left, right)
            rows.append(r + r0)
            cols.append(c + col0)
            pidx.append(k + offsets[blk])
            vals.append(v)
        # constant gradient rows
        const = _gradient_rows(ctx, fxd, fyd, nc)

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        pidx = np.concatenate(pidx)
        vals = np.concatenate(vals)
        keys = np.concatenate([rows * self.n + cols, const.row.astype(np.int64) * self.n + const.col])
        uniq, inv = np.unique(keys, return_inverse=True)
        self.indptr = np.searchsorted(uniq // self.n, np.arange(self.n + 1)).astype(np.int64)
        self.indices = (uniq % self.n).astype(np.int64)
        nvar = rows.size
        self.B = sp.csr_matrix((vals, (inv[:nvar], pidx)), shape=(uniq.size, self.n_params))
        self.const = np.bincount(inv[nvar:], weights=const.data, minlength=uniq.size)

    def matrix(self, params: np.ndarray) -> sp.csr_matrix:
        data = self.const + self.B @ params
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def params(self, s, Ux, Uy, disp: Dispersion) -> np.ndarray:
        return np.concatenate(
            [np.ravel(a) for a in (s, Ux, Uy, disp.d11, disp.d21, disp.d12, disp.d22)]
        )

    def split(self, z: np.ndarray):
        g = self.grid
        C = z[: self.nc].reshape(g.nx, g.ny)
        Vx = np.zeros(g.shape(Location.XFACE))
        Vy = np.zeros(g.shape(Location.YFACE))
        Vx.ravel()[self.fx_dofs] = z[self.nc : self.nc + self.nvx]
        Vy.ravel()[self.fy_dofs] = z[self.nc + self.nvx :]
        return C, Vx, Vy

    def join(self, C, Vx, Vy) -> np.ndarray:
        return np.concatenate([np.ravel(C), np.ravel(Vx)[self.fx_dofs], np.ravel(Vy)[self.fy_dofs]])


def _gradient_rows(ctx: OperatorContext, fxd, fyd, nc) -> sp.coo_matrix:
    nvx, nvy = fxd.size, fyd.size
    zc = sp.csr_matrix((nc, nc))
    top = sp.hstack([zc, sp.csr_matrix((nc, nvx)), sp.csr_matrix((nc, nvy))])
    mid = sp.hstack([ctx.Dx_cf[fxd, :], ctx.Lx_face[fxd][:, fxd], sp.csr_matrix((nvx, nvy))])
    bot = sp.hstack([ctx.Dy_cf[fyd, :], sp.csr_matrix((nvy, nvx)), ctx.Ly_face[fyd][:, fyd]])
    return sp.vstack([top, mid, bot]).tocoo()


def _triple_product_entries(left: sp.spmatrix, right: sp.spmatrix):
    """Entries of ``left diag(w) right`` as ``(row, col, k, value)`` with weight ``w_k``."""
    L = sp.csc_matrix(left)
    R = sp.csr_matrix(right)
    L.eliminate_zeros()
    R.eliminate_zeros()
    rows, cols, ks, vals = [], [], [], []
    for k in range(L.shape[1]):
        li = L.indices[L.indptr[k] : L.indptr[k + 1]]
        lv = L.data[L.indptr[k] : L.indptr[k + 1]]
        rj = R.indices[R.indptr[k] : R.indptr[k + 1]]
        rv = R.data[R.indptr[k] : R.indptr[k + 1]]
        if li.size == 0 or rj.size == 0:
            continue
        rows.append(np.repeat(li, rj.size))
        cols.append(np.tile(rj, li.size))
        vals.append(np.outer(lv, rv).ravel())
        ks.append(np.full(li.size * rj.size, k))
    return (
        np.concatenate(rows).astype(np.int64),
        np.concatenate(cols).astype(np.int64),
        np.concatenate(ks).astype(np.int64),
        np.concatenate(vals),
    )


_PATTERNS: dict = {}


def block_pattern(grid: GridSpec) -> BlockPattern:
    if grid not in _PATTERNS:
        _PATTERNS[grid] = BlockPattern(grid)
    return _PATTERNS[grid]


# -- system assembly and step --------------------------------------------------------


@dataclass
class TransportSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    pattern: BlockPattern
    U: tuple
    disp: Dispersion
    dt: float
    t_mid: float
    mass_coefficient: np.ndarray  # (2/dt) phi - q_P on cells

    def action(self, z: np.ndarray) -> np.ndarray:
        """Matrix-free application of the block operator built from grid operators."""
        return block_action(z, self.pattern, self.U, self.disp, self.mass_coefficient)


def block_action(z, pattern: BlockPattern, U: tuple, disp: Dispersion, s: np.ndarray) -> np.ndarray:
    """``[A1 A2 A3; dx Lx 0; dy 0 Ly] z`` composed from the 1-D line operators."""
    g = pattern.grid
    ctx = pattern.ctx
    lx, ly = ctx.lines["x"], ctx.lines["y"]
    C, Vx, Vy = pattern.split(z)
    Ux, Uy = U
    Lc = lambda a: ctx.along("y", ly.L_cell, ctx.along("x", lx.L_cell, a))
    divx = lambda f: ctx.along("y", ly.L_cell, ctx.along("x", lx.delta_fc, f))
    divy = lambda f: ctx.along("x", lx.L_cell, ctx.along("y", ly.delta_fc, f))
    Hx = lambda f: ctx.along("y", ly.Tstar, ctx.along("x", lx.T, f))
    Hy = lambda f: ctx.along("x", lx.Tstar, ctx.along("y", ly.T, f))
    row1 = (
        Lc(s * C)
        + divx(Ux * ctx.along("x", lx.T, C))
        + divy(Uy * ctx.along("y", ly.T, C))
        + divx(disp.d11 * Vx + disp.d12 * Hx(Vy))
        + divy(disp.d21 * Hy(Vx) + disp.d22 * Vy)
    )
    row2 = ctx.along("x", lx.delta_cf, C) + ctx.along("x", lx.L_face, Vx)
    row3 = ctx.along("y", ly.delta_cf, C) + ctx.along("y", ly.L_face, Vy)
    return np.concatenate([row1.ravel(), row2.ravel()[pattern.fx_dofs], row3.ravel()[pattern.fy_dofs]])


def assemble_transport_system(
    U_next: tuple,
    state: TransportState,
    t_mid: float,
    dt: float,
    physics: PhysicsConfig,
    grid: GridSpec,
    disp: Optional[Dispersion] = None,
) -> TransportSystem:
    """Block matrix and right-hand side of one Crank-Nicolson step."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    pattern = block_pattern(grid)
    ctx = pattern.ctx
    Ux, Uy = U_next
    if disp is None:
        disp = face_dispersion(Ux, Uy, physics, grid)
    phi = physics.porosity_at(grid, Location.CELL)
    _, inj, q_p = well_source_fields(physics.sources, grid, t_mid, check=False)
    s = (2.0 / dt) * phi - q_p
    A = pattern.matrix(pattern.params(s, Ux, Uy, disp))
    src = 2.0 * inj + (2.0 / dt) * phi * state.C + q_p * state.C
    r1 = ctx.L_cell2 @ src.ravel() - pattern.LyDx @ state.Wx.ravel() - pattern.LxDy @ state.Wy.ravel()
    rhs = np.concatenate([r1, np.zeros(pattern.nvx + pattern.nvy)])
    return TransportSystem(A, rhs, pattern, (Ux, Uy), disp, dt, t_mid, s)


class TransportSolver:
    """Solves successive concentration steps, reusing a lagged LU preconditioner."""

    def __init__(self, physics: PhysicsConfig, grid: GridSpec, tol: float = TRANSPORT_RTOL,
                 refactor_iterations: int = REFACTOR_ITERATIONS):
        self.physics = physics
        self.grid = grid
        self.tol = tol
        self.refactor_iterations = refactor_iterations
        self._pre: dict = {}
        self._static_disp = None
        self.factorizations = 0
        self.last_iterations = 0
        self.last_residual = 0.0

    def _dispersion(self, U: tuple) -> Dispersion:
        if not self.physics.dispersion.velocity_dependent:
            if self._static_disp is None:
                self._static_disp = face_dispersion(U[0] * 0.0, U[1] * 0.0, self.physics, self.grid)
            return self._static_disp
        return face_dispersion(U[0], U[1], self.physics, self.grid)

    def _factor(self, system: TransportSystem) -> LUPreconditioner:
        pre = LUPreconditioner(system.matrix)
        self._pre[system.dt] = pre
        self.factorizations += 1
        return pre

    def solve_system(self, system: TransportSystem, x0: Optional[np.ndarray] = None) -> np.ndarray:
        pre = self._pre.get(system.dt)
        if pre is None:
            pre = self._factor(system)
        lin = SparseSystem(system.rhs, matrix=system.matrix, preconditioner=pre)
        try:
            z, res, its = solve(lin, tol_rel=self.tol, max_iter=200, x0=x0, fallback=False, refinements=1)
        except SolverError:
            z, res, its = None, np.inf, self.refactor_iterations + 1
        if z is None or its > self.refactor_iterations:
            pre = self._factor(system)
            lin.preconditioner = pre
            z, res, its2 = solve(lin, tol_rel=self.tol, max_iter=200, x0=z if z is not None else x0)
            its += its2
        self.last_iterations, self.last_residual = its, res
        return z

    def step(self, state: TransportState, U_next: tuple, dt: float) -> TransportState:
        t_mid = state.t + 0.5 * dt
        disp = self._dispersion(U_next)
        system = assemble_transport_system(U_next, state, t_mid, dt, self.physics, self.grid, disp)
        x0 = system.pattern.join(state.C, state.Vx, state.Vy)
        z = self.solve_system(system, x0=x0)
        C, Vx, Vy = system.pattern.split(z)
        Wx, Wy = recover_flux(C, Vx, Vy, U_next[0], U_next[1], disp, self.grid)
        return TransportState(C, Vx, Vy, Wx, Wy, state.t + dt)


def step_concentration(state, U_next, dt, physics, grid, solver: Optional[TransportSolver] = None):
    solver = solver or TransportSolver(physics, grid)
    return solver.step(state, U_next, dt)


def predictor_step(state0: TransportState, U0: tuple, dt_p: float, physics: PhysicsConfig, grid: GridSpec,
                   solver: Optional[TransportSolver] = None, pressure_solve=None):
    """One large step with the frozen initial velocity, then the pressure at ``t_p^1``.

    Returns the starred concentration state and the predicted pressure solution.
    ``pressure_solve(C, t)`` defaults to :func:`solve_pressure_velocity`.
    """
    from .pressure import solve_pressure_velocity

    solver = solver or TransportSolver(physics, grid)
    if pressure_solve is None:
        pressure_solve = lambda C, t: solve_pressure_velocity(C, t, physics, grid)
    disp = solver._dispersion(U0)
    system = assemble_transport_system(U0, state0, state0.t + 0.5 * dt_p, dt_p, physics, grid, disp)
    lin = SparseSystem(system.rhs, matrix=system.matrix)
    z = direct_solve(lin) if lin.n <= 20000 else solve(lin, tol_rel=solver.tol).x
    if np.linalg.norm(system.rhs) > 0 and lin.residual(z) > solver.tol:
        z = solve(lin, tol_rel=solver.tol, x0=z).x
    C, Vx, Vy = system.pattern.split(z)
    Wx, Wy = recover_flux(C, Vx, Vy, U0[0], U0[1], disp, grid)
    starred = TransportState(C, Vx, Vy, Wx, Wy, state0.t + dt_p)
    pred = pressure_solve(C, state0.t + dt_p)
    return starred, pred
