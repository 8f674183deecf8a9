"""Compact fourth-order operators on the staggered grid.

Every operator is separable, so it is built once as a 1-D sparse matrix per
axis and either applied line-by-line to 2-D arrays or lifted to the
flattened (row-major) 2-D index space with a Kronecker product.

With no-flow boundaries the near-boundary rows of the cell-centred compact
operator and of the cubic interpolations are replaced by one-sided tables;
face-located compact operators keep the interior three-point stencil and
only act on interior faces (boundary faces carry the zero normal value).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .grid import Field, GridError, GridSpec, Location

# One-sided boundary rows for the no-flow variants (first rows; the last rows
# are mirror images).
L_HAT_ROW = np.array([26.0, -5.0, 4.0, -1.0]) / 24.0
T_HAT_ROW0 = np.array([35.0, -35.0, 21.0, -5.0]) / 16.0
T_HAT_ROW1 = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0
T_INTERIOR = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
L_INTERIOR = np.array([1.0, 22.0, 1.0]) / 24.0


def _circulant(n: int, offsets, weights) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for off, w in zip(offsets, weights):
        rows.append(np.arange(n))
        cols.append((np.arange(n) + off) % n)
        vals.append(np.full(n, w))
    # duplicate (row, col) pairs are summed, which is what tiny n needs
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


@dataclass
class Line1D:
    """The 1-D operator matrices along one axis."""

    n: int
    h: float
    periodic: bool

    @property
    def nf(self) -> int:
        return self.n if self.periodic else self.n + 1

    @cached_property
    def delta_cf(self) -> sp.csr_matrix:
        """Cell -> face difference; face k+1/2 sits between cells k and k+1."""
        n, h = self.n, self.h
        if self.periodic:
            return (_circulant(n, [0, -1], [1.0, -1.0]) / h).tocsr()
        m = sp.lil_matrix((n + 1, n))
        for k in range(1, n):
            m[k, k] = 1.0 / h
            m[k, k - 1] = -1.0 / h
        return m.tocsr()

    @cached_property
    def delta_fc(self) -> sp.csr_matrix:
        """Face -> cell difference."""
        n, h = self.n, self.h
        if self.periodic:
            return (_circulant(n, [1, 0], [1.0, -1.0]) / h).tocsr()
        m = sp.lil_matrix((n, n + 1))
        for i in range(n):
            m[i, i + 1] = 1.0 / h
            m[i, i] = -1.0 / h
        return m.tocsr()

    @cached_property
    def L_cell(self) -> sp.csr_matrix:
        n = self.n
        if self.periodic:
            return _circulant(n, [-1, 0, 1], L_INTERIOR)
        m = sp.lil_matrix((n, n))
        m[0, 0:4] = L_HAT_ROW
        m[n - 1, n - 4 : n] = L_HAT_ROW[::-1]
        for i in range(1, n - 1):
            m[i, i - 1 : i + 2] = L_INTERIOR
        return m.tocsr()

    @cached_property
    def L_face(self) -> sp.csr_matrix:
        """Interior three-point rows; rows next to a wall also read the wall face."""
        if self.periodic:
            return self.L_cell
        n = self.n
        m = sp.lil_matrix((n + 1, n + 1))
        for k in range(1, n):
            m[k, k - 1 : k + 2] = L_INTERIOR
        return m.tocsr()

    @cached_property
    def T(self) -> sp.csr_matrix:
        """Cubic interpolation cell -> face."""
        n = self.n
        if self.periodic:
            return _circulant(n, [-2, -1, 0, 1], T_INTERIOR)
        m = sp.lil_matrix((n + 1, n))
        m[0, 0:4] = T_HAT_ROW0
        m[1, 0:4] = T_HAT_ROW1
        for k in range(2, n - 1):
            m[k, k - 2 : k + 2] = T_INTERIOR
        m[n - 1, n - 4 : n] = T_HAT_ROW1[::-1]
        m[n, n - 4 : n] = T_HAT_ROW0[::-1]
        return m.tocsr()

    @cached_property
    def Tstar(self) -> sp.csr_matrix:
        """Cubic interpolation face -> cell."""
        n = self.n
        if self.periodic:
            return _circulant(n, [-1, 0, 1, 2], T_INTERIOR)
        m = sp.lil_matrix((n, n + 1))
        m[0, 0:4] = T_HAT_ROW1
        for i in range(1, n - 1):
            m[i, i - 1 : i + 3] = T_INTERIOR
        m[n - 1, n - 3 : n + 1] = T_HAT_ROW1[::-1]
        return m.tocsr()

    @cached_property
    def interior_faces(self) -> np.ndarray:
        """Indices of the face unknowns (all faces if periodic)."""
        return np.arange(self.nf) if self.periodic else np.arange(1, self.n)

    @cached_property
    def _lu_cell(self):
        return sla.lu_factor(self.L_cell.toarray())

    @cached_property
    def _lu_face(self):
        idx = self.interior_faces
        return sla.lu_factor(self.L_face.toarray()[np.ix_(idx, idx)])

    def solve_cell(self, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self._lu_cell, rhs)

    def solve_face(self, rhs: np.ndarray) -> np.ndarray:
        if self.periodic:
            return sla.lu_solve(self._lu_face, rhs)
        out = np.zeros_like(rhs, dtype=np.float64)
        out[1:-1] = sla.lu_solve(self._lu_face, rhs[1:-1])
        return out

    @cached_property
    def L_cell_inv(self) -> np.ndarray:
        return self.solve_cell(np.eye(self.n))

    @cached_property
    def L_face_inv(self) -> np.ndarray:
        return self.solve_face(np.eye(self.nf))


class OperatorContext:
    """Operator tables for one grid, cached on first use."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.lines = {
            "x": Line1D(grid.nx, grid.hx, grid.periodic),
            "y": Line1D(grid.ny, grid.hy, grid.periodic),
        }
        self._cache: dict = {}

    @property
    def bc(self):
        return self.grid.bc

    def size(self, loc: Location) -> int:
        nx, ny = self.grid.shape(loc)
        return nx * ny

    # -- 1-D line application on 2-D arrays -------------------------------
    def along(self, axis: str, mat, arr: np.ndarray) -> np.ndarray:
        if axis == "x":
            return np.asarray(mat @ arr)
        return np.asarray((mat @ arr.T).T)

    # -- Kronecker lifts ---------------------------------------------------
    def lift(self, axis: str, name: str, loc_in: Location) -> sp.csr_matrix:
        """2-D sparse matrix of the 1-D operator ``name`` along ``axis``.

        ``loc_in`` fixes the size of the untouched axis.
        """
        key = (axis, name, Location(loc_in))
        if key not in self._cache:
            mat = getattr(self.lines[axis], name)
            nx, ny = self.grid.shape(loc_in)
            if axis == "x":
                out = sp.kron(mat, sp.identity(ny, format="csr"), format="csr")
            else:
                out = sp.kron(sp.identity(nx, format="csr"), mat, format="csr")
            self._cache[key] = out
        return self._cache[key]

    def face_dofs(self, loc: Location) -> np.ndarray:
        """Flat indices of the unknown (non-boundary) nodes of a face location."""
        key = ("dofs", Location(loc))
        if key not in self._cache:
            sx, sy = Location(loc).staggering
            ix = self.lines["x"].interior_faces if sx == "f" else np.arange(self.grid.nx)
            iy = self.lines["y"].interior_faces if sy == "f" else np.arange(self.grid.ny)
            ny = self.grid.shape(loc)[1]
            self._cache[key] = (ix[:, None] * ny + iy[None, :]).ravel()
        return self._cache[key]

    # named 2-D operators used by the solvers
    @cached_property
    def Dx_fc(self):
        return self.lift("x", "delta_fc", Location.XFACE)

    @cached_property
    def Dy_fc(self):
        return self.lift("y", "delta_fc", Location.YFACE)

    @cached_property
    def Dx_cf(self):
        return self.lift("x", "delta_cf", Location.CELL)

    @cached_property
    def Dy_cf(self):
        return self.lift("y", "delta_cf", Location.CELL)

    @cached_property
    def Lx_cell(self):
        return self.lift("x", "L_cell", Location.CELL)

    @cached_property
    def Ly_cell(self):
        return self.lift("y", "L_cell", Location.CELL)

    @cached_property
    def L_cell2(self):
        return (self.Lx_cell @ self.Ly_cell).tocsr()

    @cached_property
    def Lx_face(self):
        return self.lift("x", "L_face", Location.XFACE)

    @cached_property
    def Ly_face(self):
        return self.lift("y", "L_face", Location.YFACE)

    @cached_property
    def Tx(self):
        return self.lift("x", "T", Location.CELL)

    @cached_property
    def Ty(self):
        return self.lift("y", "T", Location.CELL)

    @cached_property
    def Hx(self):
        """Bicubic interpolation y-faces -> x-faces."""
        tx = self.lift("x", "T", Location.YFACE)  # -> nodes
        tsy = self.lift("y", "Tstar", Location.NODE)  # nodes -> x-faces
        return (tsy @ tx).tocsr()

    @cached_property
    def Hy(self):
        """Bicubic interpolation x-faces -> y-faces."""
        ty = self.lift("y", "T", Location.XFACE)
        tsx = self.lift("x", "Tstar", Location.NODE)
        return (tsx @ ty).tocsr()


_CONTEXTS: dict[GridSpec, OperatorContext] = {}


def context(grid: GridSpec) -> OperatorContext:
    if grid not in _CONTEXTS:
        _CONTEXTS[grid] = OperatorContext(grid)
    return _CONTEXTS[grid]


def _stagger(f: Field, axis: str) -> str:
    sx, sy = f.loc.staggering
    return sx if axis == "x" else sy


def _toggle(f: Field, axis: str) -> Location:
    sx, sy = f.loc.staggering
    flip = {"c": "f", "f": "c"}
    if axis == "x":
        return Location.from_staggering(flip[sx], sy)
    return Location.from_staggering(sx, flip[sy])


def _check_axis(axis: str) -> None:
    if axis not in ("x", "y"):
        raise GridError(f"axis must be 'x' or 'y', got {axis!r}")


def apply_delta(axis: str, f: Field) -> Field:
    """Two-point difference along ``axis``; output is staggered against the input."""
    _check_axis(axis)
    line = context(f.grid).lines[axis]
    mat = line.delta_cf if _stagger(f, axis) == "c" else line.delta_fc
    ctx = context(f.grid)
    return Field(ctx.along(axis, mat, f.values), f.grid, _toggle(f, axis))


def apply_L(axis: str, f: Field) -> Field:
    """Compact operator I + h^2/24 delta^2 along ``axis`` (or ``'both'``)."""
    if axis == "both":
        return apply_L("y", apply_L("x", f))
    _check_axis(axis)
    ctx = context(f.grid)
    line = ctx.lines[axis]
    mat = line.L_cell if _stagger(f, axis) == "c" else line.L_face
    return f.like(ctx.along(axis, mat, f.values))


def solve_L(axis: str, rhs: Field, tol: float = 1e-13) -> Field:
    """Invert the compact operator along ``axis`` line by line."""
    _check_axis(axis)
    ctx = context(rhs.grid)
    line = ctx.lines[axis]
    vals = rhs.values if axis == "x" else rhs.values.T
    if _stagger(rhs, axis) == "c":
        out = line.solve_cell(vals)
        mat = line.L_cell
    else:
        out = line.solve_face(vals)
        mat = line.L_face
    resid = mat @ out - vals
    if not rhs.grid.periodic and _stagger(rhs, axis) == "f":
        resid[[0, -1]] = 0.0
    scale = max(np.max(np.abs(vals)), 1e-300)
    if np.max(np.abs(resid)) > tol * scale * 10:
        raise ArithmeticError(
            f"compact solve residual {np.max(np.abs(resid)):.3e} exceeds tolerance"
        )
    out = out if axis == "x" else out.T
    return rhs.like(out)


def apply_T(axis: str, direction: str, f: Field) -> Field:
    """Local cubic Lagrange interpolation between cells and faces."""
    _check_axis(axis)
    s = _stagger(f, axis)
    if direction == "cell_to_face" and s != "c" or direction == "face_to_cell" and s != "f":
        raise GridError(f"{direction} along {axis} is invalid for a {f.loc.value} field")
    if direction not in ("cell_to_face", "face_to_cell"):
        raise GridError(f"unknown direction {direction!r}")
    ctx = context(f.grid)
    line = ctx.lines[axis]
    mat = line.T if direction == "cell_to_face" else line.Tstar
    return Field(ctx.along(axis, mat, f.values), f.grid, _toggle(f, axis))


def apply_H(axis: str, f: Field) -> Field:
    """Bicubic interpolation: 'x' maps y-faces to x-faces, 'y' the reverse."""
    _check_axis(axis)
    if axis == "x":
        if f.loc is not Location.YFACE:
            raise GridError("H_x acts on y-face fields")
        return apply_T("y", "face_to_cell", apply_T("x", "cell_to_face", f))
    if f.loc is not Location.XFACE:
        raise GridError("H_y acts on x-face fields")
    return apply_T("x", "face_to_cell", apply_T("y", "cell_to_face", f))
