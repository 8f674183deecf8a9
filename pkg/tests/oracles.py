"""Dense reference operators built straight from the stencil definitions."""

import numpy as np


def dense_1d(n, h, periodic):
    """``delta_cf, delta_fc, L_cell, L_face, T, Tstar`` as dense arrays.

    Faces are numbered so that face k sits at ``x_lo + k h``; with no-flow
    boundaries there are ``n + 1`` faces, otherwise ``n``.
    """
    nf = n if periodic else n + 1
    Dcf = np.zeros((nf, n))
    Dfc = np.zeros((n, nf))
    Lc = np.zeros((n, n))
    Lf = np.zeros((nf, nf))
    T = np.zeros((nf, n))
    Ts = np.zeros((n, nf))
    w = np.array([-1.0, 9.0, 9.0, -1.0]) / 16
    for i in range(n):
        Dfc[i, (i + 1) % nf] += 1 / h
        Dfc[i, i] -= 1 / h
        for off, c in ((-1, 1), (0, 22), (1, 1)):
            Lc[i, (i + off) % n] += c / 24
    for k in range(nf):
        if periodic or 0 < k < n:
            Dcf[k, k % n] += 1 / h
            Dcf[k, (k - 1) % n] -= 1 / h
            for off, c in ((-1, 1), (0, 22), (1, 1)):
                if periodic or 0 <= k + off <= n:
                    Lf[k, (k + off) % nf] += c / 24
    if periodic:
        for k in range(n):
            for m in range(4):
                T[k, (k - 2 + m) % n] += w[m]
                Ts[k, (k - 1 + m) % n] += w[m]
        return Dcf, Dfc, Lc, Lf, T, Ts
    Lc[0], Lc[-1] = 0, 0
    Lc[0, :4] = np.array([26, -5, 4, -1]) / 24
    Lc[-1, -4:] = np.array([-1, 4, -5, 26]) / 24
    r0 = np.array([35, -35, 21, -5]) / 16
    r1 = np.array([5, 15, -5, 1]) / 16
    T[0, :4], T[1, :4] = r0, r1
    T[n, -4:], T[n - 1, -4:] = r0[::-1], r1[::-1]
    for k in range(2, n - 1):
        T[k, k - 2 : k + 2] = w
    Ts[0, :4] = r1
    Ts[n - 1, -4:] = r1[::-1]
    for i in range(1, n - 1):
        Ts[i, i - 1 : i + 3] = w
    return Dcf, Dfc, Lc, Lf, T, Ts


def lift_x(A, ny):
    return np.kron(A, np.eye(ny))


def lift_y(A, nx):
    return np.kron(np.eye(nx), A)
