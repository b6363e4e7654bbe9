"""Damped Newton solver for the implicit steps of both flows.

Each step solves ``W beta(x) + tau K x = W b`` for ``x``, where
``beta(x) = |x|^(m-2) x``. The left-hand side is the gradient of a strictly
convex function, so the solution is unique and Newton with residual-based
step halving converges from any start.
"""
from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .errors import NewtonDivergence
from .functionals import beta
from .geometry import Grid

_BAND_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _bands(grid: Grid):
    key = id(grid.stiffness)
    hit = _BAND_CACHE.get(key)
    if hit is None or hit[0] is not grid.stiffness:
        K = grid.stiffness
        hit = (K, K.diagonal(0).copy(), K.diagonal(1).copy())
        _BAND_CACHE[key] = hit
    return hit[1], hit[2]


class _Factor(threading.local):
    """Per-thread sparse LU of ``tau K + diag`` kept across Newton iterations and steps."""

    def __init__(self):
        self.key = None
        self.lu = None

    def refresh(self, grid: Grid, diag: np.ndarray, tau: float):
        A = (tau * grid.stiffness + sp.diags(diag)).tocsc()
        self.lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        self.key = (id(grid.stiffness), tau)

    def usable(self, grid: Grid, tau: float) -> bool:
        return self.key == (id(grid.stiffness), tau)


_FACTOR = _Factor()


def _linear_solve(grid: Grid, diag: np.ndarray, tau: float, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(diag(diag) + tau K) x = rhs`` (banded path for 1-D grids)."""
    if grid.shape != "polar2d":
        d0, d1 = _bands(grid)
        ab = np.empty((3, d0.size))
        ab[0, 1:] = tau * d1
        ab[0, 0] = 0.0
        ab[1] = diag + tau * d0
        ab[2, :-1] = tau * d1
        ab[2, -1] = 0.0
        return solve_banded((1, 1), ab, rhs, check_finite=False)
    _FACTOR.refresh(grid, diag, tau)
    return _FACTOR.lu.solve(rhs)


def implicit_solve(grid: Grid, m: float, tau: float, b: np.ndarray, x0: np.ndarray,
                   tol: float = 1e-12, max_iter: int = 60) -> tuple[np.ndarray, int]:
    """Solve ``W beta(x) + tau K x = W b`` by damped Newton.

    Convergence is declared when the weighted residual norm
    ``sqrt(sum(F^2 / W))`` falls below ``tol`` times the summed norms of
    the three terms. On polar grids the last sparse factorization is reused
    (chord iterations) while each one cuts the residual tenfold; otherwise
    it is rebuilt at the current iterate.
    Returns the solution and the number of iterations used.
    """
    W = grid.quad_weights
    K = grid.stiffness
    Wb = W * b
    scale = np.sqrt(np.sum(Wb * Wb / W))
    if scale == 0.0:
        return np.zeros_like(x0), 0
    x = np.array(x0, dtype=float)
    polar = grid.shape == "polar2d"

    def wnorm(z):
        return np.sqrt(np.sum(z * z / W))

    def residual(y):
        Fa = W * beta(y, m)
        Fb = tau * (K @ y)
        # roundoff floor: the terms may individually dwarf W b
        return Fa + Fb - Wb, scale + wnorm(Fa) + wnorm(Fb)

    F, ref = residual(x)
    err = wnorm(F)
    for it in range(1, max_iter + 1):
        if err <= tol * ref:
            return x, it - 1
        if polar and _FACTOR.usable(grid, tau):
            y = x + _FACTOR.lu.solve(-F)
            Fy, ry = residual(y)
            ey = wnorm(Fy)
            if ey <= 0.1 * err or ey <= tol * ry:
                x, F, err, ref = y, Fy, ey, ry
                continue
        diag = W * (m - 1) * np.abs(x) ** (m - 2)
        dx = _linear_solve(grid, diag, tau, -F)
        step = 1.0
        for _ in range(40):
            y = x + step * dx
            Fy, ry = residual(y)
            ey = wnorm(Fy)
            if ey < err or ey <= tol * ry:
                break
            step *= 0.5
        else:
            raise NewtonDivergence(f"line search failed at residual {err / ref:.2e}")
        x, F, err, ref = y, Fy, ey, ry
    if err <= tol * ref:
        return x, max_iter
    raise NewtonDivergence(f"Newton stalled at relative residual {err / ref:.2e}")
