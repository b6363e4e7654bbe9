"""Stationary solutions ``-Lap phi = lambda_m |phi|^(m-2) phi`` with zero boundary data.

Two independent routes are provided: shooting for the radial ODE (accurate
to the ODE integrator, independent of the finite-volume operator) and
constrained minimization of the Rayleigh quotient on the grid (the discrete
least-energy solution). Agreement between them is a check on both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import ConfigError, GeometryError, ShootingBracketError, SolverError, ZeroFieldError
from .functionals import (FdeParams, beta, energy_J, jprime_hminus1, lm_power, rayleigh_R)
from .geometry import Field, Grid, build_grid, first_eigenvector

RADIAL_TOL = 1e-6
ACCEPT_RESIDUAL = 1e-8


@dataclass
class ProfileResult:
    """A stationary solution with its diagnostics.

    ``residual`` is ``||J'(phi)||_{H^-1}`` for grid solutions; for shooting
    it is the boundary mismatch of the ODE solve, and the grid residual
    (which then carries the O(h^2) discretization error) is kept in
    ``grid_residual``.
    """

    phi: Field
    residual: float
    energy: float
    rayleigh: float
    method: str
    is_radial: bool | None = None
    angular_variance: float | None = None
    grid_residual: float | None = None
    iterations: int = 0

    @property
    def accepted(self) -> bool:
        return self.residual <= ACCEPT_RESIDUAL

    def summary(self) -> dict:
        return {
            "method": self.method,
            "residual": self.residual,
            "grid_residual": self.grid_residual,
            "energy": self.energy,
            "rayleigh": self.rayleigh,
            "is_radial": self.is_radial,
            "angular_variance": self.angular_variance,
            "max_value": float(np.max(self.phi.values)),
            "iterations": self.iterations,
        }


def _finish(phi: Field, p: FdeParams, method: str, residual=None, iterations=0) -> ProfileResult:
    grid_res = jprime_hminus1(phi, p)
    var = angular_variance(phi) if phi.grid.shape == "polar2d" else None
    return ProfileResult(
        phi=phi,
        residual=grid_res if residual is None else residual,
        energy=energy_J(phi, p),
        rayleigh=rayleigh_R(phi, p),
        method=method,
        is_radial=None if var is None else var < RADIAL_TOL,
        angular_variance=var,
        grid_residual=grid_res,
        iterations=iterations,
    )


# -- shooting -----------------------------------------------------------------

def _rhs(r, y, lam, m, N):
    phi, dphi = y
    damp = (N - 1) / r * dphi if N > 1 else 0.0
    return np.array([dphi, -damp - lam * beta(phi, m)])


def _integrate(p: FdeParams, lam: float, a: float, b: float, start: float, ball: bool,
               h: float, substeps: int, record: bool):
    """RK4 from ``a`` to ``b``; returns (phi at b or -(b - first zero), nodal values)."""
    m, N = p.m, p.N
    H = h / substeps
    nsteps = int(round((b - a) / H))
    if ball:
        # series start to step past the coordinate singularity at r = 0
        r = H
        c2 = -lam * beta(start, m) / (2 * N)
        y = np.array([start + c2 * H * H, 2 * c2 * H])
        first = 1
        out = [start]
    else:
        r = a
        y = np.array([0.0, start])
        first = 0
        out = []
    for k in range(first, nsteps):
        if record and k % substeps == 0 and k > 0:
            out.append(y[0])
        k1 = _rhs(r, y, lam, m, N)
        k2 = _rhs(r + H / 2, y + H / 2 * k1, lam, m, N)
        k3 = _rhs(r + H / 2, y + H / 2 * k2, lam, m, N)
        k4 = _rhs(r + H, y + H * k3, lam, m, N)
        yn = y + H / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if yn[0] < 0 and (k + 1) < nsteps:
            r0 = r + H * y[0] / (y[0] - yn[0])
            return -(b - r0), None
        y, r = yn, r + H
    return y[0], (np.array(out) if record else None)


def shoot_radial(p: FdeParams, grid: Grid, lam: float | None = None,
                 substeps: int = 8) -> ProfileResult:
    """Positive radial solution by shooting on the centre value or boundary slope.

    Works on ``interval`` grids (``N = 1``) and ``radial`` grids. The ODE
    is integrated with classical RK4 at ``h / substeps`` on the grid's
    node lattice, so the nodal values carry no finite-volume error.
    """
    if grid.shape not in ("interval", "radial"):
        raise GeometryError("shooting needs an interval or radial grid")
    if grid.N != p.N:
        raise ConfigError(f"grid dimension {grid.N} differs from parameter N={p.N}")
    lam = p.lambda_m if lam is None else float(lam)
    a, b = grid.spec.a, grid.spec.b
    h = grid.h[0]
    ball = grid.shape == "radial" and a == 0.0

    def g(x):
        return _integrate(p, lam, a, b, x, ball, h, substeps, False)[0]

    # linear regime (small start) is positive at b; large starts cross zero
    # (solutions scale like lambda^(-1/(m-2)), which is extreme for m near 2)
    lo = 1e-3
    while g(lo) <= 0:
        lo /= 1e3
        if lo < 1e-250:
            raise ShootingBracketError("no positive boundary value at small shooting parameter")
    hi = lo * 10
    while g(hi) > 0:
        lo, hi = hi, hi * 10
        if hi > 1e250:
            raise ShootingBracketError("no zero crossing at large shooting parameter")
    x = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300)
    end, vals = _integrate(p, lam, a, b, x, ball, h, substeps, True)
    if vals.size != grid.size:
        raise SolverError(f"shooting produced {vals.size} nodes, grid has {grid.size}")
    phi = Field(grid, np.maximum(vals, 0.0))
    return _finish(phi, p, "shooting", residual=float(abs(end)))


# -- Rayleigh minimization ----------------------------------------------------

def _rayleigh_sq(grid: Grid, x: np.ndarray, m: float) -> float:
    return float(x @ (grid.stiffness @ x)) / float(np.sum(grid.quad_weights * np.abs(x) ** m)) ** (2 / m)


def _normalize(grid: Grid, x: np.ndarray, m: float) -> np.ndarray:
    return x / float(np.sum(grid.quad_weights * np.abs(x) ** m)) ** (1 / m)


def default_initializer(grid: Grid) -> Field:
    """First Dirichlet eigenvector, with a small ``cos(theta)`` tilt on polar grids.

    The tilt lets the descent leave the radial subspace when radial
    symmetry is not optimal; it is harmless otherwise.
    """
    e, _ = first_eigenvector(grid)
    if grid.shape == "polar2d":
        return Field(grid, e.values * (1 + 0.1 * np.cos(grid.nodes[:, 1])))
    return e


def newton_polish(phi: Field, p: FdeParams, tol: float = 1e-10, max_iter: int = 30,
                  lam: float | None = None) -> tuple[Field, int]:
    """Newton iterations on ``K phi = lambda W beta(phi)`` with residual line search."""
    grid = phi.grid
    K, W = grid.stiffness, grid.quad_weights
    lam = p.lambda_m if lam is None else lam
    m = p.m
    x = phi.values.copy()

    def res(y):
        F = K @ y - lam * W * beta(y, m)
        return F, float(np.sqrt(np.sum(F * F / W)))

    F, err = res(x)
    ref = float(np.sqrt(np.sum((K @ x) ** 2 / W)))
    for it in range(max_iter):
        if err <= tol * ref:
            return Field(grid, x), it
        Jm = (K - sp.diags(lam * (m - 1) * W * np.abs(x) ** (m - 2))).tocsc()
        dx = spla.spsolve(Jm, -F)
        if not np.all(np.isfinite(dx)):
            break
        step = 1.0
        for _ in range(30):
            Fy, ey = res(x + step * dx)
            if ey < err:
                break
            step /= 2
        else:
            break
        x = x + step * dx
        F, err = Fy, ey
    return Field(grid, x), max_iter


def minimize_rayleigh(p: FdeParams, grid: Grid, init: Field | None = None, gtol: float = 1e-9,
                      max_iter: int = 20000, polish: bool = True) -> ProfileResult:
    """Least-energy solution by projected gradient descent of ``R`` on the unit ``L^m`` sphere.

    The gradient is taken in the ``H^1_0`` inner product, so each step costs
    one stiffness solve. Step lengths backtrack from 1 by halving until
    ``R^2`` decreases by the Armijo fraction. The minimizer ``psi`` is
    rescaled by ``(||psi||^2_{H^1_0} / lambda_m)^(1/(m-2))`` and, if
    ``polish`` is set, refined by Newton until the ``H^{-1}`` residual is
    at most ``1e-8``.
    """
    if init is None:
        init = default_initializer(grid)
    if not grid.compatible(init.grid):
        raise ConfigError("initializer is on a different grid")
    if lm_power(init, p.m) == 0.0:
        raise ZeroFieldError("initializer is zero")
    m = p.m
    op = grid.laplacian
    K, W = grid.stiffness, grid.quad_weights
    x = _normalize(grid, init.values.astype(float), m)
    f = _rayleigh_sq(grid, x, m)
    gnorm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        z = op.solve_stiffness(W * beta(x, m))
        zz = float(z @ (K @ z))
        # <x, z>_K = ||x||_m^m = 1 on the sphere
        g = x - z / zz
        gnorm = math.sqrt(max(float(g @ (K @ g)), 0.0))
        if gnorm <= gtol * math.sqrt(f):
            break
        slope = gnorm**2
        step = 1.0
        while True:
            y = _normalize(grid, x - step * g, m)
            fy = _rayleigh_sq(grid, y, m)
            if fy <= f - 1e-4 * step * slope or step < 1e-12:
                break
            step /= 2
        if fy >= f and step < 1e-12:
            break
        # R^2 can only resolve gradients down to about sqrt(eps); below that
        # Newton finishes the job
        stalled = f - fy <= 1e3 * np.finfo(float).eps * f and gnorm <= 1e-6 * math.sqrt(f)
        x, f = y, fy
        if stalled:
            break
    else:
        raise SolverError(f"Rayleigh descent did not converge (gradient {gnorm:.2e})")
    if np.sum(x) < 0:
        x = -x
    c = (float(x @ (K @ x)) / p.lambda_m) ** (1 / (m - 2))
    phi = Field(grid, c * x)
    if polish:
        phi, _ = newton_polish(phi, p)
    res = _finish(phi, p, "rayleigh-min", iterations=it)
    if res.residual > ACCEPT_RESIDUAL:
        raise SolverError(f"profile residual {res.residual:.2e} above {ACCEPT_RESIDUAL:.0e}")
    return res


# -- annulus helpers ----------------------------------------------------------

def instability_threshold(a: float, b: float, N: int, m: float) -> tuple[float, bool]:
    """Left side of the thin-annulus instability condition and whether it holds."""
    if not (0 < a < b):
        raise GeometryError(f"need 0 < a < b, got a={a}, b={b}")
    if N < 2:
        raise GeometryError("the annulus condition needs N >= 2")
    lhs = (b / a) ** max(N - 3, 0) * ((b - a) / (math.pi * a)) ** 2
    return lhs, lhs < (m - 2) / (N - 1)


def angular_variance(phi: Field) -> float:
    """Weighted ``theta``-variance of ``phi`` per radius, relative to ``||phi||^2_{L^2}``."""
    grid = phi.grid
    if grid.shape != "polar2d":
        raise GeometryError("angular variance needs a polar2d grid")
    nt = grid.spec.n_theta
    vals = phi.values.reshape(-1, nt)
    W = grid.quad_weights.reshape(-1, nt)
    dev = vals - vals.mean(axis=1, keepdims=True)
    total = float(np.sum(W * vals * vals))
    if total == 0.0:
        raise ZeroFieldError("angular variance of the zero field")
    return float(np.sum(W * dev * dev)) / total


def is_radial(phi: Field, tol: float = RADIAL_TOL) -> bool:
    return angular_variance(phi) < tol


def radial_grid_for(polar: Grid) -> Grid:
    """Two-dimensional radial grid with the same radial nodes as ``polar``."""
    if polar.shape != "polar2d":
        raise GeometryError("expected a polar2d grid")
    s = polar.spec
    return build_grid("radial", a=s.a, b=s.b, n=s.n, N=2)


def lift_to_polar(phi: Field, polar: Grid) -> Field:
    """Extend a radial field constant in ``theta``."""
    if phi.grid.shape != "radial" or phi.grid.N != 2:
        raise GeometryError("lifting needs a radial N=2 field")
    if not np.allclose(phi.grid.nodes, polar.nodes[:: polar.spec.n_theta, 0]):
        raise GeometryError("radial nodes do not match the polar grid")
    return Field(polar, np.repeat(phi.values, polar.spec.n_theta))


def radial_profile_on_polar(p: FdeParams, polar: Grid) -> ProfileResult:
    """Positive radial solution of the discrete polar problem.

    The radial discrete problem is solved (shooting start, Newton on the
    N=2 radial operator) and lifted; since the angular stiffness vanishes
    on ``theta``-constant fields, the lift solves the polar system exactly.
    """
    rg = radial_grid_for(polar)
    start = shoot_radial(p, rg).phi
    phi_r, _ = newton_polish(start, p, tol=1e-13)
    return _finish(lift_to_polar(phi_r, polar), p, "shooting")
