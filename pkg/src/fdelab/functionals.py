"""Norms, the energy J, the Rayleigh quotient R and related scalings.

All integrals use the grid's quadrature weights and ``||w||_{H^1_0}`` is
``sqrt(w^T K w)`` with the same stiffness matrix the Laplacian uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridMismatchError, ZeroFieldError
from .geometry import Field, Grid


@dataclass(frozen=True)
class FdeParams:
    """Exponent ``m`` and dimension ``N`` with the derived constants."""

    m: float
    N: int = 1

    def __post_init__(self):
        m, N = float(self.m), int(self.N)
        if N < 1:
            raise ConfigError(f"dimension N must be >= 1, got {N}")
        if not m > 2:
            raise ConfigError(f"exponent m must exceed 2, got {m}")
        if N >= 3 and not m < 2 * N / (N - 2):
            raise ConfigError(f"m={m} is not subcritical for N={N} (need m < {2 * N / (N - 2)})")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "N", N)

    @property
    def lambda_m(self) -> float:
        return (self.m - 1) / (self.m - 2)

    @property
    def kappa(self) -> float:
        return 2 * self.N - self.N * self.m + 2 * self.m

    @property
    def kappa_m(self) -> float:
        return 4 * (self.m - 1) ** 2 / self.m**2

    @property
    def m_conj(self) -> float:
        return self.m / (self.m - 1)

    @property
    def mu_m(self) -> float:
        """Dissipation constant ``4/(m m')``."""
        return 4.0 / (self.m * self.m_conj)

    @property
    def omega_m(self) -> float:
        """Constant used for the monotonicity (Tartar) gap."""
        return 2.0 ** (2 - self.m)


@dataclass(frozen=True)
class EnergyReport:
    J: float
    R: float
    h10: float
    lm: float
    linf: float

    def row(self) -> tuple:
        return (self.J, self.R, self.h10, self.lm, self.linf)


def signed_power(x, p):
    """``|x|^(p-1) x`` elementwise, i.e. the odd power with exponent ``p``."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** p


def beta(x, m):
    """``|x|^(m-2) x``."""
    return signed_power(x, m - 1)


def gamma(x, m):
    """``|x|^((m-2)/2) x``."""
    return signed_power(x, m / 2)


def _vals(w):
    return w.values if isinstance(w, Field) else np.asarray(w, dtype=float)


def h10_sq(w: Field) -> float:
    return w.grid.laplacian.dirichlet_energy(w.values)


def h10_norm(w: Field) -> float:
    return math.sqrt(max(h10_sq(w), 0.0))


def lm_power(w: Field, m: float) -> float:
    """``||w||_{L^m}^m``."""
    return float(np.sum(w.grid.quad_weights * np.abs(w.values) ** m))


def lm_norm(w: Field, m: float) -> float:
    return lm_power(w, m) ** (1.0 / m)


def l2_norm(w: Field) -> float:
    return lm_norm(w, 2.0)


def linf_norm(w: Field) -> float:
    return float(np.max(np.abs(w.values))) if w.values.size else 0.0


def energy_J(w: Field, p: FdeParams) -> float:
    """``J(w) = 1/2 ||grad w||^2 - (lambda_m/m) ||w||_m^m``."""
    return 0.5 * h10_sq(w) - p.lambda_m / p.m * lm_power(w, p.m)


def rayleigh_R(w: Field, p: FdeParams) -> float:
    """``||w||_{H^1_0} / ||w||_{L^m}``; raises on the zero field."""
    lm = lm_norm(w, p.m)
    if lm == 0.0:
        raise ZeroFieldError("Rayleigh quotient of the zero field")
    return h10_norm(w) / lm


def energy_report(w: Field, p: FdeParams) -> EnergyReport:
    lm = lm_norm(w, p.m)
    h1 = h10_norm(w)
    R = h1 / lm if lm > 0 else float("nan")
    return EnergyReport(0.5 * h1 * h1 - p.lambda_m / p.m * lm**p.m, R, h1, lm, linf_norm(w))


def frechet_Jprime(w: Field, p: FdeParams) -> Field:
    """Nodal residual ``-Lap w - lambda_m |w|^(m-2) w``.

    Paired with the quadrature inner product this is the derivative of
    :func:`energy_J`.
    """
    op = w.grid.laplacian
    return Field(w.grid, -op.matvec(w.values) - p.lambda_m * beta(w.values, p.m))


def hminus1_norm(f: Field) -> float:
    """``sqrt(<(-Lap)^{-1} f, f>)`` via a Poisson solve."""
    op = f.grid.laplacian
    rhs = op.W * f.values
    if not np.any(rhs):
        return 0.0
    g = op.solve_stiffness(rhs)
    return math.sqrt(max(float(g @ rhs), 0.0))


def jprime_hminus1(w: Field, p: FdeParams) -> float:
    """``||J'(w)||_{H^{-1}}``."""
    return hminus1_norm(frechet_Jprime(w, p))


def nehari_scale(w: Field, p: FdeParams) -> float:
    """Scaling ``n(w)`` placing ``n(w) w`` on the Nehari manifold."""
    lmp = lm_power(w, p.m)
    if lmp == 0.0:
        raise ZeroFieldError("Nehari scaling of the zero field")
    return (h10_sq(w) / (p.lambda_m * lmp)) ** (1.0 / (p.m - 2))


def nehari_energy(R: float, p: FdeParams) -> float:
    """Energy of any Nehari point with Rayleigh quotient ``R``."""
    m = p.m
    return (m - 2) / (2 * m) * p.lambda_m ** (-2 / (m - 2)) * R ** (2 * m / (m - 2))


def phase_scale(w: Field, p: FdeParams, evolution=None) -> float:
    """Scaling ``x(w) = t*(w)^{-1/(m-2)}`` placing ``x(w) w`` on the phase set.

    ``evolution`` is anything with an ``estimate_extinction_time(field)``
    method (defaults to a fresh :class:`fdelab.evolution.FdeSolver`).
    """
    if lm_power(w, p.m) == 0.0:
        raise ZeroFieldError("phase scaling of the zero field")
    if evolution is None:
        from .evolution import FdeSolver

        evolution = FdeSolver(p)
    t_star = evolution.estimate_extinction_time(w).t_star
    return t_star ** (-1.0 / (p.m - 2))


def estimate_sobolev_constant(p: FdeParams, grid: Grid, init: Field | None = None) -> float:
    """``C_m = 1 / min R`` on ``grid``, via the Rayleigh minimizer."""
    from .profiles import minimize_rayleigh

    res = minimize_rayleigh(p, grid, init)
    return 1.0 / res.rayleigh


def tartar_gap(a, b, p: FdeParams):
    """``(beta(a) - beta(b)) (a - b) - omega_m |a - b|^m``; nonnegative."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    return (beta(a, p.m) - beta(b, p.m)) * d - p.omega_m * np.abs(d) ** p.m


def chain_rule_sides(v_t: Field, v: Field, p: FdeParams) -> tuple[float, float]:
    """Both sides of the chain-rule bound, evaluated nodally.

    Returns ``(||d_s beta(v)||^2, kappa_m ||v||_inf^(m-2) ||d_s gamma(v)||^2)``
    with the time derivatives formed by the pointwise chain rule from
    ``v_t``.
    """
    if not v.grid.compatible(v_t.grid):
        raise GridMismatchError("v and v_t live on different grids")
    m = p.m
    W = v.grid.quad_weights
    av = np.abs(v.values)
    db = (m - 1) * av ** (m - 2) * v_t.values
    dg = (m / 2) * av ** ((m - 2) / 2) * v_t.values
    lhs = float(np.sum(W * db * db))
    rhs = p.kappa_m * linf_norm(v) ** (m - 2) * float(np.sum(W * dg * dg))
    return lhs, rhs


def chain_rule_check(v_t: Field, v: Field, p: FdeParams, slack: float = 0.01) -> bool:
    lhs, rhs = chain_rule_sides(v_t, v, p)
    return lhs <= (1 + slack) * rhs + 1e-300
