"""Rescaled flow ``d_s(|v|^(m-2) v) - Lap v = lambda_m |v|^(m-2) v``.

The step used throughout is the convex splitting

    W beta(v+) + ds K v+ = (1 + lambda_m ds) W beta(v),

diffusion implicit and the reaction explicit. It keeps the energy ledger
``J(v+) - J(v) + mu_m ||gamma(v+) - gamma(v)||^2 / ds <= 0`` exactly, keeps
stationary profiles fixed, and satisfies the ``H^{-1}`` Gronwall bound for
pairs of solutions step by step.

The phase set is a separatrix of this flow: tiny errors in the scale of
``v`` grow like ``e^s``. :func:`evolve_rescaled` therefore re-selects the
scale at the start of each window by shooting, which pins the trajectory
to the discrete separatrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (ConfigError, GridMismatchError, InsufficientData, MaxStepsExceeded,
                     NewtonDivergence, ShootingBracketError, ZeroFieldError)
from .evolution import EvolutionConfig, ExtinctionEstimate, Trajectory
from .functionals import (EnergyReport, FdeParams, beta, energy_J, energy_report, gamma,
                          hminus1_norm, jprime_hminus1, lm_norm, rayleigh_R)
from .geometry import Field, Grid
from .implicit import implicit_solve

CONVERGED_RESIDUAL = 1e-6


class BeyondExtinction(ConfigError):
    """A physical time at or after the extinction time was rescaled."""


@dataclass
class ShootingConfig:
    """Scale selection that keeps a rescaled run on the discrete phase set.

    A trial scale ``c`` is integrated for up to ``horizon`` units of ``s``;
    it is classified by whether ``log(||v||_m / ||c v_start||_m)`` first
    crosses ``log_up`` (blow-up side) or ``log_down`` (extinction side).
    """

    window: float = 10.0
    horizon: float = 35.0
    log_up: float = math.log(2.0)
    log_down: float = math.log(0.01)
    xtol: float = 1e-14

    def __post_init__(self):
        if self.window <= 0 or self.horizon <= 0:
            raise ConfigError("shooting window and horizon must be positive")
        if not (self.log_down < 0 < self.log_up):
            raise ConfigError("need log_down < 0 < log_up")


@dataclass
class RescaledTrajectory:
    """Accepted steps of a rescaled run with per-step diagnostics.

    ``monitors``, ``jprime`` and ``s_times`` have one entry per state
    (including the initial one); ``dissipation``, ``ledger`` and
    ``lm_residual`` have one entry per step.
    """

    grid: Grid
    s_times: np.ndarray
    monitors: list[EnergyReport]
    dissipation: np.ndarray
    ledger: np.ndarray
    lm_residual: np.ndarray
    jprime: np.ndarray
    snapshot_s: np.ndarray
    snapshots: list[np.ndarray] = field(repr=False)
    scale_events: list[tuple[float, float]] = field(default_factory=list)

    @property
    def terminal_residual(self) -> float:
        return float(self.jprime[-1])

    @property
    def converged(self) -> bool:
        return self.terminal_residual < CONVERGED_RESIDUAL

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.monitors])

    @property
    def R(self) -> np.ndarray:
        return np.array([r.R for r in self.monitors])

    @property
    def h10(self) -> np.ndarray:
        return np.array([r.h10 for r in self.monitors])

    @property
    def linf(self) -> np.ndarray:
        return np.array([r.linf for r in self.monitors])

    def snapshot(self, k: int) -> Field:
        return Field(self.grid, self.snapshots[k])

    def terminal(self) -> Field:
        return Field(self.grid, self.snapshots[-1])

    def snapshot_at(self, s: float) -> tuple[float, Field]:
        """Stored snapshot closest to ``s``."""
        k = int(np.argmin(np.abs(self.snapshot_s - s)))
        return float(self.snapshot_s[k]), self.snapshot(k)

    def rows(self):
        """CSV rows ``(s, J, R, h10, lm, linf, dissipation, Jprime_hminus1)``."""
        diss = np.concatenate([[0.0], self.dissipation])
        for s, mon, d, jp in zip(self.s_times, self.monitors, diss, self.jprime):
            yield (float(s), *mon.row(), float(d), float(jp))


# -- change of variables ----------------------------------------------------

def rescale_field(u: Field, t: float, t_star: float, p: FdeParams) -> tuple[float, Field]:
    """``(s, v)`` with ``v = (t* - t)^(-1/(m-2)) u`` and ``s = log(t*/(t* - t))``."""
    if not t < t_star:
        raise BeyondExtinction(f"t={t} is not before t*={t_star}")
    gap = t_star - t
    return math.log(t_star / gap), u * gap ** (-1.0 / (p.m - 2))


def unscale_field(v: Field, s: float, t_star: float, p: FdeParams) -> tuple[float, Field]:
    """Inverse of :func:`rescale_field`."""
    gap = t_star * math.exp(-s)
    return t_star - gap, v * gap ** (1.0 / (p.m - 2))


def rescale_from_physical(u_traj: Trajectory, est: ExtinctionEstimate, p: FdeParams,
                          drop_beyond: bool = True) -> RescaledTrajectory:
    """Rescaled view of a physical trajectory's snapshots.

    Snapshots at or past the estimated ``t*`` are dropped when
    ``drop_beyond`` is set; otherwise they raise :class:`BeyondExtinction`.
    """
    grid = u_traj.grid
    states, svals = [], []
    for t, x in zip(u_traj.snapshot_times, u_traj.snapshots):
        if t >= est.t_star:
            if drop_beyond:
                continue
            raise BeyondExtinction(f"snapshot at t={t} is past t*={est.t_star}")
        s, v = rescale_field(Field(grid, x), float(t), est.t_star, p)
        states.append(v.values)
        svals.append(s)
    if len(states) < 2:
        raise InsufficientData("fewer than two snapshots before t*")
    return _assemble(grid, p, np.array(svals), states, stride=1)


# -- stepping -----------------------------------------------------------------

def step_rescaled(v: Field, ds: float, p: FdeParams, cfg: EvolutionConfig = EvolutionConfig(),
                  floor: float = 0.0) -> Field:
    """One convex-splitting step of the rescaled equation."""
    from .errors import ExtinctInput

    if ds <= 0:
        raise ConfigError("ds must be positive")
    if lm_norm(v, p.m) <= floor:
        raise ExtinctInput("state is below the extinction floor")
    return Field(v.grid, _advance(v.grid, v.values, ds, p, cfg.newton_tol))


def _advance(grid: Grid, x: np.ndarray, ds: float, p: FdeParams, tol: float,
             x_prev: np.ndarray | None = None) -> np.ndarray:
    rhs = (1.0 + p.lambda_m * ds) * beta(x, p.m)
    guess = x if x_prev is None else 2 * x - x_prev
    xn, _ = implicit_solve(grid, p.m, ds, rhs, guess, tol)
    return xn


def _lm(grid: Grid, x: np.ndarray, m: float) -> float:
    return float(np.sum(grid.quad_weights * np.abs(x) ** m)) ** (1.0 / m)


def _trial(grid, x0, p, ds, tol, shoot: ShootingConfig, keep: int):
    """Integrate from ``x0``; return (indicator, kept states)."""
    m = p.m
    lm0 = _lm(grid, x0, m)
    x, x_prev = x0, None
    states = [x0]
    prev = 0.0
    n_steps = max(int(math.ceil(shoot.horizon / ds - 1e-9)), keep)
    for k in range(1, n_steps + 1):
        try:
            x, x_prev = _advance(grid, x, ds, p, tol, x_prev), x
        except NewtonDivergence:
            # only happens far out on the blow-up side
            return math.exp(-(k - 1) * ds), states
        if k <= keep:
            states.append(x)
        lm = _lm(grid, x, m)
        r = math.log(lm / lm0) if lm > 0 else -math.inf
        for thr, sgn in ((shoot.log_up, 1.0), (shoot.log_down, -1.0)):
            if (r - thr) * sgn >= 0:
                frac = (thr - prev) / (r - prev) if math.isfinite(r) and r != prev else 1.0
                tau = (k - 1 + frac) * ds
                return sgn * math.exp(-tau), states
        prev = r
    return 0.0, states


def _shoot(grid, x0, p, ds, tol, shoot: ShootingConfig, keep: int):
    """Scale ``c`` near 1 placing ``c x0`` on the discrete separatrix."""
    cache = {}

    def f(c):
        if c not in cache:
            cache[c] = _trial(grid, c * x0, p, ds, tol, shoot, 0)[0]
        return cache[c]

    f1 = f(1.0)
    if f1 == 0.0:
        return 1.0
    sgn = math.copysign(1.0, f1)
    d = max(2.0 * abs(f1), 1e-13)
    lo, flo = 1.0, f1
    while True:
        c = 1.0 - sgn * d
        if c <= 0:
            raise ShootingBracketError("no sign change of the phase indicator before c = 0")
        fc = f(c)
        if fc == 0.0:
            return c
        if math.copysign(1.0, fc) != sgn:
            break
        lo, flo = c, fc
        d *= 4.0
        if d > 1e6:
            raise ShootingBracketError("phase indicator does not change sign")
    a, b = sorted((lo, c))
    return brentq(f, a, b, xtol=shoot.xtol, rtol=4 * np.finfo(float).eps, maxiter=200)


def evolve_rescaled(v0: Field, s_end: float, p: FdeParams,
                    cfg: EvolutionConfig = EvolutionConfig(), stay_on_X: bool = True,
                    shoot: ShootingConfig | None = None) -> RescaledTrajectory:
    """Integrate the rescaled flow from ``v0`` to ``s_end`` with fixed ``cfg.ds``.

    With ``stay_on_X`` the scale of the state is re-selected at the start
    of every shooting window (the applied factors are kept in
    ``scale_events``); otherwise the flow is integrated as is.
    """
    if lm_norm(v0, p.m) == 0.0:
        raise ZeroFieldError("initial datum is zero")
    if s_end <= 0:
        raise ConfigError("s_end must be positive")
    shoot = shoot or ShootingConfig()
    grid, ds, tol = v0.grid, cfg.ds, cfg.newton_tol
    n_total = int(round(s_end / ds))
    if abs(n_total * ds - s_end) > 1e-9 * max(1.0, s_end):
        n_total = int(math.ceil(s_end / ds))
    if n_total > cfg.max_steps:
        raise MaxStepsExceeded(f"{n_total} steps needed, max_steps={cfg.max_steps}")
    per_window = max(1, int(round(shoot.window / ds)))
    states = [np.array(v0.values, dtype=float)]
    events = []
    done = 0
    while done < n_total:
        k = min(per_window, n_total - done)
        x0 = states[-1]
        if stay_on_X:
            c = _shoot(grid, x0, p, ds, tol, shoot, k)
            if c != 1.0:
                x0 = c * x0
                states[-1] = x0
            events.append((done * ds, c))
            seg = _trial(grid, x0, p, ds, tol, ShootingConfig(horizon=k * ds), k)[1]
            if len(seg) < k + 1:
                raise ShootingBracketError("selected scale left the phase set within a window")
        else:
            seg = [x0]
            x, x_prev = x0, None
            for _ in range(k):
                x, x_prev = _advance(grid, x, ds, p, tol, x_prev), x
                seg.append(x)
        states.extend(seg[1:])
        done += k
    s = ds * np.arange(len(states))
    return _assemble(grid, p, s, states, stride=cfg.snapshot_stride, events=events)


def _assemble(grid: Grid, p: FdeParams, s: np.ndarray, states: list[np.ndarray],
              stride: int = 1, events=None) -> RescaledTrajectory:
    m = p.m
    W = grid.quad_weights
    fields = [Field(grid, x) for x in states]
    monitors = [energy_report(f, p) for f in fields]
    jp = np.array([jprime_hminus1(f, p) for f in fields])
    gam = [gamma(x, m) for x in states]
    dss = np.diff(s)
    n = len(states) - 1
    diss = np.empty(n)
    ledger = np.empty(n)
    lmres = np.empty(n)
    for k in range(n):
        dg = (gam[k + 1] - gam[k]) / dss[k]
        diss[k] = p.mu_m * float(np.sum(W * dg * dg))
        ledger[k] = diss[k] * dss[k] + monitors[k + 1].J - monitors[k].J
        L0 = monitors[k].lm ** m
        L1 = monitors[k + 1].lm ** m
        lmres[k] = (L1 - L0) / dss[k] / p.m_conj + monitors[k + 1].h10 ** 2 - p.lambda_m * L1
    keep = sorted(set(range(0, n + 1, stride)) | {n})
    return RescaledTrajectory(grid, s, monitors, diss, ledger, lmres, jp,
                              s[keep], [states[i] for i in keep], list(events or []))


# -- a-priori bounds ----------------------------------------------------------

def h10_bound(v0: Field, p: FdeParams) -> float:
    """Bound on ``sup_s ||v(s)||^2_{H^1_0}`` for data on the phase set."""
    m = p.m
    R = rayleigh_R(v0, p)
    return 2 * energy_J(v0, p) + 2 * R ** (2 * m / (m - 2)) / (m * p.lambda_m ** (2 / (m - 2)))


@dataclass
class LinfReport:
    s0: float
    sup_linf: float
    structural: float
    ratio: float
    finite: bool


def check_uniform_linf(traj: RescaledTrajectory, s0: float, p: FdeParams,
                       v0: Field | None = None) -> LinfReport:
    """Compare ``sup_{s >= s0} ||v(s)||_inf`` with the structural part of its bound.

    The structural part is ``(e^{s0} - 1)^(-N/kappa) R(v0)^(4m/(kappa(m-2)))``;
    the constant in front is not known, so only the ratio is reported.
    """
    if not 0 < s0 < math.log(2):
        raise ConfigError("s0 must lie in (0, log 2)")
    if traj.s_times[-1] < s0:
        raise InsufficientData("trajectory is shorter than s0")
    v0 = v0 if v0 is not None else Field(traj.grid, traj.snapshots[0])
    sel = traj.s_times >= s0 - 1e-12
    sup = float(np.max(traj.linf[sel]))
    m, N, kap = p.m, p.N, p.kappa
    structural = (math.exp(s0) - 1) ** (-N / kap) * rayleigh_R(v0, p) ** (4 * m / (kap * (m - 2)))
    return LinfReport(s0, sup, structural, sup / structural, math.isfinite(sup))


@dataclass
class DependenceReport:
    s: np.ndarray
    ratio: np.ndarray
    identical: bool

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio)) if self.ratio.size else 0.0

    def passed(self, slack: float = 0.01) -> bool:
        return self.identical or self.max_ratio <= 1.0 + slack


def check_continuous_dependence(v0a: Field, v0b: Field, s_end: float, p: FdeParams,
                                cfg: EvolutionConfig = EvolutionConfig()) -> DependenceReport:
    """``H^{-1}`` growth of ``beta(v1) - beta(v2)`` relative to ``e^{2 lambda_m s}``.

    Both runs use the plain flow (no scale re-selection) so they are
    genuine solutions from the given data.
    """
    if not v0a.grid.compatible(v0b.grid):
        raise GridMismatchError("initial data live on different grids")
    if np.array_equal(v0a.values, v0b.values):
        return DependenceReport(np.array([0.0]), np.array([0.0]), True)
    cfg1 = EvolutionConfig(**{**cfg.__dict__, "snapshot_stride": 1})
    ta = evolve_rescaled(v0a, s_end, p, cfg1, stay_on_X=False)
    tb = evolve_rescaled(v0b, s_end, p, cfg1, stay_on_X=False)
    grid = v0a.grid

    def dist2(xa, xb):
        return hminus1_norm(Field(grid, beta(xa, p.m) - beta(xb, p.m))) ** 2

    d0 = dist2(ta.snapshots[0], tb.snapshots[0])
    ratios = np.array([dist2(xa, xb) / (d0 * math.exp(2 * p.lambda_m * s))
                       for s, xa, xb in zip(ta.snapshot_s, ta.snapshots, tb.snapshots)])
    return DependenceReport(ta.snapshot_s.copy(), ratios, False)
