"""Physical-time solver for the fast diffusion equation.

``d_t(|u|^(m-2) u) = Lap u`` is advanced by backward Euler, solved for ``u``
with damped Newton. The step size is steered so the relative ``L^m`` drop
per step stays within a factor two of a target; this makes the whole
trajectory covariant under ``u0 -> c u0`` and refines the step
automatically near extinction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, ExtinctInput, InsufficientData, MaxStepsExceeded,
                     NewtonDivergence, ZeroFieldError)
from .functionals import (EnergyReport, FdeParams, beta, energy_report, h10_sq, lm_norm,
                          lm_power, rayleigh_R)
from .geometry import Field, Grid
from .implicit import implicit_solve

# noise cut for the H^1_0 fit window, relative to ||u0||_{H^1_0}
_NOISE_CUT = 1e3 * np.finfo(float).eps


@dataclass(frozen=True)
class EvolutionConfig:
    """Time-stepping controls shared by the physical and rescaled solvers.

    ``dt_init=None`` picks ``drop_target`` times the lower extinction bound
    of the initial datum. ``extinction_norm_floor`` is relative to
    ``||u0||_{L^m}``. ``ds`` is the rescaled-time step.
    """

    dt_init: float | None = None
    dt_min: float = 0.0
    dt_max: float = math.inf
    newton_tol: float = 1e-12
    extinction_norm_floor: float = 1e-6
    max_steps: int = 200_000
    drop_target: float = 0.005
    drop_min: float = 0.001
    drop_max: float = 0.02
    snapshot_stride: int = 1
    ds: float = 0.02

    def __post_init__(self):
        if self.dt_init is not None and not (self.dt_min <= self.dt_init <= self.dt_max):
            raise ConfigError("need dt_min <= dt_init <= dt_max")
        if self.dt_init is not None and self.dt_init <= 0:
            raise ConfigError("dt_init must be positive")
        if self.dt_min < 0 or self.dt_max <= 0 or self.dt_min > self.dt_max:
            raise ConfigError("invalid dt_min/dt_max")
        if self.newton_tol <= 0:
            raise ConfigError("newton_tol must be positive")
        if self.extinction_norm_floor <= 0:
            raise ConfigError("extinction_norm_floor must be positive")
        if not (0 < self.drop_min <= self.drop_target <= self.drop_max < 1):
            raise ConfigError("need 0 < drop_min <= drop_target <= drop_max < 1")
        if self.max_steps < 1 or self.snapshot_stride < 1:
            raise ConfigError("max_steps and snapshot_stride must be >= 1")
        if self.ds <= 0:
            raise ConfigError("ds must be positive")


@dataclass
class ExtinctionEstimate:
    t_star: float
    method: str
    fit_exponent: float
    lower_bound: float
    upper_bound: float
    fit_residual: float = 0.0
    window: tuple = ()

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "method": self.method,
            "fit_exponent": self.fit_exponent,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "fit_residual": self.fit_residual,
        }


@dataclass
class Trajectory:
    """Accepted steps of a physical-time run.

    ``times[k]`` and ``monitors[k]`` describe the state after step ``k``
    (index 0 is the initial datum). Snapshots are thinned by the stride.
    """

    grid: Grid
    times: np.ndarray
    monitors: list[EnergyReport]
    snapshot_times: np.ndarray
    snapshots: list[np.ndarray] = field(repr=False)

    @property
    def h10(self) -> np.ndarray:
        return np.array([r.h10 for r in self.monitors])

    @property
    def lm(self) -> np.ndarray:
        return np.array([r.lm for r in self.monitors])

    @property
    def accepted_steps(self) -> int:
        return len(self.times) - 1

    def snapshot(self, k: int) -> Field:
        return Field(self.grid, self.snapshots[k])


def step_fde(u: Field, dt: float, p: FdeParams, cfg: EvolutionConfig = EvolutionConfig(),
             floor: float = 0.0) -> Field:
    """One backward Euler step ``(beta(u+) - beta(u))/dt = Lap u+``.

    Raises :class:`ExtinctInput` when ``||u||_m <= floor`` and
    :class:`NewtonDivergence` if the nonlinear solve fails (callers halve
    ``dt`` and retry).
    """
    if not (cfg.dt_min <= dt <= cfg.dt_max) or dt <= 0:
        raise ConfigError(f"dt={dt} outside [{cfg.dt_min}, {cfg.dt_max}]")
    if lm_norm(u, p.m) <= floor:
        raise ExtinctInput("state is below the extinction floor")
    x, _ = implicit_solve(u.grid, p.m, dt, beta(u.values, p.m), u.values, cfg.newton_tol)
    return Field(u.grid, x)


def extinction_bounds(u0: Field, p: FdeParams, sobolev_constant: float | None = None):
    """Analytic lower/upper bounds on the extinction time of ``u0``."""
    lm = lm_norm(u0, p.m)
    lower = p.lambda_m * lm ** (p.m - 2) / rayleigh_R(u0, p) ** 2
    upper = math.inf
    if sobolev_constant is not None:
        upper = p.lambda_m * sobolev_constant**2 * lm ** (p.m - 2)
    return lower, upper


def _decay_window(times, h10, h0):
    """Indices of the final decade of ``||u||_{H^1_0}`` above the noise cut."""
    last = h10[-1]
    keep = (h10 <= 10.0 * last) & (h10 > _NOISE_CUT * h0)
    idx = np.nonzero(keep)[0]
    # the final decade must be contiguous at the tail
    if idx.size:
        gaps = np.nonzero(np.diff(idx) != 1)[0]
        if gaps.size:
            idx = idx[gaps[-1] + 1:]
    return idx


def fit_extinction_time(times, h10, p: FdeParams) -> tuple[float, float, np.ndarray]:
    """Extrapolated zero of ``||u||^(m-2)`` from a linear fit over the final decade."""
    times = np.asarray(times, float)
    h10 = np.asarray(h10, float)
    idx = _decay_window(times, h10, h10[0])
    if idx.size < 5:
        raise InsufficientData(f"only {idx.size} samples in the final decay decade")
    y = h10[idx] ** (p.m - 2)
    t = times[idx]
    # center for conditioning
    tc = t.mean()
    slope, icpt = np.polyfit(t - tc, y, 1)
    if slope >= 0:
        raise InsufficientData("norm is not decaying over the fit window")
    t_star = tc - icpt / slope
    pred = icpt + slope * (t - tc)
    resid = float(np.sqrt(np.mean((pred - y) ** 2)) / np.max(y))
    return float(t_star), resid, idx


def fit_extinction_rate(traj: Trajectory, est: ExtinctionEstimate, p: FdeParams) -> float:
    """Slope of ``log ||u||_{H^1_0}`` against ``log(t* - t)`` over the final decade."""
    h10 = traj.h10
    if h10[-1] > 1e-3 * h10[0]:
        raise InsufficientData("trajectory did not decay to within 1e-3 of extinction")
    idx = _decay_window(traj.times, h10, h10[0])
    gap = est.t_star - traj.times[idx]
    idx = idx[gap > 0]
    if idx.size < 5:
        raise InsufficientData("too few samples before the estimated extinction time")
    x = np.log(est.t_star - traj.times[idx])
    y = np.log(h10[idx])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


class FdeSolver:
    """Adaptive backward-Euler integrator for one trajectory at a time."""

    def __init__(self, p: FdeParams, cfg: EvolutionConfig = EvolutionConfig(),
                 sobolev_constant: float | None = None):
        self.p = p
        self.cfg = cfg
        self.sobolev_constant = sobolev_constant

    def _initial_dt(self, u0: Field) -> float:
        cfg = self.cfg
        if cfg.dt_init is not None:
            return cfg.dt_init
        lower = self.p.lambda_m * lm_power(u0, self.p.m) / h10_sq(u0)
        return min(max(cfg.drop_target * lower, cfg.dt_min), cfg.dt_max)

    def run(self, u0: Field, keep_snapshots: bool = True) -> Trajectory:
        p, cfg = self.p, self.cfg
        m = p.m
        lm0 = lm_norm(u0, m)
        if lm0 == 0.0:
            raise ZeroFieldError("initial datum is zero")
        floor = cfg.extinction_norm_floor * lm0
        grid = u0.grid
        x = u0.values.copy()
        t = 0.0
        dt = self._initial_dt(u0)
        times = [0.0]
        monitors = [energy_report(u0, p)]
        snaps = [x.copy()] if keep_snapshots else []
        snap_t = [0.0] if keep_snapshots else []
        lm_cur = lm0
        steps = 0
        x_prev, dt_prev = None, dt
        while lm_cur > floor:
            if steps >= cfg.max_steps:
                raise MaxStepsExceeded(f"no extinction after {steps} steps (t={t:.6g})")
            try:
                guess = x if x_prev is None else x + (x - x_prev) * (dt / dt_prev)
                xn, _ = implicit_solve(grid, m, dt, beta(x, m), guess, cfg.newton_tol)
            except NewtonDivergence:
                if dt <= cfg.dt_min:
                    raise
                dt = max(dt / 2, cfg.dt_min)
                continue
            lm_new = float(np.sum(grid.quad_weights * np.abs(xn) ** m)) ** (1 / m)
            drop = 1.0 - lm_new / lm_cur
            if drop > cfg.drop_max and dt > cfg.dt_min:
                dt = max(dt * max(0.2, 0.9 * cfg.drop_target / drop), cfg.dt_min)
                continue
            steps += 1
            t += dt
            x_prev, dt_prev = x, dt
            x = xn
            lm_cur = lm_new
            times.append(t)
            monitors.append(energy_report(Field(grid, x), p))
            if keep_snapshots and (steps % cfg.snapshot_stride == 0 or lm_cur <= floor):
                snaps.append(x.copy())
                snap_t.append(t)
            # dt is only retuned when the drop leaves [target/2, 2 target]; piecewise
            # constant steps let polar solves reuse their factorization
            if not (0.5 * cfg.drop_target <= drop <= 2.0 * cfg.drop_target):
                factor = cfg.drop_target / max(drop, 1e-300)
                dt = min(max(dt * min(2.0, max(0.5, factor)), cfg.dt_min), cfg.dt_max)
        return Trajectory(grid, np.array(times), monitors, np.array(snap_t), snaps)

    def estimate(self, traj: Trajectory, u0: Field) -> ExtinctionEstimate:
        p = self.p
        t_star, resid, idx = fit_extinction_time(traj.times, traj.h10, p)
        lower, upper = extinction_bounds(u0, p, self.sobolev_constant)
        est = ExtinctionEstimate(t_star, "power-law-fit", float("nan"), lower, upper, resid,
                                 (int(idx[0]), int(idx[-1])))
        try:
            est.fit_exponent = fit_extinction_rate(traj, est, p)
        except InsufficientData:
            pass
        return est

    def evolve(self, u0: Field) -> tuple[Trajectory, ExtinctionEstimate]:
        traj = self.run(u0)
        return traj, self.estimate(traj, u0)

    def estimate_extinction_time(self, u0: Field) -> ExtinctionEstimate:
        traj = self.run(u0, keep_snapshots=False)
        return self.estimate(traj, u0)


def evolve_fde(u0: Field, p: FdeParams, cfg: EvolutionConfig = EvolutionConfig(),
               sobolev_constant: float | None = None) -> tuple[Trajectory, ExtinctionEstimate]:
    """Integrate to extinction and estimate ``t*`` and the decay exponent."""
    return FdeSolver(p, cfg, sobolev_constant).evolve(u0)
