"""Numerical probes of stability, instability and the Lojasiewicz exponent.

Everything here is evidence gathered from finitely many samples on a fixed
grid; reports say "evidence" and never claim more.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError, InsufficientData, SolverError
from .evolution import EvolutionConfig, FdeSolver
from .functionals import (FdeParams, energy_J, h10_norm, h10_sq, lm_power, nehari_energy,
                          nehari_scale, phase_scale, rayleigh_R)
from .geometry import Field, dirichlet_eigenvectors
from .profiles import ProfileResult, _finish
from .rescaled import RescaledTrajectory, ShootingConfig, evolve_rescaled


def worker_count() -> int:
    """Concurrency cap from ``FDE_LAB_THREADS`` (default 1)."""
    raw = os.environ.get("FDE_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FDE_LAB_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("FDE_LAB_THREADS must be >= 1")
    return n


def _map(fn, items, workers: int | None = None):
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- stability probe ----------------------------------------------------------

@dataclass(frozen=True)
class StabilityProbeConfig:
    """Perturbation size, sample count, horizon and departure threshold.

    With ``relative`` set, ``delta`` and ``epsilon`` are fractions of
    ``||phi||_{H^1_0}``. ``epsilon=None`` means ``10 * delta``.
    """

    delta: float = 1e-2
    num_samples: int = 8
    s_horizon: float = 20.0
    epsilon: float | None = None
    relative: bool = True
    seed: int = 0
    n_modes: int = 10

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if self.num_samples < 4:
            raise ConfigError("num_samples must be at least 4")
        if self.s_horizon <= 0:
            raise ConfigError("s_horizon must be positive")
        if self.epsilon is not None and not self.epsilon > self.delta:
            raise ConfigError("epsilon must exceed delta")
        if self.n_modes < 1:
            raise ConfigError("n_modes must be >= 1")

    @property
    def eps(self) -> float:
        return 10 * self.delta if self.epsilon is None else self.epsilon


@dataclass
class ProbeReport:
    verdict: str
    delta: float
    epsilon: float
    phi_energy: float
    sups: np.ndarray
    initial_deviation: np.ndarray
    terminal_energy: np.ndarray
    terminal_residual: np.ndarray
    terminal_profiles: list[Field] = field(repr=False, default_factory=list)

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "phi_energy": self.phi_energy,
            "sups": self.sups.tolist(),
            "initial_deviation": self.initial_deviation.tolist(),
            "terminal_energy": self.terminal_energy.tolist(),
            "terminal_residual": self.terminal_residual.tolist(),
        }


def perturbation_directions(grid, n: int, seed: int, n_modes: int = 10) -> list[Field]:
    """``n`` random combinations of the lowest Dirichlet modes, unit in ``H^1_0``."""
    modes = dirichlet_eigenvectors(grid, n_modes)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        coef = rng.standard_normal(n_modes)
        d = np.zeros(grid.size)
        for c, e in zip(coef, modes):
            d += c * e.values
        d /= math.sqrt(float(d @ (grid.stiffness @ d)))
        out.append(Field(grid, d))
    return out


def project_to_phase_set(w: Field, p: FdeParams, cfg: EvolutionConfig = EvolutionConfig()) -> Field:
    """``x(w) w``; raises :class:`SolverError` when the extinction fit fails."""
    try:
        return w * phase_scale(w, p, FdeSolver(p, cfg))
    except SolverError as exc:
        raise SolverError(f"projection onto the phase set failed: {exc}") from exc


def stability_probe(phi: ProfileResult, cfg: StabilityProbeConfig, p: FdeParams,
                    evo_cfg: EvolutionConfig = EvolutionConfig(),
                    shoot: ShootingConfig | None = None,
                    workers: int | None = None) -> ProbeReport:
    """Perturb ``phi``, project onto the phase set, run the rescaled flow, record departures."""
    grid = phi.phi.grid
    norm = h10_norm(phi.phi)
    scale = norm if cfg.relative else 1.0
    delta, eps = cfg.delta * scale, cfg.eps * scale
    dirs = perturbation_directions(grid, cfg.num_samples, cfg.seed, cfg.n_modes)
    traj_cfg = EvolutionConfig(**{**evo_cfg.__dict__, "snapshot_stride": 1})

    def run(d: Field):
        if delta == 0.0:
            v0 = phi.phi
        else:
            v0 = project_to_phase_set(phi.phi + d * delta, p, evo_cfg)
        tr = evolve_rescaled(v0, cfg.s_horizon, p, traj_cfg, stay_on_X=True, shoot=shoot)
        devs = [h10_norm(Field(grid, x) - phi.phi) for x in tr.snapshots]
        return max(devs), devs[0], tr.J[-1], tr.terminal_residual, tr.terminal()

    res = _map(run, dirs, workers)
    sups = np.array([r[0] for r in res])
    verdict = "departure-observed" if np.any(sups >= eps) else "stable-evidence"
    return ProbeReport(
        verdict=verdict,
        delta=delta,
        epsilon=eps,
        phi_energy=phi.energy,
        sups=sups,
        initial_deviation=np.array([r[1] for r in res]),
        terminal_energy=np.array([r[2] for r in res]),
        terminal_residual=np.array([r[3] for r in res]),
        terminal_profiles=[r[4] for r in res],
    )


def profile_from_trajectory(traj: RescaledTrajectory, p: FdeParams) -> ProfileResult:
    """Terminal state of a rescaled run as a profile candidate."""
    return _finish(traj.terminal(), p, "rescaled-flow-limit")


# -- instability certificate --------------------------------------------------

@dataclass
class CertificateReport:
    found: bool
    gap: float
    best_mode: int | None
    best_amplitude: float | None
    phi_energy: float
    candidate_energy: float | None
    nehari_bound: float | None
    candidates: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def instability_certificate(phi_radial: ProfileResult, p: FdeParams,
                            modes=(1, 2, 3), amplitudes=(1e-3, 1e-2, 5e-2),
                            evo_cfg: EvolutionConfig = EvolutionConfig()) -> CertificateReport:
    """Look for ``v0`` on the phase set near ``phi`` with ``J(v0) < J(phi)``.

    Candidates are ``phi (1 + a cos(k theta))``. Along each ray ``J`` peaks
    at the Nehari point, and the phase-set point lies below it, so
    ``J(x(w) w) <= nehari_energy(R(w))``; any candidate with ``R(w) < R(phi)``
    therefore descends. Only the best candidate is projected with a full
    extinction-time estimate.
    """
    phi = phi_radial.phi
    grid = phi.grid
    if grid.shape != "polar2d":
        raise GeometryError("instability certificate needs a polar2d grid")
    theta = grid.nodes[:, 1]
    R_phi = rayleigh_R(phi, p)
    J_phi = energy_J(phi, p)
    rows = []
    best = None
    for k in modes:
        for a in amplitudes:
            w = Field(grid, phi.values * (1 + a * np.cos(k * theta)))
            R = rayleigh_R(w, p)
            rows.append({"mode": int(k), "amplitude": float(a), "rayleigh": R,
                         "nehari_energy": nehari_energy(R, p)})
            if a != 0 and R < R_phi and (best is None or R < best[0]):
                best = (R, k, a, w)
    if best is None:
        return CertificateReport(False, 0.0, None, None, J_phi, None, None, rows)
    R, k, a, w = best
    v0 = project_to_phase_set(w, p, evo_cfg)
    Jv = energy_J(v0, p)
    gap = J_phi - Jv
    return CertificateReport(gap > 0, gap, int(k), float(a), J_phi, Jv, nehari_energy(R, p), rows)


# -- Lojasiewicz fit ----------------------------------------------------------

@dataclass
class LojasiewiczFit:
    theta: float
    omega: float
    slope: float
    intercept: float
    n_points: int
    in_range: bool


def fit_lojasiewicz_points(jprime, gap, window=(1e-10, 1e-2), min_points: int = 20) -> LojasiewiczFit:
    """Fit ``log gap = slope log ||J'|| + intercept`` over ``gap`` in ``window``.

    ``theta = 1 - 1/slope`` and ``omega = exp(intercept/slope)`` so that
    ``gap^(1-theta) = omega ||J'||`` on the fitted line.
    """
    jprime = np.asarray(jprime, float)
    gap = np.asarray(gap, float)
    lo, hi = window
    keep = (gap >= lo) & (gap <= hi) & (jprime > 0)
    if int(keep.sum()) < min_points:
        raise InsufficientData(f"{int(keep.sum())} points in the fit window, need {min_points}")
    x = np.log(jprime[keep])
    y = np.log(gap[keep])
    slope, icpt = np.polyfit(x, y, 1)
    theta = 1 - 1 / slope
    return LojasiewiczFit(float(theta), float(math.exp(icpt / slope)), float(slope), float(icpt),
                          int(keep.sum()), bool(0 < theta <= 0.5 + 1e-9))


def fit_lojasiewicz(phi: ProfileResult | float, trajectories, p: FdeParams | None = None,
                    window=(1e-10, 1e-2)) -> LojasiewiczFit:
    """Fit the exponent on the pooled ``(||J'||_{H^-1}, J - J(phi))`` cloud."""
    J_phi = phi.energy if isinstance(phi, ProfileResult) else float(phi)
    jp = np.concatenate([t.jprime for t in trajectories])
    gap = np.concatenate([t.J - J_phi for t in trajectories])
    return fit_lojasiewicz_points(jp, gap, window)


def synthetic_lojasiewicz_cloud(theta: float, omega: float, n: int = 200, seed: int = 0,
                                noise: float = 0.0):
    """Points on ``gap^(1-theta) = omega ||J'||`` with optional log-normal noise."""
    rng = np.random.default_rng(seed)
    gap = 10 ** rng.uniform(-9.5, -2.5, n)
    jp = gap ** (1 - theta) / omega
    if noise:
        jp = jp * np.exp(noise * rng.standard_normal(n))
    return jp, gap


def lojasiewicz_cloud(phi: ProfileResult, p: FdeParams, n_traj: int = 4, delta: float = 0.05,
                      s_end: float = 20.0, seed: int = 1,
                      evo_cfg: EvolutionConfig = EvolutionConfig()) -> list[RescaledTrajectory]:
    """Rescaled runs started on the phase set near ``phi``."""
    grid = phi.phi.grid
    norm = h10_norm(phi.phi)
    traj_cfg = EvolutionConfig(**{**evo_cfg.__dict__, "snapshot_stride": 1})
    out = []
    for d in perturbation_directions(grid, n_traj, seed):
        v0 = project_to_phase_set(phi.phi + d * (delta * norm), p, evo_cfg)
        out.append(evolve_rescaled(v0, s_end, p, traj_cfg))
    return out


# -- Nehari versus phase set --------------------------------------------------

@dataclass
class NehariPhaseRow:
    n: float
    x: float
    nehari_residual: float
    t_star_projected: float
    x_le_n: bool
    identity_residual: float

    def passed(self, t_tol: float = 0.02) -> bool:
        return (self.nehari_residual <= 1e-10 and abs(self.t_star_projected - 1) <= t_tol
                and self.x_le_n and self.identity_residual <= 1e-8)


def nehari_identity_residual(w: Field, p: FdeParams) -> tuple[float, float]:
    """Residuals of the Nehari constraint and the ``J``-``R`` identity at ``n(w) w``."""
    nw = w * nehari_scale(w, p)
    a = h10_sq(nw)
    b = p.lambda_m * lm_power(nw, p.m)
    constraint = abs(a - b) / a
    identity = abs(energy_J(nw, p) - nehari_energy(rayleigh_R(w, p), p))
    return constraint, identity


def nehari_vs_phase_check(samples, p: FdeParams, evo_cfg: EvolutionConfig = EvolutionConfig(),
                          workers: int | None = None) -> list[NehariPhaseRow]:
    """Compare the Nehari and phase-set scalings sample by sample."""
    def one(w: Field) -> NehariPhaseRow:
        solver = FdeSolver(p, evo_cfg)
        n = nehari_scale(w, p)
        x = phase_scale(w, p, solver)
        cons, ident = nehari_identity_residual(w, p)
        t_proj = solver.estimate_extinction_time(w * x).t_star
        # x <= n up to the extinction fit tolerance
        return NehariPhaseRow(n, x, cons, t_proj, x <= n * (1 + 0.02 / (p.m - 2)), ident)

    return _map(one, list(samples), workers)


def random_positive_field(grid, seed: int, n_modes: int = 6, strength: float = 0.5) -> Field:
    """Smooth positive field ``e1 exp(strength * q)`` with ``q`` a random low-mode mix.

    ``e1`` is the principal Dirichlet eigenvector, so the result vanishes
    at the boundary like it and stays positive inside.
    """
    modes = dirichlet_eigenvectors(grid, n_modes)
    rng = np.random.default_rng(seed)
    q = sum(c * e.values for c, e in zip(rng.standard_normal(n_modes), modes))
    q = q / np.max(np.abs(q))
    e1 = np.abs(modes[0].values)
    return Field(grid, e1 * np.exp(strength * q) * rng.uniform(0.5, 2.0))
