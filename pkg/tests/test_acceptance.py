"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and repeated in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from fdelab.evolution import EvolutionConfig, FdeSolver, evolve_fde
from fdelab.experiments import (StabilityProbeConfig, fit_lojasiewicz, fit_lojasiewicz_points,
                                instability_certificate, lojasiewicz_cloud,
                                nehari_identity_residual, perturbation_directions,
                                project_to_phase_set, random_positive_field, stability_probe,
                                synthetic_lojasiewicz_cloud)
from fdelab.functionals import FdeParams, estimate_sobolev_constant
from fdelab.geometry import build_grid
from fdelab.profiles import minimize_rayleigh, radial_profile_on_polar, shoot_radial
from fdelab.rescaled import ShootingConfig, check_continuous_dependence, evolve_rescaled

RESULTS: list[str] = []


def report(k: int, name: str, ok: bool, detail: str):
    line = f"criterion {k:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_c01_separable_extinction(p3, profile256):
    t0 = time.perf_counter()
    _, est = evolve_fde(profile256.phi, p3)
    wall = time.perf_counter() - t0
    ok = abs(est.t_star - 1.0) <= 0.02 and wall < 30
    report(1, "separable extinction", ok, f"t*={est.t_star:.5f} (target 1 +- 2%), {wall:.1f}s")


@pytest.mark.parametrize("m", [3.0, 4.0])
def test_c02_extinction_exponent(m):
    p = FdeParams(m, 1)
    g = build_grid("interval", n=256)
    t0 = time.perf_counter()
    rates = [evolve_fde(random_positive_field(g, seed), p)[1].fit_exponent for seed in range(3)]
    wall = time.perf_counter() - t0
    want = 1 / (m - 2)
    worst = max(abs(r - want) / want for r in rates)
    ok = worst <= 0.05 and wall < 120
    report(2, f"extinction exponent m={m:g}", ok,
           f"rates={[round(r, 5) for r in rates]} expect {want:g}, worst rel err {worst:.2e}, {wall:.1f}s")


def _ledger_trajectories():
    out = []
    for m, grid in ((3.0, build_grid("interval", n=128)), (4.0, build_grid("interval", n=96)),
                    (2.5, build_grid("radial", a=0.0, b=1.0, n=96, N=3)),
                    (3.0, build_grid("radial", a=1.0, b=2.0, n=96, N=2))):
        p = FdeParams(m, grid.N)
        for seed in range(2):
            v0 = project_to_phase_set(random_positive_field(grid, seed), p)
            out.append((p, evolve_rescaled(v0, 8.0, p, EvolutionConfig(ds=0.02))))
    return out


def test_c03_lyapunov_ledger():
    worst_ledger, worst_R = -np.inf, -np.inf
    for p, tr in _ledger_trajectories():
        worst_ledger = max(worst_ledger, float(np.max(tr.ledger)))
        worst_R = max(worst_R, float(np.max(np.diff(tr.R))))
    ok = worst_ledger < 1e-10 and worst_R <= 1e-10
    report(3, "Lyapunov ledger", ok,
           f"max ledger violation {worst_ledger:.2e}, max R increase {worst_R:.2e} over 8 runs")


def test_c04_lm_identity_first_order(p3, line128):
    v0 = project_to_phase_set(random_positive_field(line128, 3), p3)
    res = []
    for ds in (0.02, 0.01):
        tr = evolve_rescaled(v0, 2.0, p3, EvolutionConfig(ds=ds), stay_on_X=False)
        # the initial layer (s < 0.5) is excluded so all runs compare the same smooth stretch
        res.append(float(np.max(np.abs(tr.lm_residual[tr.s_times[1:] >= 0.5]))))
    ratio = res[0] / res[1]
    report(4, "L^m identity first order", 1.7 <= ratio <= 2.3,
           f"residual {res[0]:.3e} -> {res[1]:.3e}, ratio {ratio:.3f} (need [1.7, 2.3])")


def test_c05_nehari_identity(p3, line256):
    worst = max(nehari_identity_residual(random_positive_field(line256, s), p3)[1] for s in range(50))
    report(5, "Nehari identity", worst <= 1e-8, f"max |J - Nehari energy| = {worst:.2e} over 50 fields")


def test_c06_extinction_sandwich():
    p = FdeParams(3.0, 2)
    t0 = time.perf_counter()
    g = build_grid("radial", a=1.0, b=2.0, n=128, N=2)
    C = estimate_sobolev_constant(p, g)
    solver = FdeSolver(p, EvolutionConfig(), sobolev_constant=C)
    margins = []
    for seed in range(10):
        est = solver.estimate_extinction_time(random_positive_field(g, seed))
        margins.append(min(est.t_star - est.lower_bound, est.upper_bound - est.t_star) / est.t_star)
    wall = time.perf_counter() - t0
    ok = min(margins) >= 0 and wall < 300
    report(6, "extinction sandwich", ok,
           f"C_m={C:.6f} (n=128), min relative margin {min(margins):.3e}, {wall:.1f}s")


def test_c07_continuous_dependence(p3, line128):
    worst = 0.0
    for seed in range(5):
        a = project_to_phase_set(random_positive_field(line128, seed), p3)
        d = perturbation_directions(line128, 1, seed)[0]
        b = a + d * (0.01 * math.sqrt(float(a.values @ (line128.stiffness @ a.values))))
        worst = max(worst, check_continuous_dependence(a, b, 5.0, p3).max_ratio)
    report(7, "continuous dependence", worst <= 1.01, f"max ratio {worst:.6f} over 5 pairs")


def test_c08_thin_annulus_instability():
    p = FdeParams(3.0, 2)
    t0 = time.perf_counter()
    g = build_grid("polar2d", a=1.0, b=1.1, n=32, n_theta=128)
    rad = radial_profile_on_polar(p, g)
    cert = instability_certificate(rad, p)
    ecfg = EvolutionConfig(ds=0.05)
    probe = stability_probe(rad, StabilityProbeConfig(delta=1e-2, num_samples=4, s_horizon=10.0),
                            p, ecfg, ShootingConfig(window=5.0, horizon=15.0, xtol=1e-10))
    wall = time.perf_counter() - t0
    ok = (cert.found and cert.gap > 1e-6 and probe.verdict == "departure-observed"
          and np.all(probe.terminal_energy < rad.energy) and wall < 600)
    report(8, "thin-annulus instability", ok,
           f"certificate gap {cert.gap:.3e} (mode {cert.best_mode}), probe {probe.verdict}, "
           f"J(phi_rad)={rad.energy:.4e}, max terminal J={np.max(probe.terminal_energy):.4e}, {wall:.1f}s")


def test_c09_least_energy_stability(p3, profile128):
    t0 = time.perf_counter()
    cfg = StabilityProbeConfig(delta=1e-2, epsilon=1e-1, num_samples=8)
    rep = stability_probe(profile128, cfg, p3)
    wall = time.perf_counter() - t0
    ok = rep.verdict == "stable-evidence" and wall < 300
    report(9, "least-energy stability", ok,
           f"{rep.verdict}, max sup/||phi|| = {np.max(rep.sups) / (rep.epsilon / 1e-1):.3e}, {wall:.1f}s")


def test_c10_lojasiewicz(p3, profile128):
    fit = fit_lojasiewicz(profile128, lojasiewicz_cloud(profile128, p3))
    synth = fit_lojasiewicz_points(*synthetic_lojasiewicz_cloud(0.3, 1.0))
    ok = 0 < fit.theta <= 0.5 and abs(synth.theta - 0.3) <= 0.01
    report(10, "Lojasiewicz fit", ok,
           f"theta={fit.theta:.4f} from {fit.n_points} points, synthetic 0.3 -> {synth.theta:.4f}")


def test_c11_oracle_cross_validation(p3):
    diffs = []
    for n in (127, 255):
        g = build_grid("interval", n=n)
        diffs.append(float(np.max(np.abs(shoot_radial(p3, g).phi.values - minimize_rayleigh(p3, g).phi.values))))
    ratio = diffs[0] / diffs[1]
    report(11, "shooting vs minimizer", abs(ratio - 4) <= 0.4,
           f"max nodal diff {diffs[0]:.3e} -> {diffs[1]:.3e}, ratio {ratio:.3f}")
