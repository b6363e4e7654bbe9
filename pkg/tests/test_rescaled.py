import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdelab.errors import ConfigError, InsufficientData, ZeroFieldError
from fdelab.evolution import EvolutionConfig, FdeSolver, evolve_fde
from fdelab.experiments import project_to_phase_set, random_positive_field
from fdelab.functionals import FdeParams, beta, energy_J, h10_sq, jprime_hminus1
from fdelab.geometry import Field, build_grid
from fdelab.rescaled import (BeyondExtinction, ShootingConfig, check_continuous_dependence,
                             check_uniform_linf, evolve_rescaled, h10_bound, rescale_field,
                             rescale_from_physical, step_rescaled, unscale_field)


@pytest.fixture(scope="module")
def on_phase_set(p3):
    g = build_grid("interval", n=64)
    return project_to_phase_set(random_positive_field(g, 5), p3)


@pytest.fixture(scope="module")
def run(p3, on_phase_set):
    return evolve_rescaled(on_phase_set, 12.0, p3, EvolutionConfig(ds=0.02))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(0.5, 3.0), st.sampled_from([2.5, 3.0, 5.0]))
def test_rescale_roundtrip(frac, t_star, m):
    p = FdeParams(m, 1)
    g = build_grid("interval", n=16)
    u = Field(g, np.linspace(1, 2, 16))
    s, v = rescale_field(u, frac * t_star, t_star, p)
    t, u2 = unscale_field(v, s, t_star, p)
    assert t == pytest.approx(frac * t_star, abs=1e-12)
    assert np.allclose(u2.values, u.values, rtol=1e-10)


def test_rescale_beyond_extinction(p3):
    g = build_grid("interval", n=16)
    with pytest.raises(BeyondExtinction):
        rescale_field(g.zeros() + 1.0, 1.0, 1.0, p3)


def test_profile_is_stationary(p3, profile128):
    phi = profile128.phi
    v = step_rescaled(phi, 0.05, p3)
    assert np.max(np.abs(v.values - phi.values)) < 1e-9 * np.max(phi.values)


def test_step_scheme_residual(p3, on_phase_set):
    ds = 0.03
    g = on_phase_set.grid
    v = step_rescaled(on_phase_set, ds, p3)
    res = (g.quad_weights * beta(v.values, 3) + ds * (g.stiffness @ v.values)
           - (1 + p3.lambda_m * ds) * g.quad_weights * beta(on_phase_set.values, 3))
    assert np.max(np.abs(res)) < 1e-9 * np.max(g.quad_weights * beta(v.values, 3))


def test_ledger_and_monotone_R(run):
    J = run.J
    assert np.max(run.ledger) <= 1e-10 * max(1.0, abs(J[0]))
    assert np.max(np.diff(run.R)) <= 1e-10
    assert np.all(run.dissipation >= 0)


def test_stays_on_phase_set(p3, run):
    solver = FdeSolver(p3)
    for s in (3.0, 10.0):
        _, v = run.snapshot_at(s)
        assert solver.estimate_extinction_time(v).t_star == pytest.approx(1.0, abs=0.01)
    assert run.scale_events and all(abs(c - 1) < 0.05 for _, c in run.scale_events)


def test_h10_bound_respected(p3, run, on_phase_set):
    assert np.max(run.h10 ** 2) <= h10_bound(on_phase_set, p3)


def test_converges_to_profile(p3, run):
    assert run.terminal_residual < 1e-4
    rows = list(run.rows())
    assert len(rows) == len(run.s_times) and len(rows[0]) == 8


def test_linf_report(p3, run):
    rep = check_uniform_linf(run, 0.5, p3)
    assert rep.finite and rep.sup_linf > 0 and rep.ratio > 0
    with pytest.raises(ConfigError):
        check_uniform_linf(run, 1.0, p3)


def test_dependence_identical(p3, on_phase_set):
    rep = check_continuous_dependence(on_phase_set, on_phase_set, 1.0, p3)
    assert rep.identical and rep.passed()


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 1000), st.floats(1e-3, 0.1))
def test_dependence_bound(seed, eps):
    p = FdeParams(3.0, 1)
    g = build_grid("interval", n=48)
    a = random_positive_field(g, seed)
    b = a + random_positive_field(g, seed + 1) * eps
    rep = check_continuous_dependence(a, b, 2.0, p, EvolutionConfig(ds=0.05))
    assert rep.max_ratio <= 1.0 + 1e-9


def test_from_physical(p3):
    g = build_grid("interval", n=64)
    u0 = random_positive_field(g, 0)
    traj, est = evolve_fde(u0, p3)
    rt = rescale_from_physical(traj, est, p3)
    assert np.all(np.diff(rt.s_times) > 0)
    # the rescaled states approach the profile: residual drops by orders of magnitude
    assert rt.jprime[-50] < 1e-2 * rt.jprime[0]


def test_invalid_inputs(p3):
    g = build_grid("interval", n=16)
    with pytest.raises(ZeroFieldError):
        evolve_rescaled(g.zeros(), 1.0, p3)
    with pytest.raises(ConfigError):
        evolve_rescaled(g.zeros() + 1.0, -1.0, p3)
    with pytest.raises(ConfigError):
        ShootingConfig(window=0.0)
