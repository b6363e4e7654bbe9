import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdelab.errors import GeometryError, GridMismatchError
from fdelab.geometry import (Field, GridSpec, apply_laplacian, build_grid, dirichlet_eigenvectors,
                             first_eigenvector, grid_from_spec, inner, solve_poisson)


@pytest.mark.parametrize("kw", [
    dict(shape="interval", a=0.0, b=1.0, n=64),
    dict(shape="radial", a=0.0, b=1.0, n=64, N=3),
    dict(shape="radial", a=1.0, b=2.0, n=64, N=2),
    dict(shape="polar2d", a=1.0, b=1.5, n=16, n_theta=32),
])
def test_measure_exact(kw):
    g = build_grid(kw.pop("shape"), **kw)
    assert g.measure() == pytest.approx(g.exact_measure(), rel=1e-12)


def test_stiffness_symmetric_positive():
    g = build_grid("polar2d", a=1.0, b=2.0, n=12, n_theta=16)
    K = g.stiffness.toarray()
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


def test_laplacian_of_sine_second_order():
    errs = []
    for n in (63, 127):
        g = build_grid("interval", a=0.0, b=1.0, n=n)
        lap = apply_laplacian(g.laplacian, g.sample(lambda x: np.sin(np.pi * x)))
        errs.append(np.max(np.abs(lap.values + np.pi**2 * np.sin(np.pi * g.nodes))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_poisson_ball_quadratic():
    # -Lap g = 1 on the unit 3-ball gives g = (1 - r^2)/6
    g = build_grid("radial", a=0.0, b=1.0, n=200, N=3)
    sol = solve_poisson(g.laplacian, Field(g, np.ones(g.size)))
    assert np.max(np.abs(sol.values - (1 - g.nodes**2) / 6)) < 1e-4


def test_first_eigenvalue_interval():
    g = build_grid("interval", a=0.0, b=1.0, n=255)
    e, mu = first_eigenvector(g)
    assert mu == pytest.approx(np.pi**2, rel=1e-4)
    assert np.all(e.values > 0)
    assert inner(e, e) == pytest.approx(1.0)


def test_eigenvectors_orthonormal():
    g = build_grid("radial", a=1.0, b=2.0, n=50, N=2)
    vs = dirichlet_eigenvectors(g, 4)
    G = np.array([[inner(u, v) for v in vs] for u in vs])
    assert np.allclose(G, np.eye(4), atol=1e-10)


def test_spec_roundtrip():
    g = build_grid("polar2d", a=1.0, b=1.1, n=8, n_theta=16)
    spec = GridSpec.from_dict(g.spec.to_dict())
    assert spec == g.spec
    assert grid_from_spec(spec).compatible(g)


@pytest.mark.parametrize("kw", [
    dict(shape="interval", a=1.0, b=0.0, n=16),
    dict(shape="interval", a=0.0, b=1.0, n=2),
    dict(shape="radial", a=-1.0, b=1.0, n=16),
    dict(shape="polar2d", a=0.0, b=1.0, n=16, n_theta=16),
    dict(shape="polar2d", a=1.0, b=2.0, n=16, n_theta=15),
    dict(shape="sphere", a=0.0, b=1.0, n=16),
])
def test_bad_grids(kw):
    with pytest.raises(GeometryError):
        build_grid(kw.pop("shape"), **kw)


def test_grid_mismatch():
    a = build_grid("interval", n=16)
    b = build_grid("interval", n=17)
    with pytest.raises(GridMismatchError):
        Field(a, np.ones(16)) + Field(b, np.ones(17))


def test_nonfinite_rejected():
    g = build_grid("interval", n=16)
    with pytest.raises(ValueError):
        Field(g, np.full(16, np.nan))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_green_identity(seed):
    # (-Lap u, v)_W = u^T K v for arbitrary nodal vectors
    g = build_grid("radial", a=0.5, b=2.0, n=24, N=3)
    r = np.random.default_rng(seed)
    u, v = Field(g, r.standard_normal(g.size)), Field(g, r.standard_normal(g.size))
    lhs = -inner(apply_laplacian(g.laplacian, u), v)
    assert lhs == pytest.approx(float(u.values @ (g.stiffness @ v.values)), rel=1e-9, abs=1e-9)
