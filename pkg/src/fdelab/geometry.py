"""Grids, finite-volume Laplacians and Poisson solves.

Every supported shape is discretized the same way: nodal unknowns at
interior nodes, exact cell measures as quadrature weights ``W`` and a
symmetric positive definite stiffness matrix ``K`` built from face fluxes.
The discrete Laplacian is ``-W^{-1} K``, so it is symmetric in the weighted
inner product and ``<-Lap w, w>_W = w^T K w`` holds exactly.

Radial shapes drop the surface measure of the unit sphere; every quantity
used downstream (extinction times, Rayleigh ratios, Nehari scalings) is
invariant under that constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GeometryError, GridMismatchError, SolverError

MIN_RESOLUTION = 8
SHAPES = ("interval", "radial", "polar2d")


@dataclass(frozen=True)
class GridSpec:
    """Serializable description of a grid.

    ``n`` is the number of unknowns per direction: interior nodes for an
    interval, radial nodes (including the centre when ``a == 0``) for a
    radial grid, and radial interior nodes for ``polar2d``; ``n_theta`` is
    the angular node count.
    """

    shape: str
    a: float
    b: float
    n: int
    N: int = 1
    n_theta: int = 0

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "a": self.a, "b": self.b, "n": self.n, "N": self.N}
        if self.shape == "polar2d":
            d["n_theta"] = self.n_theta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            shape=str(d["shape"]),
            a=float(d["a"]),
            b=float(d["b"]),
            n=int(d["n"]),
            N=int(d.get("N", 1)),
            n_theta=int(d.get("n_theta", 0)),
        )


def _cell_measure(lo, hi, N):
    """Exact measure of the shell ``lo < r < hi`` with weight ``r^(N-1)``."""
    return (np.asarray(hi, float) ** N - np.asarray(lo, float) ** N) / N


@dataclass(frozen=True, eq=False)
class Grid:
    """Discretized domain.

    Attributes
    ----------
    spec : GridSpec
    h : tuple of float
        Mesh spacing per direction (``(h_r,)`` or ``(h_r, h_theta)``).
    nodes : ndarray
        Interior node coordinates, shape ``(size,)`` or ``(size, 2)`` with
        ``(r, theta)`` columns for polar grids.
    quad_weights : ndarray
        Cell measure attached to each unknown.
    boundary_weight : float
        Measure of the half cells next to Dirichlet boundaries; these carry
        zero nodal values, so they only matter for the total measure.
    """

    spec: GridSpec
    h: tuple
    nodes: np.ndarray
    quad_weights: np.ndarray
    boundary_weight: float
    stiffness: sp.csc_matrix = field(repr=False)

    @property
    def shape(self) -> str:
        return self.spec.shape

    @property
    def size(self) -> int:
        return self.quad_weights.size

    @property
    def N(self) -> int:
        return self.spec.N

    def measure(self) -> float:
        """Total measure (interior cells plus boundary half cells)."""
        return float(self.quad_weights.sum() + self.boundary_weight)

    def exact_measure(self) -> float:
        s = self.spec
        if s.shape == "interval":
            return s.b - s.a
        if s.shape == "radial":
            return float(_cell_measure(s.a, s.b, s.N))
        return np.pi * (s.b**2 - s.a**2)

    @property
    def radii(self) -> np.ndarray:
        return self.nodes[:, 0] if self.nodes.ndim == 2 else self.nodes

    @cached_property
    def laplacian(self) -> "LaplaceOperator":
        return LaplaceOperator(self)

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float))

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.size))

    def sample(self, fn) -> "Field":
        """Evaluate ``fn`` at interior nodes (``fn(r)`` or ``fn(r, theta)``)."""
        if self.nodes.ndim == 2:
            return self.field(fn(self.nodes[:, 0], self.nodes[:, 1]))
        return self.field(fn(self.nodes))

    def compatible(self, other: "Grid") -> bool:
        return self is other or self.spec == other.spec


class Field:
    """Nodal values of a scalar function on the interior nodes of a grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise GridMismatchError(
                f"field has {values.shape} values, grid has {grid.size} unknowns"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values
        values.flags.writeable = False

    def _coerce(self, other):
        if isinstance(other, Field):
            if not self.grid.compatible(other.grid):
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.grid, self._coerce(other) - self.values)

    def __mul__(self, c):
        return Field(self.grid, self.values * self._coerce(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Field(self.grid, self.values / self._coerce(c))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"Field({self.grid.shape}, size={self.values.size})"


def _radial_stiffness(a, b, n, N):
    """Face-flux stiffness and cell weights for a radial/interval grid."""
    if a == 0.0:
        # centre node at r = 0 with a regular (zero flux) inner face
        h = b / n
        r = h * np.arange(n)
        lo = np.concatenate(([0.0], r[1:] - h / 2))
        bdry = float(_cell_measure(b - h / 2, b, N))
    else:
        h = (b - a) / (n + 1)
        r = a + h * np.arange(1, n + 1)
        lo = r - h / 2
        bdry = float(_cell_measure(a, a + h / 2, N) + _cell_measure(b - h / 2, b, N))
    hi = r + h / 2
    weights = _cell_measure(lo, hi, N)
    # conductance of each face between consecutive unknowns, plus the outer
    # (and, for a > 0, inner) Dirichlet faces on the diagonal
    g_hi = hi ** (N - 1) / h
    g_lo = lo ** (N - 1) / h
    if a == 0.0:
        g_lo = g_lo.copy()
        g_lo[0] = 0.0
    main = g_lo + g_hi
    off = -g_hi[:-1]
    K = sp.diags([off, main, off], [-1, 0, 1], format="csc")
    return h, r, weights, bdry, K


def build_grid(shape: str, *, a: float = 0.0, b: float = 1.0, n: int = 64, N: int = 1,
               n_theta: int = 0) -> Grid:
    """Build a grid.

    Parameters
    ----------
    shape : {"interval", "radial", "polar2d"}
    a, b : float
        Interval ends or inner/outer radius.
    n : int
        Unknowns in the (radial) direction, at least 8.
    N : int
        Space dimension for radial grids (ignored otherwise).
    n_theta : int
        Angular nodes for polar grids, even and at least 8.
    """
    if shape not in SHAPES:
        raise GeometryError(f"unknown shape {shape!r}")
    a, b = float(a), float(b)
    if not (a < b):
        raise GeometryError(f"need a < b, got a={a}, b={b}")
    if shape != "interval" and a < 0:
        raise GeometryError(f"inner radius must be nonnegative, got {a}")
    if n < MIN_RESOLUTION:
        raise GeometryError(f"resolution {n} below minimum {MIN_RESOLUTION}")

    if shape == "interval":
        spec = GridSpec("interval", a, b, int(n), 1)
        h = (b - a) / (n + 1)
        nodes = a + h * np.arange(1, n + 1)
        main = np.full(n, 2.0 / h)
        off = np.full(n - 1, -1.0 / h)
        K = sp.diags([off, main, off], [-1, 0, 1], format="csc")
        return Grid(spec, (h,), nodes, np.full(n, h), h, K)

    if shape == "radial":
        if N < 1:
            raise GeometryError(f"dimension must be >= 1, got {N}")
        spec = GridSpec("radial", a, b, int(n), int(N))
        h, r, w, bdry, K = _radial_stiffness(a, b, n, N)
        return Grid(spec, (h,), r, w, bdry, K)

    # polar2d
    if a <= 0:
        raise GeometryError("polar2d grids need an annulus with a > 0")
    if n_theta < MIN_RESOLUTION or n_theta % 2:
        raise GeometryError(f"n_theta must be even and >= {MIN_RESOLUTION}, got {n_theta}")
    spec = GridSpec("polar2d", a, b, int(n), 2, int(n_theta))
    hr, r, wr, bdry_r, Kr = _radial_stiffness(a, b, n, 2)
    ht = 2 * np.pi / n_theta
    theta = ht * np.arange(n_theta)
    # unknown (i, j) -> i * n_theta + j, radius-major
    ring = sp.diags(
        [np.full(n_theta - 1, -1.0), np.full(n_theta, 2.0), np.full(n_theta - 1, -1.0)],
        [-1, 0, 1], format="lil",
    )
    ring[0, n_theta - 1] = -1.0
    ring[n_theta - 1, 0] = -1.0
    # angular face: length h_r, spacing r_i * h_theta
    g_theta = hr / (r * ht)
    K = sp.kron(Kr * ht, sp.identity(n_theta)) + sp.kron(sp.diags(g_theta), ring.tocsr())
    nodes = np.column_stack([np.repeat(r, n_theta), np.tile(theta, n)])
    weights = np.repeat(wr, n_theta) * ht
    return Grid(spec, (hr, ht), nodes, weights, bdry_r * 2 * np.pi, K.tocsc())


def grid_from_spec(spec: GridSpec) -> Grid:
    return build_grid(spec.shape, a=spec.a, b=spec.b, n=spec.n, N=spec.N, n_theta=spec.n_theta)


class LaplaceOperator:
    """Dirichlet Laplacian ``-W^{-1} K`` on a grid, with a cached factorization."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.K = grid.stiffness
        self.W = grid.quad_weights
        self._lu = None

    def _check(self, w: Field):
        if not self.grid.compatible(w.grid):
            raise GridMismatchError("field is not on the operator's grid")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return -(self.K @ x) / self.W

    def apply(self, w: Field) -> Field:
        self._check(w)
        return Field(w.grid, self.matvec(w.values))

    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self.K.tocsc())
        return self._lu

    def solve_stiffness(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``K x = rhs``."""
        x = self.lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SolverError("stiffness solve produced non-finite values")
        return x

    def dirichlet_energy(self, x: np.ndarray) -> float:
        """``x^T K x``, the discrete ``||grad w||^2``."""
        return float(x @ (self.K @ x))


def apply_laplacian(op: LaplaceOperator, w: Field) -> Field:
    """Discrete Laplacian of ``w`` with homogeneous Dirichlet data."""
    return op.apply(w)


def solve_poisson(op: LaplaceOperator, f: Field, rtol: float = 1e-10) -> Field:
    """Return ``g`` with ``-Lap g = f`` and zero boundary values."""
    op._check(f)
    rhs = op.W * f.values
    g = op.solve_stiffness(rhs)
    res = op.K @ g - rhs
    # residual measured in the weighted norm of W^{-1} (K g - W f)
    scale = np.sqrt(np.sum(rhs**2 / op.W))
    err = np.sqrt(np.sum(res**2 / op.W))
    if scale > 0 and err > rtol * scale:
        raise SolverError(f"Poisson residual {err / scale:.2e} above {rtol:.0e}")
    return Field(f.grid, g)


def inner(u: Field, v: Field) -> float:
    """Quadrature inner product."""
    return float(np.sum(u.grid.quad_weights * u.values * v.values))


def first_eigenvector(grid: Grid, iters: int = 200, tol: float = 1e-12) -> tuple[Field, float]:
    """Principal Dirichlet eigenpair by inverse power iteration.

    Returns the positive eigenvector normalized to unit ``L^2`` norm and the
    eigenvalue ``mu`` with ``-Lap e = mu e``.
    """
    op = grid.laplacian
    W = grid.quad_weights
    x = np.ones(grid.size)
    if grid.shape == "polar2d":
        r = grid.radii
        x = (r - grid.spec.a) * (grid.spec.b - r)
    x /= np.sqrt(np.sum(W * x * x))
    mu_old = np.inf
    for _ in range(iters):
        y = op.solve_stiffness(W * x)
        y /= np.sqrt(np.sum(W * y * y))
        mu = op.dirichlet_energy(y)
        x = y
        if abs(mu - mu_old) <= tol * mu:
            break
        mu_old = mu
    x = np.abs(x)
    return Field(grid, x), float(op.dirichlet_energy(x))


def dirichlet_eigenvectors(grid: Grid, k: int) -> list[Field]:
    """Lowest ``k`` Dirichlet eigenvectors, ``L^2``-orthonormal."""
    from scipy.linalg import eigh

    W = grid.quad_weights
    if grid.size <= 1500:
        A = grid.stiffness.toarray()
        vals, vecs = eigh(A, np.diag(W), subset_by_index=[0, k - 1])
    else:
        vals, vecs = spla.eigsh(grid.stiffness, k=k, M=sp.diags(W), sigma=0.0, which="LM")
        order = np.argsort(vals)
        vecs = vecs[:, order]
    out = []
    for j in range(k):
        v = vecs[:, j]
        v = v / np.sqrt(np.sum(W * v * v))
        # fix sign for reproducibility
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out.append(Field(grid, v))
    return out
