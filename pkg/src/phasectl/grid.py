"""Uniform 1D/2D grids with homogeneous-Neumann finite differences.

Fields are plain ``numpy`` arrays of length ``grid.size`` (C-order over the
axes, ``indexing="ij"``). Time trajectories are 2D arrays whose first axis is
the time level.

The Laplacian uses mirrored ghost points, so it is self-adjoint with respect
to the trapezoidal inner product and annihilates constants. Both facts are
what make the discrete mass and energy identities exact.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    GridMismatchError,
    InvalidDimensionError,
    LinearSolveError,
    LineSearchError,
    NewtonError,
    SizeCapError,
    ValidationError,
)

DEFAULT_MAX_POINTS = 2**20


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int
    extent: tuple[float, ...]

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(e / (self.n - 1) for e in self.extent)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def volume(self) -> float:
        return math.prod(self.extent)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, e, self.n) for e in self.extent]

    def coords(self) -> list[np.ndarray]:
        """Flattened coordinate arrays, one per axis."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return [m.ravel() for m in mesh]

    def check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.size:
            raise GridMismatchError(
                f"field has {v.shape[-1]} values, grid has {self.size} points"
            )
        return v


def build_grid(dim: int, n: int, extent: float | Sequence[float] = 1.0,
               max_points: int = DEFAULT_MAX_POINTS) -> Grid:
    if dim not in (1, 2):
        raise InvalidDimensionError(f"dim must be 1 or 2, got {dim!r}")
    if int(n) != n or n < 2:
        raise ValidationError(f"need at least 2 points per axis, got {n!r}")
    if np.ndim(extent) == 0:
        ext = (float(extent),) * dim
    else:
        ext = tuple(float(e) for e in extent)
        if len(ext) != dim:
            raise InvalidDimensionError("extent length must match dim")
    if any(not (e > 0 and math.isfinite(e)) for e in ext):
        raise ValidationError(f"extent must be positive, got {extent!r}")
    if int(n) ** dim > max_points:
        raise SizeCapError(f"{int(n)}^{dim} points exceeds the cap of {max_points}")
    return Grid(dim=dim, n=int(n), extent=ext)


# ---------------------------------------------------------------------------
# operators and quadrature


def _laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    upper = np.ones(n - 1)
    lower = np.ones(n - 1)
    # mirror ghosts: v[-1] = v[1], v[n] = v[n-2]
    upper[0] = 2.0
    lower[-1] = 2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2


def _weights_1d(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@functools.lru_cache(maxsize=32)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse Neumann Laplacian; rows sum to zero."""
    mats = [_laplacian_1d(grid.n, h) for h in grid.h]
    if grid.dim == 1:
        return mats[0]
    eye = sp.identity(grid.n, format="csr")
    return (sp.kron(mats[0], eye) + sp.kron(eye, mats[1])).tocsr()


@functools.lru_cache(maxsize=32)
def _weights(grid: Grid) -> np.ndarray:
    ws = [_weights_1d(grid.n, h) for h in grid.h]
    w = ws[0]
    for wk in ws[1:]:
        w = np.outer(w, wk).ravel()
    w.setflags(write=False)
    return w


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Trapezoidal weights (already multiplied by the cell volume)."""
    return _weights(grid)


def laplacian_apply(grid: Grid, v: np.ndarray) -> np.ndarray:
    v = grid.check(v)
    return (laplacian_matrix(grid) @ v.T).T


def gradient(grid: Grid, v: np.ndarray) -> list[np.ndarray]:
    """Forward-difference gradient, one edge array per axis."""
    v = grid.check(v).reshape(grid.shape)
    return [np.diff(v, axis=k) / grid.h[k] for k in range(grid.dim)]


def integrate(grid: Grid, v: np.ndarray) -> float:
    v = grid.check(v)
    return v @ _weights(grid)


def inner_product(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    a = grid.check(a)
    b = grid.check(b)
    return float(np.sum(a * b * _weights(grid)))


def _gradient_sq(grid: Grid, v: np.ndarray) -> float:
    # edges along axis k get full spacing h_k, trapezoid weights elsewhere
    total = 0.0
    ws = [_weights_1d(grid.n, h) for h in grid.h]
    for k, g in enumerate(gradient(grid, v)):
        w = np.ones(1)
        for j in range(grid.dim):
            wj = np.full(grid.n - 1, grid.h[j]) if j == k else ws[j]
            w = np.multiply.outer(w, wj)
        total += float(np.sum(g**2 * w.reshape(g.shape)))
    return total


def norm(grid: Grid, v: np.ndarray, kind: str = "L2") -> float:
    v = grid.check(v)
    if kind == "L2":
        return math.sqrt(max(inner_product(grid, v, v), 0.0))
    if kind == "Linf":
        return float(np.max(np.abs(v))) if v.size else 0.0
    if kind == "H1":
        return math.sqrt(inner_product(grid, v, v) + _gradient_sq(grid, v))
    raise ValueError(f"unknown norm kind {kind!r}")


def gradient_norm_sq(grid: Grid, v: np.ndarray) -> float:
    """``||grad v||^2`` with forward differences; equals ``-<lap v, v>``."""
    return _gradient_sq(grid, v)


# ---------------------------------------------------------------------------
# space-time norms for trajectories of shape (n_levels, size)
#
# Time integrals use the right-endpoint rectangle rule over levels 1..N, the
# same rule as the cost functional, so every duality pairing agrees.


def l2q_inner(grid: Grid, tau: float, a: np.ndarray, b: np.ndarray) -> float:
    """L2(Q) pairing of two control-shaped arrays (levels 1..N)."""
    return float(tau * np.sum(a * b * _weights(grid)))


def l2q_norm(grid: Grid, tau: float, a: np.ndarray) -> float:
    return math.sqrt(max(l2q_inner(grid, tau, a, a), 0.0))


def _levels(traj: np.ndarray) -> np.ndarray:
    return np.asarray(traj)[1:]


def spacetime_norm(grid: Grid, tau: float, traj: np.ndarray, kind: str) -> float:
    """Discrete Bochner norms of a trajectory with levels 0..N.

    ``kind`` is one of ``L2(Q)``, ``Linf(Q)``, ``Linf(H)``, ``Linf(V)``,
    ``Linf(W)``, ``L2(V)``, ``L2(W)``, ``H1(H)``, ``H1(V)``, ``W1inf(H)``.
    H, V and W are L2, H1 and {H2 with Neumann} in space; the W norm is taken
    as ``sqrt(||v||^2 + ||lap v||^2)``.
    """
    traj = np.asarray(traj, dtype=float)
    dt = np.diff(traj, axis=0) / tau

    def sq(v, space):
        if space == "H":
            return inner_product(grid, v, v)
        if space == "V":
            return inner_product(grid, v, v) + _gradient_sq(grid, v)
        lap = laplacian_apply(grid, v)
        return inner_product(grid, v, v) + inner_product(grid, lap, lap)

    if kind == "Linf(Q)":
        return float(np.max(np.abs(traj)))
    if kind.startswith("Linf("):
        space = kind[5]
        return math.sqrt(max(sq(v, space) for v in traj))
    if kind.startswith("L2("):
        space = {"Q": "H"}.get(kind[3], kind[3])
        return math.sqrt(tau * sum(sq(v, space) for v in _levels(traj)))
    if kind.startswith("H1("):
        space = kind[3]
        val = tau * sum(sq(v, space) for v in _levels(traj))
        val += tau * sum(sq(d, space) for d in dt)
        return math.sqrt(val)
    if kind == "W1inf(H)":
        return math.sqrt(max(sq(v, "H") for v in traj)) + math.sqrt(
            max(sq(d, "H") for d in dt)
        )
    raise ValueError(f"unknown space-time norm {kind!r}")


# ---------------------------------------------------------------------------
# linear and nonlinear solver kernels


@dataclass(frozen=True)
class LinearOperatorSpec:
    """Matrix-free operator ``apply: Field -> Field``.

    ``weights`` selects the inner product used by CG (Euclidean when None);
    grid operators are self-adjoint in the trapezoidal product, not the
    Euclidean one. ``diagonal`` enables Jacobi preconditioning and
    ``apply_adjoint`` is needed by the normal-equation path for non-SPD
    operators.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    spd: bool = True
    weights: np.ndarray | None = None
    diagonal: np.ndarray | None = None
    apply_adjoint: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, v):
        return self.apply(v)

    def dot(self, a, b):
        if self.weights is None:
            return float(a @ b)
        return float(np.sum(a * b * self.weights))

    def probe_spd(self, size: int, n_probes: int = 5, seed: int = 0) -> bool:
        rng = np.random.default_rng(seed)
        for _ in range(n_probes):
            v = rng.standard_normal(size)
            if not self.dot(self.apply(v), v) > 0:
                return False
        return True


def solve_spd(op: LinearOperatorSpec, rhs: np.ndarray, tol: float = 1e-10,
              max_iter: int | None = None, x0: np.ndarray | None = None,
              preconditioner: str | None = None) -> np.ndarray:
    """Conjugate gradients for an operator declared SPD.

    Stops on ``||Ax - b|| <= tol * ||b||`` (absolute ``tol`` when ``b = 0``),
    norms taken in the operator's inner product.
    """
    if not op.spd:
        raise ValidationError("solve_spd needs an operator declared SPD")
    if not tol > 0:
        raise ValidationError("tol must be positive")
    b = np.asarray(rhs, dtype=float)
    if max_iter is None:
        max_iter = 10 * b.size + 10
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - op.apply(x) if x0 is not None else b.copy()
    bnorm = math.sqrt(op.dot(b, b))
    target = tol * bnorm if bnorm > 0 else tol
    if preconditioner == "jacobi":
        if op.diagonal is None:
            raise ValidationError("Jacobi preconditioning needs op.diagonal")
        minv = 1.0 / np.asarray(op.diagonal, dtype=float)
    elif preconditioner is None:
        minv = None
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    rnorm = math.sqrt(op.dot(r, r))
    if rnorm <= target:
        return x
    z = r * minv if minv is not None else r
    d = z.copy()
    rz = op.dot(r, z)
    for _ in range(max_iter):
        ad = op.apply(d)
        dad = op.dot(d, ad)
        if not dad > 0:
            raise LinearSolveError("operator is not positive definite", rnorm)
        step = rz / dad
        x += step * d
        r -= step * ad
        rnorm = math.sqrt(op.dot(r, r))
        if rnorm <= target:
            return x
        z = r * minv if minv is not None else r
        rz_new = op.dot(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise LinearSolveError(
        f"CG did not converge in {max_iter} iterations (residual {rnorm:.3e})", rnorm
    )


def _solve_normal(op: LinearOperatorSpec, rhs, tol, max_iter):
    if op.apply_adjoint is None:
        raise ValidationError("non-SPD operator needs apply_adjoint")
    normal = LinearOperatorSpec(
        apply=lambda v: op.apply_adjoint(op.apply(v)), spd=True, weights=op.weights
    )
    return solve_spd(normal, op.apply_adjoint(rhs), tol=tol, max_iter=max_iter)


def solve_linear(jac, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Dispatch on the Jacobian type: sparse LU, dense LU, CG or CGNR."""
    if isinstance(jac, LinearOperatorSpec):
        if jac.spd:
            return solve_spd(jac, rhs, tol=tol)
        return _solve_normal(jac, rhs, tol, None)
    if sp.issparse(jac):
        try:
            x = spla.splu(sp.csc_matrix(jac)).solve(rhs)
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse LU failed: {exc}") from exc
    else:
        try:
            x = np.linalg.solve(np.atleast_2d(jac), np.atleast_1d(rhs))
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(f"dense solve failed: {exc}") from exc
        x = x.reshape(np.shape(rhs))
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("linear solve produced non-finite values")
    return x


class NewtonResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def _apply_jac(jac, d):
    if isinstance(jac, LinearOperatorSpec):
        return jac.apply(d)
    return jac @ d


def newton_solve(residual: Callable[[np.ndarray], np.ndarray],
                 jacobian: Callable[[np.ndarray], object],
                 guess: np.ndarray, tol: float = 1e-10, max_iter: int = 50,
                 norm: Callable[[np.ndarray], float] | None = None,
                 linear_tol: float = 1e-12, check_jacobian: bool = False,
                 max_halvings: int = 30) -> NewtonResult:
    """Damped Newton iteration with Armijo backtracking on ``||residual||``.

    ``jacobian(x)`` may return a scipy sparse matrix, a dense array or a
    :class:`LinearOperatorSpec`.
    """
    if norm is None:
        def norm(v):
            return float(np.linalg.norm(v))

    x = np.array(guess, dtype=float)
    res = np.asarray(residual(x), dtype=float)
    rnorm = norm(res)
    if not math.isfinite(rnorm):
        raise NewtonError("residual is not finite at the initial guess", 0, rnorm)
    it = 0
    while rnorm > tol:
        if it >= max_iter:
            raise NewtonError(
                f"Newton did not converge in {max_iter} iterations "
                f"(residual {rnorm:.3e})", it, rnorm)
        jac = jacobian(x)
        d = solve_linear(jac, -res, tol=linear_tol)
        if check_jacobian:
            _check_direction(residual, jac, x, d)
        lam = 1.0
        for _ in range(max_halvings + 1):
            x_new = x + lam * d
            res_new = np.asarray(residual(x_new), dtype=float)
            rn_new = norm(res_new)
            if math.isfinite(rn_new) and rn_new <= (1.0 - 1e-4 * lam) * rnorm:
                break
            lam *= 0.5
        else:
            raise LineSearchError(
                f"Armijo backtracking failed after {max_halvings} halvings "
                f"(residual {rnorm:.3e})", it, rnorm)
        x, res, rnorm = x_new, res_new, rn_new
        it += 1
    return NewtonResult(x, it, rnorm)


def _check_direction(residual, jac, x, d, rel=1e-4):
    scale = max(float(np.linalg.norm(d)), 1e-300)
    e = 1e-6 / scale
    fd = (residual(x + e * d) - residual(x - e * d)) / (2 * e)
    lin = _apply_jac(jac, d)
    err = np.linalg.norm(fd - lin) / max(np.linalg.norm(lin), 1e-300)
    if err > rel:
        raise NewtonError(f"Jacobian inconsistent with residual (rel err {err:.2e})")


class PatternedMatrix:
    """Sparse matrix with a frozen pattern and named diagonal slots.

    ``base`` is a square block matrix; each slot ``(bi, bj)`` is the main
    diagonal of block ``(bi, bj)`` with block size ``block``. ``assemble``
    adds per-slot vectors to a copy of the base values without rebuilding the
    sparsity structure.
    """

    def __init__(self, base, block: int, slots: dict[str, tuple[int, int]]):
        base = sp.csc_matrix(base)
        idx = np.arange(block)
        rows = [idx + bi * block for bi, _ in slots.values()]
        cols = [idx + bj * block for _, bj in slots.values()]
        marker = sp.csc_matrix(
            (np.ones(len(slots) * block), (np.concatenate(rows), np.concatenate(cols))),
            shape=base.shape)
        # |base| + marker has no cancellations, so its pattern is the union
        self._matrix = (abs(base) + marker).tocsc()
        self._matrix.sort_indices()
        coo = base.tocoo()
        self._base = np.zeros(self._matrix.nnz)
        self._base[self._locate(coo.row, coo.col)] += coo.data
        self._pos = {name: self._locate(r, c) for name, r, c in zip(slots, rows, cols)}

    def _locate(self, rows, cols):
        m = self._matrix
        # entries sorted by (col, row): one global searchsorted on col * nrows + row
        ncol_key = np.repeat(np.arange(m.shape[1]), np.diff(m.indptr)) * m.shape[0] + m.indices
        key = np.asarray(cols) * m.shape[0] + np.asarray(rows)
        pos = np.searchsorted(ncol_key, key)
        if np.any(pos >= len(ncol_key)) or np.any(ncol_key[np.minimum(pos, len(ncol_key) - 1)] != key):
            raise ValueError("entry missing from pattern")
        return pos

    def assemble(self, **values) -> sp.csc_matrix:
        data = self._base.copy()
        for name, v in values.items():
            data[self._pos[name]] += v
        m = self._matrix.copy()
        m.data = data
        return m
