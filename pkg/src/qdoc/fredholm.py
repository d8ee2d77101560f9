"""Nystrom discretization of the run-length integral equations.

For a procedure ``S_n = xi(S_{n-1}) Lambda_n`` stopped at ``S_n >= A`` the
quantities of interest solve second-kind Fredholm equations on ``[0, A]``

    u(s) = q(s) + int_0^A u(x) d/dx F_i(x / xi(s)) dx,

with ``q = 1`` for expected run lengths and ``q = phi_0`` for the integral
average detection delay.  The kernel is never differentiated: over each grid
cell it is integrated exactly through CDF differences.

Two cell rules are available.

``"linear"`` (default)
    Product integration with the unknown interpolated linearly between the
    ``N + 1`` nodes ``x_0 .. x_N``.  Cell weights need the truncated first
    moment of the likelihood ratio in addition to its CDF.  For CUSUM the
    cell containing ``s = 1`` is split, because every solution is constant on
    ``[0, 1]`` and has a derivative jump at 1.  Second order in ``h``.
``"rectangle"``
    The unknown is taken constant on each cell and equal to its value at the
    right end point; ``N`` unknowns at ``x_1 .. x_N``, entry ``(m, n)`` is
    ``F_i(x_n / xi(x_m)) - F_i(x_{n-1} / xi(x_m))``.  First order in ``h``.

Matrices are stored with rows indexing the evaluation (collocation) point and
columns the unknowns, so every system reads ``(I - K) u = q``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve

from .errors import NumericalError, SpectralRadiusError
from .model import ChangeModel, Regime
from .procedure import Procedure, get_procedure

__all__ = [
    "Grid",
    "KernelMatrix",
    "GridFunction",
    "SpectralBound",
    "QUADRATURES",
    "build_kernel_matrix",
    "solve_run_length",
    "solve_iadd",
    "nystrom_eval",
    "apply_operator",
    "spectral_radius_bound",
    "dump_matrix_csv",
]

QUADRATURES = ("linear", "rectangle")
QUADRATURE_ORDER = {"linear": 2, "rectangle": 1}

NEGATIVE_ENTRY_TOL = 1e-14
RESIDUAL_TOL = 1e-10
ROW_SUM_SLACK = 1e-13  # summation rounding allowed above 1 when the escape mass is positive
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class Grid:
    """Uniform partition of ``[0, A]`` into ``N`` cells."""

    A: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.A) and self.A > 0):
            raise ValueError("grid threshold A must be positive and finite")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("grid needs N >= 2 cells")
        object.__setattr__(self, "A", float(self.A))
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return self.A / self.N

    @functools.cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(0.0, self.A, self.N + 1)
        x[-1] = self.A
        x.flags.writeable = False
        return x


def _cell_differences(lo, hi, lo_c, hi_c):
    """``F(b) - F(a)`` per cell from lower and upper tail tables.

    ``lo`` holds ``F`` and ``hi`` holds ``1 - F`` (or the partial-moment
    analogues) at the cell edges.  Differences are taken from whichever tail
    is smaller at the left edge so that far-tail cells keep relative accuracy.
    """
    use_lower = lo[:, :-1] <= hi[:, :-1]
    return np.where(use_lower, lo_c, hi_c)


def _mass_and_moment(model, regime, t, z):
    """Cell probability and first moment of ``x = z * Lambda`` over ``t`` edges."""
    cdf, sf, pm, pms = model.lr_tables(regime, t)
    P = _cell_differences(cdf, sf, np.diff(cdf, axis=1), -np.diff(sf, axis=1))
    M = _cell_differences(pm, pms, np.diff(pm, axis=1), -np.diff(pms, axis=1)) * z
    return P, M


def _split_linear(P, M, a, b):
    """Hat-function weights of a cell ``[a, b]`` with mass ``P`` and moment ``M``."""
    left = (b * P - M) / (b - a)
    left = np.clip(left, 0.0, P)
    return left, P - left


def _linear_weights(model, proc, grid, regime, points):
    x = grid.nodes
    z = np.atleast_1d(proc.xi(points))[:, None]
    with np.errstate(divide="ignore"):
        t = x[None, :] / z
    P, M = _mass_and_moment(model, regime, t, z)
    left, right = _split_linear(P, M, x[None, :-1], x[None, 1:])
    W = np.zeros((z.shape[0], x.size))
    W[:, :-1] += left
    W[:, 1:] += right

    c = proc.flat_below
    if c is not None and 0.0 < c < grid.A:
        k = int(np.searchsorted(x, c))  # x[k-1] < c <= x[k]
        a, b = x[k - 1], x[k]
        if b - c > 1e-9 * grid.h and c - a > 1e-9 * grid.h:
            # undo the plain rule on [a, b]
            W[:, k - 1] -= left[:, k - 1]
            W[:, k] -= right[:, k - 1]
            edges = np.array([a, c, b])
            P3, M3 = _mass_and_moment(model, regime, edges[None, :] / z, z)
            # u is flat on [a, c] at u(a); linear from u(c) = u(a) to u(b) on [c, b]
            l2, r2 = _split_linear(P3[:, 1], M3[:, 1], c, b)
            W[:, k - 1] += P3[:, 0] + l2
            W[:, k] += r2
    return W


def _rectangle_weights(model, proc, grid, regime, points):
    x = grid.nodes
    z = np.atleast_1d(proc.xi(points))[:, None]
    t = x[None, :] / z
    cdf = model.lr_cdf(regime, t)
    sf = model.lr_sf(regime, t)
    return _cell_differences(cdf, sf, np.diff(cdf, axis=1), -np.diff(sf, axis=1))


_WEIGHTS = {"linear": _linear_weights, "rectangle": _rectangle_weights}


def kernel_weights(model, procedure, grid, regime, points, quadrature="linear"):
    """Quadrature weights ``w(s)`` with ``(K u)(s) ~ w(s) . u`` for each ``s``."""
    if quadrature not in _WEIGHTS:
        raise ValueError(f"unknown quadrature {quadrature!r}; choose from {QUADRATURES}")
    proc = get_procedure(procedure)
    regime = Regime.coerce(regime)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    rows = max(1, _CHUNK_ELEMENTS // (grid.N + 1))
    fn = _WEIGHTS[quadrature]
    chunks = [fn(model, proc, grid, regime, points[i:i + rows])
              for i in range(0, points.size, rows)]
    return chunks[0] if len(chunks) == 1 else np.vstack(chunks)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Discretized integral operator for one regime.

    ``matrix[m, n]`` weights unknown ``n`` when evaluating at ``nodes[m]``.
    """

    model: ChangeModel
    procedure: Procedure
    grid: Grid
    regime: Regime
    quadrature: str
    nodes: np.ndarray
    matrix: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.nodes.size

    def weights(self, points):
        return kernel_weights(self.model, self.procedure, self.grid, self.regime,
                              points, self.quadrature)

    def row_sums(self):
        return self.matrix.sum(axis=1)

    def expected_row_sums(self):
        """``F_i(A / xi(x_m))``: the exact telescoped row mass."""
        return self.model.lr_cdf(self.regime, self.grid.A / self.procedure.xi(self.nodes))

    def inf_norm(self) -> float:
        return float(self.row_sums().max())

    def log_escape_mass(self) -> float:
        """``log(1 - ||K||_inf)`` from the tail law, ``min_m log P_i(Lambda > A / xi(x_m))``.

        Row sums such as ``Phi(8.2)`` round to 1.0 and deficits such as
        ``Phi(-85)`` underflow, so contractivity is judged from this log
        deficit rather than from ``inf_norm``.  (The rectangle rule drops the
        first cell, which only adds to the deficit.)
        """
        t = self.grid.A / self.procedure.xi(self.nodes)
        return float(np.min(self.model.lr_log_sf(self.regime, t)))

    def escape_mass(self) -> float:
        return math.exp(self.log_escape_mass())

    @functools.cached_property
    def _lu(self):
        system = -self.matrix
        system[np.diag_indices_from(system)] += 1.0
        anorm = float(np.abs(system).sum(axis=1).max())
        lu, piv = lu_factor(system, overwrite_a=True, check_finite=False)
        rcond, info = lapack.dgecon(lu, anorm, norm="I")
        if info != 0 or not np.isfinite(rcond) or rcond < 1e2 * np.finfo(float).eps:
            raise NumericalError(f"I - K is singular or ill-conditioned (rcond={rcond:.3g})")
        return lu, piv, float(rcond)

    @property
    def rcond(self) -> float:
        """Reciprocal infinity-norm condition estimate of ``I - K``."""
        return self._lu[2]

    def solve(self, rhs):
        lu, piv, _ = self._lu
        return lu_solve((lu, piv), rhs, check_finite=False)

    def release(self):
        """Drop the cached factorization."""
        self.__dict__.pop("_lu", None)


def build_kernel_matrix(model, procedure, grid, regime, quadrature="linear") -> KernelMatrix:
    """Assemble the kernel matrix for ``regime`` on ``grid``."""
    if not isinstance(grid, Grid):
        raise TypeError("grid must be a Grid")
    proc = get_procedure(procedure)
    regime = Regime.coerce(regime)
    nodes = grid.nodes if quadrature == "linear" else grid.nodes[1:]
    M = kernel_weights(model, proc, grid, regime, nodes, quadrature)
    if not np.all(np.isfinite(M)):
        raise NumericalError("kernel matrix has non-finite entries")
    worst = float(M.min())
    if worst < -NEGATIVE_ENTRY_TOL:
        raise NumericalError(f"kernel entry {worst:.3g} is negative; CDF is not monotone")
    np.maximum(M, 0.0, out=M)
    M.flags.writeable = False
    return KernelMatrix(model, proc, grid, regime, quadrature, nodes, M)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Node values of a solution together with what its Nystrom extension needs.

    Off the grid, ``u(s) = source(s) + weights(s) . integrand``.  For a
    fixed-point solution the integrand is the node vector itself; for an
    operator image ``K v`` it is ``v`` and the source is zero.
    """

    kernel: KernelMatrix = field(repr=False)
    values: np.ndarray
    integrand: np.ndarray = field(repr=False)
    source: "float | GridFunction" = 1.0
    residual: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.kernel.grid

    @property
    def nodes(self) -> np.ndarray:
        return self.kernel.nodes

    def __call__(self, s):
        return nystrom_eval(self, s)


def _check_spectral(kernel):
    if kernel.regime is Regime.PRE:
        norm, log_escape = kernel.inf_norm(), kernel.log_escape_mass()
        if not (log_escape > -math.inf and norm <= 1.0 + ROW_SUM_SLACK):
            raise SpectralRadiusError(
                f"pre-change kernel has infinity norm {norm:.6g} (log escape mass "
                f"{log_escape:.6g});"
                " the Neumann series for the delay need not converge")


def _solve(kernel, rhs):
    _check_spectral(kernel)
    u = kernel.solve(rhs)
    if not np.all(np.isfinite(u)):
        raise NumericalError("linear solve returned non-finite values")
    r = u - kernel.matrix @ u - rhs
    residual = float(np.abs(r).max() / max(np.abs(u).max(), 1.0))
    if residual > RESIDUAL_TOL:
        raise NumericalError(f"relative residual {residual:.3g} exceeds {RESIDUAL_TOL:g}"
                             f" (rcond={kernel.rcond:.3g})")
    return u, residual


def solve_run_length(kernel: KernelMatrix) -> GridFunction:
    """Node values of ``phi_i(s) = E_i[T_A | S_0 = s]`` from ``(I - K_i) phi = 1``."""
    u, residual = _solve(kernel, np.ones(kernel.size))
    if u.min() < 1.0 - 1e-8:
        raise NumericalError(f"run length {u.min():.6g} < 1 at some node")
    return GridFunction(kernel, u, u, 1.0, residual)


def solve_iadd(kernel_inf: KernelMatrix, delta0: GridFunction) -> GridFunction:
    """Integral average detection delay ``psi = sum_k delta_k``.

    Solves ``(I - K_inf) psi = delta_0`` where ``delta_0 = phi_0`` lives on the
    same nodes.
    """
    if kernel_inf.regime is not Regime.PRE:
        raise ValueError("psi is driven by the pre-change kernel")
    if delta0.grid != kernel_inf.grid or delta0.kernel.quadrature != kernel_inf.quadrature:
        raise ValueError("delta_0 must live on the same grid and quadrature")
    u, residual = _solve(kernel_inf, delta0.values)
    if np.any(u < delta0.values - 1e-8 * np.abs(delta0.values).max()):
        raise NumericalError("psi fell below delta_0 at some node")
    return GridFunction(kernel_inf, u, u, delta0, residual)


def nystrom_eval(solution: GridFunction, s, kernel: KernelMatrix | None = None):
    """Evaluate a discretized solution at arbitrary points of ``[0, A]``."""
    kernel = solution.kernel if kernel is None else kernel
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    A = kernel.grid.A
    if np.any(s_arr < 0.0) or np.any(s_arr > A * (1 + 1e-12)):
        raise ValueError(f"evaluation point outside [0, {A:g}]")
    s_arr = np.minimum(s_arr, A)
    src = solution.source
    base = nystrom_eval(src, s_arr) if isinstance(src, GridFunction) else float(src)
    out = base + kernel.weights(s_arr) @ solution.integrand
    return out if np.ndim(s) else float(out[0])


def apply_operator(kernel: KernelMatrix, values: GridFunction, power: int = 1) -> GridFunction:
    """``K^power`` applied to a grid function; power 0 returns the input."""
    if power < 0:
        raise ValueError("power must be nonnegative")
    if kernel.grid != values.grid:
        raise ValueError("grid mismatch")
    out = values
    for _ in range(power):
        out = GridFunction(kernel, kernel.matrix @ out.values, out.values, 0.0)
    return out


@dataclass(frozen=True)
class SpectralBound:
    row_sum: float
    power_estimate: float
    iterations: int
    converged: bool
    log_escape: float = -math.inf

    @property
    def ok(self) -> bool:
        return (self.log_escape > -math.inf and self.row_sum <= 1.0 + ROW_SUM_SLACK
                and self.power_estimate < 1.0)


def spectral_radius_bound(kernel: KernelMatrix, tol=1e-12, max_iter=20_000) -> SpectralBound:
    """Infinity-norm bound and a power-iteration estimate of the dominant eigenvalue.

    For the pre-change kernel both must lie in ``(0, 1)``; a value at or above
    one raises :class:`SpectralRadiusError`.
    """
    M = kernel.matrix
    row_sum = kernel.inf_norm()
    v = np.ones(kernel.size)
    est = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = M @ v
        nrm = float(np.abs(w).max())
        if nrm == 0.0:
            est, converged = 0.0, True
            break
        w /= nrm
        if abs(nrm - est) <= tol * max(nrm, 1e-300):
            est, converged = nrm, True
            v = w
            break
        est, v = nrm, w
    bound = SpectralBound(row_sum, est, it, converged, kernel.log_escape_mass())
    if kernel.regime is Regime.PRE and not bound.ok:
        raise SpectralRadiusError(f"pre-change kernel spectral bound {row_sum:.6g} >= 1")
    return bound


def dump_matrix_csv(kernel: KernelMatrix, path):
    """Write a kernel matrix as CSV for debugging.

    The first line is ``#`` metadata; the header row is ``s`` followed by the
    unknown nodes; each further row is an evaluation node then its weights.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# procedure={kernel.procedure.name} regime={kernel.regime.value} "
                 f"A={kernel.grid.A!r} N={kernel.grid.N} quadrature={kernel.quadrature}\n")
        fh.write("s," + ",".join(f"{x:.17g}" for x in kernel.nodes) + "\n")
        for xm, row in zip(kernel.nodes, kernel.matrix):
            fh.write(f"{xm:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
