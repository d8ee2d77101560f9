"""Operating characteristics from the solved integral equations.

* ARL to false alarm ``E_inf[T] = phi_inf(0)``
* SADD ``= E_0[T] = phi_0(0)`` (the supremum is attained at ``nu = 0`` for
  CUSUM and SR)
* STADD ``= psi(0) / phi_inf(0)`` with ``psi = sum_k delta_k``

By default each quantity is computed on grids of ``N // 2`` and ``N`` cells
and Richardson-extrapolated using the nominal order of the cell rule.  Pass
``extrapolate=False`` for single-grid values.

The conditional delay ``E_nu[T - nu | T > nu]`` for ``0 < nu < inf`` is not
available from the equations (they give ``E_nu[(T - nu)^+]`` only); use
:mod:`qdoc.montecarlo` for it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fredholm import (
    QUADRATURE_ORDER,
    Grid,
    build_kernel_matrix,
    nystrom_eval,
    solve_iadd,
    solve_run_length,
    spectral_radius_bound,
)
from .model import ChangeModel, Regime
from .procedure import get_procedure

__all__ = [
    "DEFAULT_GRID_N",
    "OperatingCharacteristics",
    "DelayProfile",
    "operating_characteristics",
    "arl_to_false_alarm",
    "sadd",
    "stadd",
    "delay_profile",
]

DEFAULT_GRID_N = 4000


@dataclass
class OperatingCharacteristics:
    """ARL, SADD and STADD of one procedure at one threshold (all in steps)."""

    procedure: str
    theta: float | None
    A: float
    arl: float
    sadd: float
    stadd: float
    grid_n: int
    gamma: float | None = None
    profile: np.ndarray | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def riadd(self) -> float:
        return self.stadd

    @property
    def residual(self) -> float:
        return self.diagnostics.get("residual", math.nan)

    @property
    def spectral_bound(self) -> float:
        return self.diagnostics.get("spectral_bound", math.nan)

    def as_dict(self):
        d = asdict(self)
        d["profile"] = None if self.profile is None else self.profile.tolist()
        return d


@dataclass
class _Level:
    N: int
    arl: float = math.nan
    sadd: float = math.nan
    psi0: float = math.nan
    residual: float = 0.0
    spectral_bound: float = math.nan
    log_escape_mass: float = math.nan


def _theta_of(model):
    return getattr(model, "theta", None)


def _check(A, grid_n, quadrature, extrapolate=False):
    if not (A > 0 and math.isfinite(A)):
        raise ValueError("threshold A must be positive and finite")
    if quadrature not in QUADRATURE_ORDER:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    least = 4 if extrapolate else 2
    if int(grid_n) != grid_n or grid_n < least:
        raise ValueError(f"grid_n must be an integer >= {least}")


def _solve_level(model, proc, A, N, quadrature, want):
    """Solve the equations needed for ``want`` (subset of arl/sadd/stadd) on one grid."""
    grid = Grid(A, N)
    s0 = proc.initial_state
    lvl = _Level(N)
    need_inf = bool(want & {"arl", "stadd"})
    need_0 = bool(want & {"sadd", "stadd"})
    k_inf = phi_inf = None
    if need_inf:
        k_inf = build_kernel_matrix(model, proc, grid, Regime.PRE, quadrature)
        # 1 - deficit equals the row-sum norm without its summation rounding
        lvl.log_escape_mass = k_inf.log_escape_mass()
        lvl.spectral_bound = -math.expm1(lvl.log_escape_mass)
        phi_inf = solve_run_length(k_inf)
        lvl.arl = nystrom_eval(phi_inf, s0)
        lvl.residual = max(lvl.residual, phi_inf.residual)
    if need_0:
        k_0 = build_kernel_matrix(model, proc, grid, Regime.POST, quadrature)
        phi_0 = solve_run_length(k_0)
        lvl.sadd = nystrom_eval(phi_0, s0)
        lvl.residual = max(lvl.residual, phi_0.residual)
        if "stadd" in want:
            psi = solve_iadd(k_inf, phi_0)
            lvl.psi0 = nystrom_eval(psi, s0)
            lvl.residual = max(lvl.residual, psi.residual)
        k_0.release()
    if k_inf is not None:
        k_inf.release()
    return lvl


def _richardson(fine, coarse, ratio, order):
    return fine + (fine - coarse) / (ratio**order - 1.0)


def _evaluate(model, procedure, A, grid_n, quadrature, extrapolate, want):
    proc = get_procedure(procedure)
    _check(A, grid_n, quadrature, extrapolate)
    fine = _solve_level(model, proc, A, int(grid_n), quadrature, want)
    diag = {"residual": fine.residual, "spectral_bound": fine.spectral_bound,
            "log_escape_mass": fine.log_escape_mass,
            "quadrature": quadrature, "extrapolated": bool(extrapolate)}
    out = {"arl": fine.arl, "sadd": fine.sadd, "psi0": fine.psi0}
    if extrapolate:
        coarse = _solve_level(model, proc, A, int(grid_n) // 2, quadrature, want)
        ratio = int(grid_n) / (int(grid_n) // 2)
        order = QUADRATURE_ORDER[quadrature]
        for key in out:
            out[key] = _richardson(getattr(fine, key), getattr(coarse, key), ratio, order)
        diag["residual"] = max(fine.residual, coarse.residual)
        diag["coarse"] = {"N": coarse.N, "arl": coarse.arl, "sadd": coarse.sadd,
                          "psi0": coarse.psi0}
    diag["fine"] = {"N": fine.N, "arl": fine.arl, "sadd": fine.sadd, "psi0": fine.psi0}
    return proc, out, diag


def operating_characteristics(model: ChangeModel, procedure, A, grid_n=DEFAULT_GRID_N, *,
                              extrapolate=True, quadrature="linear", gamma=None,
                              profile=False, spectral=False) -> OperatingCharacteristics:
    """All three measures for one ``(procedure, A)`` sharing factorizations.

    ``profile=True`` attaches the delay profile ``delta_k(0)`` computed on the
    fine grid.  ``spectral=True`` adds a power-iteration estimate of the
    dominant eigenvalue of the pre-change kernel to the diagnostics.
    """
    proc, v, diag = _evaluate(model, procedure, A, grid_n, quadrature, extrapolate,
                              {"arl", "sadd", "stadd"})
    oc = OperatingCharacteristics(
        procedure=proc.name, theta=_theta_of(model), A=float(A), arl=v["arl"],
        sadd=v["sadd"], stadd=v["psi0"] / v["arl"], grid_n=int(grid_n), gamma=gamma,
        diagnostics=diag)
    if profile or spectral:
        grid = Grid(A, int(grid_n))
        k_inf = build_kernel_matrix(model, proc, grid, Regime.PRE, quadrature)
        if spectral:
            diag["power_estimate"] = spectral_radius_bound(k_inf).power_estimate
        if profile:
            prof = delay_profile(model, proc, A, grid_n, quadrature=quadrature,
                                 _kernel_inf=k_inf)
            oc.profile = prof.values
            diag["profile_tail_bound"] = prof.tail_bound
    return oc


def arl_to_false_alarm(model, procedure, A, grid_n=DEFAULT_GRID_N, *, extrapolate=True,
                       quadrature="linear") -> float:
    """``E_inf[T_A]`` from the pre-change run-length equation."""
    return _evaluate(model, procedure, A, grid_n, quadrature, extrapolate, {"arl"})[1]["arl"]


def sadd(model, procedure, A, grid_n=DEFAULT_GRID_N, *, extrapolate=True,
         quadrature="linear") -> float:
    """``SADD = E_0[T_A]`` from the post-change run-length equation."""
    return _evaluate(model, procedure, A, grid_n, quadrature, extrapolate, {"sadd"})[1]["sadd"]


def stadd(model, procedure, A, grid_n=DEFAULT_GRID_N, *, extrapolate=True,
          quadrature="linear") -> float:
    """``STADD = psi(0) / phi_inf(0)``; identical to RIADD."""
    v = _evaluate(model, procedure, A, grid_n, quadrature, extrapolate,
                  {"arl", "sadd", "stadd"})[1]
    return v["psi0"] / v["arl"]


@dataclass
class DelayProfile:
    """``delta_k(0) = E_k[(T_A - k)^+]`` for ``k = 0..K``.

    ``tail_bound`` estimates the omitted sum ``sum_{k>K} delta_k(0)`` from the
    last observed decay ratio (geometric tail).
    """

    values: np.ndarray
    arl: float
    tail_bound: float
    ratio: float

    def stadd(self) -> float:
        return (float(math.fsum(self.values)) + self.tail_bound) / self.arl


def delay_profile(model, procedure, A, grid_n=DEFAULT_GRID_N, K=None, *, rel_floor=1e-9,
                  quadrature="linear", _kernel_inf=None) -> DelayProfile:
    """Iterate ``delta_k = K_inf delta_{k-1}`` from ``delta_0 = phi_0``.

    Stops at ``K`` if given, otherwise when ``delta_k(0) < rel_floor * delta_0(0)``
    or after ``10 * ARL`` steps, whichever comes first.  Single grid, no
    extrapolation, so ``values[0]`` equals ``sadd(..., extrapolate=False)``.
    """
    proc = get_procedure(procedure)
    _check(A, grid_n, quadrature)
    grid = Grid(A, int(grid_n))
    s0 = proc.initial_state
    k_inf = _kernel_inf or build_kernel_matrix(model, proc, grid, Regime.PRE, quadrature)
    phi_inf = solve_run_length(k_inf)
    arl = nystrom_eval(phi_inf, s0)
    k_0 = build_kernel_matrix(model, proc, grid, Regime.POST, quadrature)
    phi_0 = solve_run_length(k_0)
    k_0.release()

    if K is None:
        k_max = max(1, int(math.ceil(10 * arl)))
        floor = rel_floor
    else:
        if K < 0:
            raise ValueError("K must be nonnegative")
        k_max, floor = int(K), 0.0
    w0 = k_inf.weights([s0])[0]
    M = k_inf.matrix
    vals = [nystrom_eval(phi_0, s0)]
    v = phi_0.values
    for _ in range(k_max):
        d = float(w0 @ v)
        vals.append(d)
        if d < floor * vals[0]:
            break
        v = M @ v
    vals = np.asarray(vals)
    ratio = float(vals[-1] / vals[-2]) if len(vals) > 1 and vals[-2] > 0 else 0.0
    ratio = min(max(ratio, 0.0), 1.0 - 1e-15)
    tail = float(vals[-1] * ratio / (1.0 - ratio))
    return DelayProfile(vals, arl, tail, ratio)
