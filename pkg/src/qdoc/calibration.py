"""Threshold calibration to a target ARL to false alarm.

``A`` is found by bracketing the monotone map ``A -> ARL(A)`` around a
renewal-theoretic first guess and then running Brent's method on
``log ARL(A) - log gamma`` in ``log A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, NumericalError
from .metrics import DEFAULT_GRID_N, arl_to_false_alarm
from .model import normal_cdf
from .procedure import get_procedure

__all__ = ["renewal_constant_v", "initial_threshold", "calibrate", "CalibrationResult"]

_V_TOL = 1e-10
_V_MAX_TERMS = 10**9
_V_BLOCK = 1 << 20


def _v_tail_bound(c, K):
    # sum_{k>K} Phi(-c sqrt k)/k <= e^{-c^2 (K+1)/2} / (2 (K+1) (1 - e^{-c^2/2}))
    return math.exp(-c * c * (K + 1) / 2.0) / (2.0 * (K + 1) * -math.expm1(-c * c / 2.0))


def renewal_constant_v(theta: float, tol: float = _V_TOL) -> float:
    """Overshoot constant ``v`` for the Gaussian mean-shift model.

    ``v = (2 / theta^2) exp(-2 sum_{k>=1} Phi(-|theta| sqrt(k) / 2) / k)``.
    The series is truncated where an explicit Chernoff-type tail bound drops
    below ``tol``.
    """
    theta = abs(float(theta))
    if theta == 0.0 or not math.isfinite(theta):
        raise ValueError("theta must be finite and nonzero")
    c = theta / 2.0
    K = _terms_needed(c, tol)
    total = 0.0
    for start in range(1, K + 1, _V_BLOCK):
        k = np.arange(start, min(start + _V_BLOCK, K + 1), dtype=float)
        total += math.fsum(normal_cdf(-c * np.sqrt(k)) / k)
    return 2.0 / theta**2 * math.exp(-2.0 * total)


def _terms_needed(c, tol):
    hi = 1
    while _v_tail_bound(c, hi) > tol:
        hi *= 2
        if hi > _V_MAX_TERMS:
            raise NumericalError("renewal series tail did not reach tolerance")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _v_tail_bound(c, mid) > tol:
            lo = mid
        else:
            hi = mid
    return hi


def initial_threshold(procedure, gamma: float, theta: float, v: float | None = None) -> float:
    """First-order threshold guess.

    SR: ``ARL ~ A / v`` so ``A ~ gamma v``.  CUSUM: ``ARL ~ 2 A / (theta^2 v^2)``
    so ``A ~ gamma theta^2 v^2 / 2``.
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    proc = get_procedure(procedure)
    v = renewal_constant_v(theta) if v is None else v
    if proc.name == "SR":
        return gamma * v
    return gamma * theta * theta * v * v / 2.0


@dataclass
class CalibrationResult:
    procedure: str
    gamma: float
    A: float
    arl: float
    iterations: int
    initial_guess: float
    history: list = field(default_factory=list)
    grid_n: int = DEFAULT_GRID_N
    refined_arl: float | None = None
    note: str = ""

    @property
    def rel_error(self) -> float:
        return abs(self.arl - self.gamma) / self.gamma


_LOG_MAX_STEP = math.log(16.0)
_CAP = 50.0  # stands in for log(ARL / gamma) where the solver overflows
_MIN_MULTILEVEL_N = 1600


def calibrate(model, procedure, gamma, grid_n=DEFAULT_GRID_N, rel_tol=1e-4, *,
              initial_guess=None, extrapolate=True, quadrature="linear", validate=False,
              multilevel=True, max_evals=60) -> CalibrationResult:
    """Solve ``ARL(A) = gamma`` for the threshold.

    The search runs on ``log A`` against ``log(ARL / gamma)``: a safeguarded
    secant from the first guess, then geometric bracket expansion and Brent's
    method if the secant has not converged.  With ``multilevel`` (and no
    explicit ``initial_guess``) the guess comes from a calibration on
    ``grid_n // 4`` cells.  Thresholds where the pre-change kernel is no
    longer numerically contractive count as "ARL above gamma".

    ``history`` lists every ``(A, ARL)`` evaluated on ``grid_n`` in order.
    ``validate=True`` re-evaluates the answer on ``2 * grid_n`` cells.
    """
    proc = get_procedure(procedure)
    gamma = float(gamma)
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must be in (0, 1)")
    grid_n = int(grid_n)
    slope = None
    if initial_guess is None:
        theta = getattr(model, "theta", None)
        if theta is None:
            raise ValueError("initial_guess required for models without theta")
        initial_guess = initial_threshold(proc, gamma, theta)
        if multilevel and grid_n >= _MIN_MULTILEVEL_N:
            pre = calibrate(model, proc, gamma, grid_n // 4, rel_tol, extrapolate=extrapolate,
                            quadrature=quadrature, multilevel=True, max_evals=max_evals)
            slope = _local_slope(pre.history, pre.A)
            start = pre.A
        else:
            start = initial_guess
    else:
        start = float(initial_guess)
    if not start > 0:
        raise ValueError("initial guess must be positive")

    history = []
    cache = {}

    def arl(A):
        if A not in cache:
            try:
                val = arl_to_false_alarm(model, proc, A, grid_n, extrapolate=extrapolate,
                                         quadrature=quadrature)
            except NumericalError:
                val = math.inf
            cache[A] = val
            history.append((A, val))
            _assert_increasing(cache)
        return cache[A]

    def g(logA):
        val = arl(math.exp(logA))
        return min(math.log(val / gamma), _CAP) if math.isfinite(val) else _CAP

    target = math.log1p(rel_tol)
    x, fx = math.log(start), g(math.log(start))
    lo = hi = None
    slope = slope if slope and slope > 0 else 1.0
    for _ in range(max(0, min(8, max_evals - 1))):
        if abs(fx) <= target:
            return _result(proc, gamma, math.exp(x), history, float(initial_guess), grid_n,
                           model, extrapolate, quadrature, validate)
        if fx < 0:
            lo = x if lo is None else max(lo, x)
        else:
            hi = x if hi is None else min(hi, x)
        step = -fx / slope if fx < _CAP else -math.log(4.0)
        step = max(-_LOG_MAX_STEP, min(_LOG_MAX_STEP, step))
        xn = x + step
        if lo is not None and hi is not None and not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        fn = g(xn)
        if fn < _CAP and fx < _CAP and xn != x:
            s_new = (fn - fx) / (xn - x)
            if s_new > 1e-3:
                slope = s_new
        x, fx = xn, fn
    if abs(fx) <= target:
        return _result(proc, gamma, math.exp(x), history, float(initial_guess), grid_n,
                       model, extrapolate, quadrature, validate)
    if fx < 0:
        lo = x if lo is None else max(lo, x)
    else:
        hi = x if hi is None else min(hi, x)

    # geometric expansion until the target is straddled
    while lo is None or hi is None:
        if len(history) >= max_evals:
            finite = [v for _, v in history if math.isfinite(v)]
            raise BracketError(
                f"could not bracket gamma={gamma:g}; ARL range reached "
                f"[{min(finite, default=math.nan):.6g}, {max(finite, default=math.nan):.6g}]",
                history)
        x = lo + _LOG_MAX_STEP if hi is None else hi - _LOG_MAX_STEP
        if g(x) < 0:
            lo = x
        else:
            hi = x

    xtol = 0.25 * rel_tol
    for _ in range(6):
        x = brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
        if abs(g(x)) <= target:
            break
        xtol *= 0.1
    else:
        raise NumericalError(f"calibration did not reach rel_tol={rel_tol:g}")
    return _result(proc, gamma, math.exp(x), history, float(initial_guess), grid_n, model,
                   extrapolate, quadrature, validate)


def _local_slope(history, A):
    """d log ARL / d log A from the two evaluations nearest ``A``."""
    pts = sorted((abs(math.log(a / A)), a, v) for a, v in history
                 if math.isfinite(v) and a > 0)
    if len(pts) < 2:
        return None
    (_, a1, v1), (_, a2, v2) = pts[:2]
    if a1 == a2:
        return None
    s = math.log(v2 / v1) / math.log(a2 / a1)
    return s if s > 0 else None


def _assert_increasing(cache):
    arls = [v for _, v in sorted(cache.items())]
    if any(b < a for a, b in zip(arls, arls[1:])):
        # ARL(A) is increasing; a decrease means the grid cannot resolve A
        raise NumericalError("ARL is not increasing in A; discretization too coarse")


def _result(proc, gamma, A, history, guess, grid_n, model, extrapolate, quadrature,
            validate):
    val = dict(history)[A]
    res = CalibrationResult(proc.name, gamma, A, val, len(history), float(guess),
                            list(history), int(grid_n))
    if A < 4 * np.finfo(float).eps ** 0.5:
        res.note = "threshold is near zero; ARL is dominated by one-step stopping"
    if validate:
        res.refined_arl = arl_to_false_alarm(model, proc, A, 2 * int(grid_n),
                                             extrapolate=extrapolate, quadrature=quadrature)
    return res
