"""Monte Carlo oracle for run lengths and detection delays.

Every replication ``i`` owns the random stream
``default_rng(SeedSequence(seed, spawn_key=(i,)))`` and consumes it one
observation per step, so its stopping time does not depend on how
replications are grouped into vectorized blocks or spread over threads.
Replication ``i`` reproduces :func:`qdoc.procedure.run_to_stop` driven by
the same generator exactly.

Change-point convention: with change point ``nu`` the observations
``X_1..X_nu`` are pre-change and ``X_{nu+1}`` is the first post-change draw;
``nu = 0`` is the post-change regime throughout and ``nu = inf`` no change.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CensoredRunError
from .model import ChangeModel, Regime
from .procedure import DEFAULT_STEP_CAP, get_procedure

__all__ = [
    "McEstimate",
    "MIN_REPS",
    "rep_generator",
    "simulate_stopping_times",
    "simulate_detection_delays",
    "mc_expectation",
    "mc_stadd",
    "worker_count",
]

MIN_REPS = 1000
BLOCK_REPS = 2048
_FIRST_CHUNK = 32
_MAX_CHUNK = 1024
_PILOT_KEY = 1 << 32  # spawn-key prefix that keeps pilot streams apart from the main ones


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error ``std / sqrt(reps)``."""

    mean: float
    se: float
    reps: int
    seed: int
    censored: int = 0
    values: np.ndarray | None = field(default=None, repr=False, compare=False)

    def within(self, value, k=3.0, rel=0.0) -> bool:
        """``|mean - value| <= max(k * se, rel * |value|)``."""
        return abs(self.mean - value) <= max(k * self.se, rel * abs(value))

    def z_score(self, value) -> float:
        return (self.mean - value) / self.se if self.se > 0 else math.copysign(math.inf,
                                                                              self.mean - value)

    def as_dict(self):
        return {"mean": self.mean, "se": self.se, "reps": self.reps, "seed": self.seed,
                "censored": self.censored}


def worker_count(threads=None) -> int:
    """Thread count: explicit value, else ``QDOC_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get("QDOC_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


def rep_generator(seed, i, *, pilot=False) -> np.random.Generator:
    key = (_PILOT_KEY, int(i)) if pilot else (int(i),)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def _draw_rows(model, gens, rows, n, L, nu):
    # observations n+1..n+L for each listed replication
    k0 = L if nu == math.inf else int(min(max(nu - n, 0), L))
    x = np.empty((len(rows), L))
    for r, i in enumerate(rows):
        g = gens[i]
        if k0:
            x[r, :k0] = model.sample(Regime.PRE, g, k0)
        if k0 < L:
            x[r, k0:] = model.sample(Regime.POST, g, L - k0)
    return x


def _run_block(model, proc, A, nu, gens, step_cap, renew):
    """Stopping times for one block; NaN marks a censored replication.

    With ``renew`` an alarm at or before ``nu`` restarts the statistic (a
    new cycle of the repeated procedure) and only the first alarm after
    ``nu`` counts.
    """
    m = len(gens)
    s0 = proc.initial_state
    cusum = proc.name == "CUSUM"
    s = np.full(m, s0)
    out = np.full(m, np.nan)
    active = np.arange(m)
    n, chunk = 0, _FIRST_CHUNK
    while active.size and n < step_cap:
        L = min(chunk, step_cap - n)
        lr = model.lr_of_observation(_draw_rows(model, gens, active, n, L, nu))
        cur = s[active]
        stopped = np.zeros(active.size, dtype=bool)
        tstop = np.zeros(active.size)
        for j in range(L):
            t = n + j + 1
            if cusum:
                np.maximum(cur, 1.0, out=cur)
            else:
                cur += 1.0
            cur *= lr[:, j]
            hit = cur >= A
            if renew and t <= nu:
                cur[hit] = s0
                continue
            new = hit & ~stopped
            if new.any():
                tstop[new] = t
                stopped |= new
                if stopped.all():
                    break
        if not np.all(np.isfinite(cur[~stopped])):
            raise FloatingPointError("detection statistic became non-finite")
        out[active[stopped]] = tstop[stopped]
        s[active] = cur
        active = active[~stopped]
        n += L
        chunk = min(2 * chunk, _MAX_CHUNK)
    return out


def _simulate(model, procedure, A, nu, reps, seed, step_cap, threads, renew, pilot=False):
    proc = get_procedure(procedure)
    if not (A > 0 and math.isfinite(A)):
        raise ValueError("threshold A must be positive and finite")
    if not nu >= 0:
        raise ValueError("change point nu must be >= 0")
    if nu != math.inf and nu != int(nu):
        raise ValueError("change point nu must be an integer or inf")
    reps = int(reps)
    if reps < 1:
        raise ValueError("reps must be >= 1")
    step_cap = DEFAULT_STEP_CAP if step_cap is None else int(step_cap)

    def block(lo):
        hi = min(lo + BLOCK_REPS, reps)
        gens = [rep_generator(seed, i, pilot=pilot) for i in range(lo, hi)]
        return _run_block(model, proc, float(A), nu, gens, step_cap, renew)

    starts = range(0, reps, BLOCK_REPS)
    workers = min(worker_count(threads), len(starts))
    if workers == 1:
        parts = [block(lo) for lo in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, starts))
    return np.concatenate(parts)


def simulate_stopping_times(model: ChangeModel, procedure, A, nu, reps, seed, *,
                            step_cap=None, threads=None) -> np.ndarray:
    """Alarm times of ``reps`` independent runs (NaN if censored at ``step_cap``)."""
    return _simulate(model, procedure, A, nu, reps, seed, step_cap, threads, renew=False)


def simulate_detection_delays(model: ChangeModel, procedure, A, nu, reps, seed, *,
                              step_cap=None, threads=None) -> np.ndarray:
    """``T - nu`` for the repeated procedure restarted after every false alarm.

    The change occurs at absolute time ``nu`` in whichever cycle is running
    then; the first alarm after ``nu`` is the detection.
    """
    if nu == math.inf:
        raise ValueError("detection delay needs a finite change point")
    t = _simulate(model, procedure, A, nu, reps, seed, step_cap, threads, renew=True)
    return t - nu


def _estimate(values, seed):
    reps = values.size
    bad = int(np.count_nonzero(np.isnan(values)))
    if bad:
        ok = values[~np.isnan(values)]
        partial = McEstimate(float(ok.mean()) if ok.size else math.nan, math.nan, reps,
                             int(seed), bad)
        raise CensoredRunError(f"{bad} of {reps} run(s) hit the step cap", censored=bad,
                               estimate=partial)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan
    return McEstimate(mean, se, reps, int(seed), 0, values)


def _check_reps(reps):
    if int(reps) < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS} for a usable standard error")


def mc_expectation(model: ChangeModel, procedure, A, nu, reps, seed, *, step_cap=None,
                   threads=None) -> McEstimate:
    """``E_inf[T]`` for ``nu = inf``, otherwise ``E_nu[(T - nu)^+]``.

    Runs that alarm at or before ``nu`` contribute zero.  Censored runs raise
    :class:`~qdoc.errors.CensoredRunError` carrying the partial estimate.
    """
    _check_reps(reps)
    nu = math.inf if nu is None else nu
    t = simulate_stopping_times(model, procedure, A, nu, reps, seed, step_cap=step_cap,
                                threads=threads)
    if nu != math.inf:
        t = np.where(np.isnan(t), t, np.maximum(t - nu, 0.0))
    return _estimate(t, seed)


def mc_stadd(model: ChangeModel, procedure, A, nu_large, reps, seed, *, arl=None,
             step_cap=None, threads=None) -> McEstimate:
    """Stationary delay of the repeated procedure at a distant change point.

    ``nu_large`` must be at least ``20 * ARL`` so the renewal process of
    false alarms is close to stationary.  ``arl`` may be supplied; otherwise
    a 1000-run pilot estimate (on streams disjoint from the main ones) is used.
    """
    _check_reps(reps)
    if arl is None:
        pilot = _simulate(model, procedure, A, math.inf, MIN_REPS, seed, step_cap, threads,
                          renew=False, pilot=True)
        arl = _estimate(pilot, seed).mean
    if nu_large < 20 * arl:
        raise ValueError(f"nu_large={nu_large} is below 20 * ARL = {20 * arl:.6g}")
    d = simulate_detection_delays(model, procedure, A, int(nu_large), reps, seed,
                                  step_cap=step_cap, threads=threads)
    return _estimate(d, seed)
