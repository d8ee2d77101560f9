"""Detection statistics of the form ``S_n = xi(S_{n-1}) * Lambda_n``.

CUSUM uses ``xi(s) = max(1, s)`` (multiplicative form, ``V_0 = 1`` realized
as ``s_0 = 0``) and Shiryaev-Roberts uses ``xi(s) = 1 + s`` with ``R_0 = 0``.
Both stop at the first ``n >= 1`` with ``S_n >= A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CensoredRunError
from .model import ChangeModel, Regime

__all__ = [
    "Procedure",
    "CUSUM",
    "SR",
    "get_procedure",
    "StoppingRecord",
    "xi",
    "update_statistic",
    "page_update",
    "sr_direct",
    "cusum_direct",
    "run_to_stop",
    "DEFAULT_STEP_CAP",
]

DEFAULT_STEP_CAP = 10**8


@dataclass(frozen=True)
class Procedure:
    """A Markov detection procedure on ``[0, A]``.

    ``flat_below`` is the largest ``c`` with ``xi`` constant on ``[0, c]``;
    any function solving the run-length equations is then constant there
    too, which the kernel builder uses to keep the CUSUM kink at ``s = 1``
    out of the interpolation error.
    """

    name: str
    initial_state: float = 0.0
    flat_below: float | None = None

    def xi(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < 0):
            raise ValueError("xi is defined for s >= 0 only")
        if self.name == "CUSUM":
            out = np.maximum(1.0, s_arr)
        elif self.name == "SR":
            out = 1.0 + s_arr
        else:
            raise ValueError(f"unknown procedure {self.name!r}")
        return out if out.ndim else float(out)

    def __str__(self):
        return self.name


CUSUM = Procedure("CUSUM", initial_state=0.0, flat_below=1.0)
SR = Procedure("SR", initial_state=0.0)

_BY_NAME = {"cusum": CUSUM, "cs": CUSUM, "sr": SR, "shiryaev-roberts": SR}


def get_procedure(name) -> Procedure:
    if isinstance(name, Procedure):
        return name
    try:
        return _BY_NAME[str(name).strip().lower()]
    except KeyError:
        raise ValueError(f"unknown procedure {name!r}; expected 'cusum' or 'sr'") from None


def xi(procedure, s):
    return get_procedure(procedure).xi(s)


def update_statistic(procedure, s, lr):
    """One step of ``S_n = xi(S_{n-1}) * Lambda_n``."""
    if np.any(np.asarray(lr) <= 0):
        raise ValueError("likelihood ratio must be positive")
    return get_procedure(procedure).xi(s) * lr


def page_update(w, log_lr):
    """Page's reflected random walk ``W_n = max(0, W_{n-1} + log Lambda_n)``."""
    if np.any(np.asarray(w) < 0):
        raise ValueError("Page statistic must be nonnegative")
    return np.maximum(0.0, w + log_lr)


def sr_direct(lrs):
    """``R_n = sum_{k<=n} prod_{j=k..n} Lambda_j`` for every prefix, O(n^2)."""
    lrs = np.asarray(lrs, dtype=float)
    out = np.empty(len(lrs))
    for n in range(len(lrs)):
        out[n] = sum(math.prod(lrs[k:n + 1]) for k in range(n + 1))
    return out


def cusum_direct(lrs):
    """``V_n = max_{k<=n} prod_{j=k..n} Lambda_j`` for every prefix, O(n^2)."""
    lrs = np.asarray(lrs, dtype=float)
    out = np.empty(len(lrs))
    for n in range(len(lrs)):
        out[n] = max(math.prod(lrs[k:n + 1]) for k in range(n + 1))
    return out


@dataclass(frozen=True)
class StoppingRecord:
    """Outcome of one simulated run.

    ``stopping_time`` is ``None`` when the run was censored at the step cap.
    """

    stopping_time: int | None
    statistic: float
    nu: float
    censored: bool = False


def run_to_stop(procedure, model: ChangeModel, A, nu, rng, *, step_cap=DEFAULT_STEP_CAP,
                block=256):
    """Simulate one trajectory until ``S_n >= A``.

    Observations ``X_1..X_nu`` come from the pre-change law and ``X_{nu+1}, ...``
    from the post-change law; ``nu = math.inf`` means no change.  Draws are
    taken from ``rng`` in blocks of ``block``, one observation per step.
    A run that reaches ``step_cap`` returns a censored record.
    """
    proc = get_procedure(procedure)
    if not A > 0:
        raise ValueError("threshold A must be positive")
    if nu < 0:
        raise ValueError("change point must be >= 0")
    s = proc.initial_state
    cusum = proc.name == "CUSUM"
    n = 0
    while n < step_cap:
        m = min(block, step_cap - n)
        idx = np.arange(n + 1, n + m + 1)
        post = idx > nu
        x = np.empty(m)
        n_pre = int(np.count_nonzero(~post))
        # pre-change draws come first within a block because idx is increasing
        if n_pre:
            x[:n_pre] = model.sample(Regime.PRE, rng, n_pre)
        if m - n_pre:
            x[n_pre:] = model.sample(Regime.POST, rng, m - n_pre)
        lrs = model.lr_of_observation(x).tolist()
        for j in range(m):
            s = (s if s > 1.0 else 1.0) * lrs[j] if cusum else (1.0 + s) * lrs[j]
            if s >= A:
                return StoppingRecord(int(idx[j]), float(s), nu)
        n += m
        if not math.isfinite(s):
            raise FloatingPointError("detection statistic became non-finite")
    return StoppingRecord(None, float(s), nu, censored=True)


def require_uncensored(records):
    bad = sum(r.censored for r in records)
    if bad:
        raise CensoredRunError(f"{bad} run(s) hit the step cap", censored=bad)
    return records
