"""Observation models and the distribution of the one-step likelihood ratio.

Every numerical routine in the package sees a model only through the
likelihood ratio ``Lambda = g(X) / f(X)``: its CDF under the pre-change law
(regime ``PRE``, change point at infinity) and under the post-change law
(regime ``POST``, change point at zero), plus truncated first moments used by
the product-integration kernel.
"""

from __future__ import annotations

import abc
import enum
import math

import numpy as np
from scipy.special import log_ndtr, ndtr

__all__ = [
    "Regime",
    "ChangeModel",
    "GaussianShiftModel",
    "normal_cdf",
    "lr_cdf",
    "lr_of_observation",
    "sample",
]


class Regime(str, enum.Enum):
    """Which law generates the observations.

    ``PRE`` is the no-change measure (change point at infinity) and ``POST``
    the measure with the change in effect from the first observation.
    """

    PRE = "inf"
    POST = "0"

    @classmethod
    def coerce(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "inf": cls.PRE, "infinity": cls.PRE, "pre": cls.PRE, "∞": cls.PRE,
            "0": cls.POST, "post": cls.POST, "zero": cls.POST,
        }
        if key not in aliases:
            raise ValueError(f"unknown regime {value!r}; expected 'inf' or '0'")
        return aliases[key]


def normal_cdf(x):
    """Standard normal distribution function.

    Backed by ``scipy.special.ndtr``, which is erfc-based and accurate to a
    few ulp over the whole real line, so symmetric differences of nearby
    values keep their absolute accuracy.
    """
    return ndtr(x)


def _two_tails(u):
    # (Phi(u), Phi(-u)) with full relative accuracy in whichever tail is small
    q = ndtr(-np.abs(u))
    neg = u < 0
    return np.where(neg, q, 1.0 - q), np.where(neg, 1.0 - q, q)


def _as_positive_array(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("likelihood-ratio argument must be nonnegative")
    return arr


class ChangeModel(abc.ABC):
    """Pre/post-change observation model seen through its likelihood ratio.

    Subclasses supply the CDF ``F_i(t) = P_i(Lambda <= t)`` and its
    complement for both regimes, the post-change truncated mean
    ``E_0[Lambda; Lambda <= t]``, the likelihood ratio of an observation and
    a sampler.  The pre-change truncated mean is model independent because
    ``t dF_inf(t) = dF_0(t)``.
    """

    @abc.abstractmethod
    def lr_cdf(self, regime, t):
        ...

    def lr_sf(self, regime, t):
        """``P_i(Lambda > t)``; override when a cancellation-free form exists."""
        return 1.0 - self.lr_cdf(regime, t)

    def lr_log_sf(self, regime, t):
        """``log P_i(Lambda > t)``, finite far into the upper tail when possible."""
        with np.errstate(divide="ignore"):
            return np.log(self.lr_sf(regime, t))

    def lr_partial_mean(self, regime, t):
        """``E_i[Lambda; Lambda <= t]``."""
        if Regime.coerce(regime) is Regime.PRE:
            return self.lr_cdf(Regime.POST, t)
        return self._post_partial_mean(t)

    def lr_partial_mean_sf(self, regime, t):
        """``E_i[Lambda; Lambda > t]``."""
        if Regime.coerce(regime) is Regime.PRE:
            return self.lr_sf(Regime.POST, t)
        return self._post_partial_mean_sf(t)

    def lr_tables(self, regime, t):
        """``(cdf, sf, partial_mean, partial_mean_sf)`` at ``t`` in one call."""
        return (self.lr_cdf(regime, t), self.lr_sf(regime, t),
                self.lr_partial_mean(regime, t), self.lr_partial_mean_sf(regime, t))

    @abc.abstractmethod
    def _post_partial_mean(self, t):
        ...

    @abc.abstractmethod
    def _post_partial_mean_sf(self, t):
        ...

    @abc.abstractmethod
    def lr_of_observation(self, x):
        ...

    @abc.abstractmethod
    def sample(self, regime, rng, size=None):
        ...


class GaussianShiftModel(ChangeModel):
    """N(0, 1) before the change, N(theta, 1) after it.

    ``Lambda(x) = exp(theta * x - theta**2 / 2)``.  For ``theta > 0`` the event
    ``{Lambda <= t}`` is ``{X <= log(t) / theta + theta / 2}``; for negative
    ``theta`` the inequality flips.
    """

    def __init__(self, theta: float):
        theta = float(theta)
        if theta == 0.0 or not math.isfinite(theta):
            raise ValueError("theta must be a finite nonzero number")
        self._theta = theta

    @property
    def theta(self) -> float:
        return self._theta

    def __repr__(self):
        return f"GaussianShiftModel(theta={self._theta!r})"

    def __eq__(self, other):
        return isinstance(other, GaussianShiftModel) and other._theta == self._theta

    def __hash__(self):
        return hash(("gaussian", self._theta))

    def _quantile_arg(self, regime, t, shift=0.0):
        # standardized observation level matching Lambda = t; shift moves the
        # mean of the reference normal (used for tilted moments)
        th = self._theta
        mean = 0.0 if Regime.coerce(regime) is Regime.PRE else th
        with np.errstate(divide="ignore"):
            level = np.log(_as_positive_array(t)) / th + th / 2.0
        return level - mean - shift

    def _lower(self, u):
        # P(Lambda <= t) expressed through a standard-normal argument u
        return ndtr(u) if self._theta > 0 else ndtr(-u)

    def _upper(self, u):
        return ndtr(-u) if self._theta > 0 else ndtr(u)

    def lr_cdf(self, regime, t):
        return self._lower(self._quantile_arg(regime, t))

    def lr_sf(self, regime, t):
        return self._upper(self._quantile_arg(regime, t))

    def lr_log_sf(self, regime, t):
        u = self._quantile_arg(regime, t)
        return log_ndtr(-u) if self._theta > 0 else log_ndtr(u)

    # E_0[Lambda; A] = exp(theta^2) * P(Y in A) with Y ~ N(2 theta, 1)
    def _post_partial_mean(self, t):
        th = self._theta
        return math.exp(th * th) * self._lower(self._quantile_arg(Regime.POST, t, shift=th))

    def _post_partial_mean_sf(self, t):
        th = self._theta
        return math.exp(th * th) * self._upper(self._quantile_arg(Regime.POST, t, shift=th))

    def lr_tables(self, regime, t):
        th = self._theta
        post = Regime.coerce(regime) is Regime.POST
        u = self._quantile_arg(regime, t)
        if th < 0:
            u = -u
        cdf, sf = _two_tails(u)
        # tilted law: mean shifted by theta relative to the post-change law
        # (pre-change tilt is the post-change law itself)
        shift = abs(th)
        scale = math.exp(th * th) if post else 1.0
        pm, pms = _two_tails(u - shift)
        return cdf, sf, scale * pm, scale * pms

    def lr_of_observation(self, x):
        th = self._theta
        return np.exp(th * np.asarray(x, dtype=float) - th * th / 2.0)

    def log_lr_of_observation(self, x):
        th = self._theta
        return th * np.asarray(x, dtype=float) - th * th / 2.0

    def sample(self, regime, rng, size=None):
        mean = 0.0 if Regime.coerce(regime) is Regime.PRE else self._theta
        return rng.standard_normal(size) + mean


def lr_cdf(model: ChangeModel, regime, t):
    """``P_regime(Lambda_1 <= t)`` for ``t >= 0``; zero at ``t = 0``."""
    return model.lr_cdf(Regime.coerce(regime), t)


def lr_of_observation(model: ChangeModel, x):
    return model.lr_of_observation(x)


def sample(model: ChangeModel, regime, rng, size=None):
    """Draw observations from the pre- or post-change law using ``rng``."""
    return model.sample(Regime.coerce(regime), rng, size)
