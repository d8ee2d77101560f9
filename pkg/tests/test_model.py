import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from qdoc.model import GaussianShiftModel, Regime, lr_cdf, lr_of_observation, normal_cdf, sample


def mp_phi(x):
    return float(mpmath.ncdf(x))


@pytest.mark.parametrize("x", [-38.0, -8.0, -1.0, 0.0, 0.5, 1.0, 2.5, 8.0])
def test_normal_cdf_matches_high_precision(x):
    ref = mp_phi(x)
    assert normal_cdf(x) == pytest.approx(ref, rel=1e-13, abs=1e-300)


def test_normal_cdf_known_values():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(0.5) == pytest.approx(0.6914624612740131, rel=1e-15)


@given(st.floats(-30, 30))
def test_normal_cdf_symmetry(x):
    assert normal_cdf(x) + normal_cdf(-x) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("theta", [0.01, 0.1, 0.5, 1.0])
def test_lr_median_values(theta):
    m = GaussianShiftModel(theta)
    # Lambda = 1 at x = theta/2
    assert lr_cdf(m, "inf", 1.0) == pytest.approx(mp_phi(theta / 2), rel=1e-14)
    assert lr_cdf(m, "0", 1.0) == pytest.approx(mp_phi(-theta / 2), rel=1e-14)


def test_lr_cdf_theta_one_at_one():
    assert lr_cdf(GaussianShiftModel(1.0), Regime.PRE, 1.0) == pytest.approx(0.691462461274013)


def test_lr_cdf_zero_and_monotone():
    m = GaussianShiftModel(0.5)
    assert lr_cdf(m, "inf", 0.0) == 0.0
    t = np.geomspace(1e-4, 1e4, 200)
    for reg in Regime:
        f = lr_cdf(m, reg, t)
        assert np.all(np.diff(f) >= 0)
        assert np.all((f >= 0) & (f <= 1))


def test_lr_cdf_rejects_negative():
    with pytest.raises(ValueError):
        lr_cdf(GaussianShiftModel(1.0), "inf", -0.1)


@pytest.mark.parametrize("bad", [0.0, math.inf, math.nan])
def test_theta_validation(bad):
    with pytest.raises(ValueError):
        GaussianShiftModel(bad)


def test_regime_aliases():
    assert Regime.coerce("pre") is Regime.PRE
    assert Regime.coerce(0) is Regime.POST
    with pytest.raises(ValueError):
        Regime.coerce("later")


@pytest.mark.parametrize("theta", [0.3, 1.0])
def test_pre_change_mean_of_lr_is_one(theta):
    m = GaussianShiftModel(theta)
    f = lambda x: math.exp(theta * x - theta**2 / 2 - x * x / 2) / math.sqrt(2 * math.pi)
    assert integrate.quad(f, -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-10)
    # the generic identity E_inf[Lambda; Lambda <= t] = F_0(t)
    t = 1.7
    xt = math.log(t) / theta + theta / 2
    direct = integrate.quad(f, -np.inf, xt)[0]
    assert m.lr_partial_mean(Regime.PRE, t) == pytest.approx(direct, rel=1e-10)


@pytest.mark.parametrize("theta", [0.5, -0.5])
def test_post_partial_mean_by_quadrature(theta):
    m = GaussianShiftModel(theta)
    t = 0.8
    f = lambda x: math.exp(theta * x - theta**2 / 2 - (x - theta) ** 2 / 2) / math.sqrt(2 * math.pi)
    xt = math.log(t) / theta + theta / 2
    lo, hi = (-np.inf, xt) if theta > 0 else (xt, np.inf)
    direct = integrate.quad(f, lo, hi)[0]
    assert m.lr_partial_mean(Regime.POST, t) == pytest.approx(direct, rel=1e-10)


@pytest.mark.parametrize("theta", [1.0, -0.7, 0.05])
def test_fast_tables_agree_with_direct_forms(theta):
    m = GaussianShiftModel(theta)
    t = np.geomspace(1e-3, 1e3, 101)
    for reg in Regime:
        cdf, sf, pm, pms = m.lr_tables(reg, t)
        np.testing.assert_allclose(cdf, m.lr_cdf(reg, t), rtol=1e-13, atol=1e-300)
        np.testing.assert_allclose(sf, m.lr_sf(reg, t), rtol=1e-13, atol=1e-300)
        np.testing.assert_allclose(pm, m.lr_partial_mean(reg, t), rtol=1e-13, atol=1e-300)
        np.testing.assert_allclose(pms, m.lr_partial_mean_sf(reg, t), rtol=1e-13, atol=1e-300)


def test_negative_theta_mirrors_positive():
    # X -> -X maps theta to -theta with the same likelihood-ratio law
    t = np.geomspace(0.01, 100, 30)
    for reg in Regime:
        np.testing.assert_allclose(lr_cdf(GaussianShiftModel(-0.8), reg, t),
                                   lr_cdf(GaussianShiftModel(0.8), reg, t), rtol=1e-14)


def test_log_sf_survives_underflow():
    m = GaussianShiftModel(0.01)
    assert m.lr_sf(Regime.PRE, 2.33) == 0.0
    assert -4000 < m.lr_log_sf(Regime.PRE, 2.33) < -3000


def test_lr_of_observation():
    m = GaussianShiftModel(1.0)
    assert lr_of_observation(m, 0.5) == pytest.approx(1.0)
    assert lr_of_observation(m, 1.0) == pytest.approx(math.exp(0.5))


@settings(deadline=None, max_examples=5)
@given(st.integers(0, 2**32))
def test_sampler_is_reproducible(seed):
    m = GaussianShiftModel(0.5)
    a = sample(m, "0", np.random.default_rng(seed), 10)
    b = sample(m, "0", np.random.default_rng(seed), 10)
    assert np.array_equal(a, b)


@pytest.mark.slow
@pytest.mark.parametrize("reg,mean", [("inf", 0.0), ("0", 0.7)])
def test_sampler_distribution(reg, mean):
    m = GaussianShiftModel(0.7)
    x = sample(m, reg, np.random.default_rng(2024), 10**6)
    ks = stats.kstest(x, "norm", args=(mean, 1.0)).statistic
    assert ks < 0.002
