import json
import math

import numpy as np
import pytest

from qdoc.metrics import (
    arl_to_false_alarm,
    delay_profile,
    operating_characteristics,
    sadd,
    stadd,
)
from qdoc.model import GaussianShiftModel
from reference_tables import cell

THETA1 = GaussianShiftModel(1.0)


@pytest.fixture(scope="module")
def sr_oc():
    return operating_characteristics(THETA1, "sr", 28.02, 1000, profile=True, spectral=True)


def test_sr_theta_one_point(sr_oc):
    assert sr_oc.arl == pytest.approx(50.79, rel=0.01)
    assert sr_oc.sadd == pytest.approx(5.46, rel=0.01)
    assert sr_oc.stadd == pytest.approx(4.37, rel=0.01)
    assert sr_oc.riadd == sr_oc.stadd


def test_basic_inequalities(sr_oc):
    assert sr_oc.arl >= 1 and sr_oc.sadd >= 1 and sr_oc.stadd >= 1
    assert sr_oc.stadd <= sr_oc.sadd


def test_diagnostics(sr_oc):
    assert sr_oc.residual < 1e-10
    assert 0 < sr_oc.spectral_bound < 1
    assert 0 < sr_oc.diagnostics["power_estimate"] <= sr_oc.spectral_bound + 1e-10
    assert sr_oc.diagnostics["extrapolated"]


def test_profile_head_is_single_grid_sadd(sr_oc):
    assert sr_oc.profile[0] == sadd(THETA1, "sr", 28.02, 1000, extrapolate=False)


def test_profile_sum_matches_linear_solve():
    prof = delay_profile(THETA1, "sr", 28.02, 1000)
    ref = stadd(THETA1, "sr", 28.02, 1000, extrapolate=False)
    assert prof.stadd() == pytest.approx(ref, rel=1e-3)
    assert np.all(np.diff(prof.values) <= 1e-12)
    assert 0 <= prof.ratio < 1 and prof.tail_bound >= 0


def test_profile_fixed_length():
    prof = delay_profile(THETA1, "cusum", 9.32, 500, K=10)
    assert prof.values.size == 11
    with pytest.raises(ValueError):
        delay_profile(THETA1, "cusum", 9.32, 500, K=-1)


def test_as_dict_is_json_ready(sr_oc):
    d = sr_oc.as_dict()
    json.dumps(d)
    assert d["procedure"] == "SR" and len(d["profile"]) == sr_oc.profile.size


@pytest.mark.parametrize("proc", ["cusum", "sr"])
def test_arl_strictly_increasing_in_threshold(proc):
    A = np.geomspace(1.5, 300, 9)
    arl = [arl_to_false_alarm(THETA1, proc, a, 400) for a in A]
    assert np.all(np.diff(arl) > 0)


def test_richardson_sits_between_refinements():
    coarse = arl_to_false_alarm(THETA1, "cusum", 17.33, 500, extrapolate=False)
    fine = arl_to_false_alarm(THETA1, "cusum", 17.33, 1000, extrapolate=False)
    extra = arl_to_false_alarm(THETA1, "cusum", 17.33, 1000)
    best = arl_to_false_alarm(THETA1, "cusum", 17.33, 4000, extrapolate=False)
    assert abs(extra - best) < abs(fine - best) < abs(coarse - best)


@pytest.mark.parametrize("proc", ["CUSUM", "SR"])
def test_measures_decrease_with_shift_size(proc):
    # thresholds tabulated for gamma = 100 at each theta
    rows = [operating_characteristics(GaussianShiftModel(th), proc, cell(th, proc, 100)["A"], 1000)
            for th in (0.1, 0.5, 1.0)]
    for key in ("sadd", "stadd"):
        vals = [getattr(r, key) for r in rows]
        assert vals == sorted(vals, reverse=True)


def test_negative_shift_is_mirror_image():
    a = operating_characteristics(GaussianShiftModel(-0.5), "sr", 37.38, 500)
    b = operating_characteristics(GaussianShiftModel(0.5), "sr", 37.38, 500)
    assert a.arl == pytest.approx(b.arl, rel=1e-12)
    assert a.stadd == pytest.approx(b.stadd, rel=1e-12)


@pytest.mark.slow
def test_sr_small_shift_stadd():
    assert stadd(GaussianShiftModel(0.1), "sr", 943.41, 2000) == pytest.approx(193.5, rel=0.015)


@pytest.mark.slow
def test_sr_tiny_shift_sadd():
    assert sadd(GaussianShiftModel(0.01), "sr", 994.19, 2000) == pytest.approx(954.57, rel=0.02)


@pytest.mark.slow
def test_cusum_tiny_shift_far_tail():
    oc = operating_characteristics(GaussianShiftModel(0.01), "cusum", 2.3304, 2000)
    assert oc.stadd == pytest.approx(4712.65, rel=0.02)
    assert oc.arl == pytest.approx(10000.12, rel=0.02)


def test_input_validation():
    with pytest.raises(ValueError):
        arl_to_false_alarm(THETA1, "sr", 0.0)
    with pytest.raises(ValueError):
        arl_to_false_alarm(THETA1, "sr", math.inf)
    with pytest.raises(ValueError):
        arl_to_false_alarm(THETA1, "sr", 5.0, 3)
    with pytest.raises(ValueError):
        arl_to_false_alarm(THETA1, "sr", 5.0, 100, quadrature="gauss")
    assert arl_to_false_alarm(THETA1, "sr", 5.0, 2, extrapolate=False) > 1
