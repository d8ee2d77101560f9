import math

import pytest

from qdoc.calibration import calibrate, initial_threshold, renewal_constant_v
from qdoc.errors import BracketError
from qdoc.metrics import arl_to_false_alarm
from qdoc.model import GaussianShiftModel
from reference_tables import GAMMAS, PUBLISHED

THETAS = (0.01, 0.1, 0.5, 1.0)


@pytest.mark.parametrize("theta", THETAS)
def test_v_in_unit_interval(theta):
    assert 0 < renewal_constant_v(theta) < 1


def test_v_tends_to_one_for_small_shifts():
    vs = [renewal_constant_v(t) for t in THETAS]
    assert vs == sorted(vs, reverse=True)
    assert 1 - vs[0] < 1 - vs[-1]


def test_v_symmetric_and_stable_under_tolerance():
    assert renewal_constant_v(-0.5) == renewal_constant_v(0.5)
    for theta in (0.01, 1.0):
        assert renewal_constant_v(theta, 1e-8) == pytest.approx(
            renewal_constant_v(theta, 1e-12), abs=1e-8)


def test_v_small_shift_limit():
    # v = 1 - 0.583 theta + O(theta^2) as theta -> 0
    theta = 0.01
    assert renewal_constant_v(theta) == pytest.approx(1 - 0.5826 * theta, abs=2e-4)


def test_v_rejects_zero():
    with pytest.raises(ValueError):
        renewal_constant_v(0.0)


@pytest.mark.parametrize("theta", THETAS)
def test_sr_first_guess_reproduces_tabulated_thresholds(theta):
    v = renewal_constant_v(theta)
    for g in GAMMAS:
        A_tab = PUBLISHED[theta]["SR"][g][0]
        assert initial_threshold("sr", g, theta, v) == pytest.approx(A_tab, rel=2e-4, abs=0.006)


def test_sr_guess_linear_in_gamma():
    a = initial_threshold("sr", 100, 0.5)
    assert initial_threshold("sr", 1000, 0.5) == pytest.approx(10 * a, rel=1e-14)


def test_cusum_guess_small_for_small_shift():
    assert initial_threshold("cusum", 50, 0.01) < 0.01
    with pytest.raises(ValueError):
        initial_threshold("cusum", 1.0, 0.5)


@pytest.fixture(scope="module")
def sr50():
    return calibrate(GaussianShiftModel(1.0), "sr", 50, grid_n=1000)


def test_calibrate_hits_target(sr50):
    assert sr50.rel_error <= 1e-4
    assert arl_to_false_alarm(GaussianShiftModel(1.0), "sr", sr50.A, 1000) == sr50.arl
    assert sr50.history and sr50.iterations == len(sr50.history)


def test_recalibration_from_solution_is_immediate(sr50):
    again = calibrate(GaussianShiftModel(1.0), "sr", 50, grid_n=1000, initial_guess=sr50.A)
    assert again.iterations <= 2
    assert again.A == pytest.approx(sr50.A, rel=1e-4)


def test_cusum_tiny_shift_threshold_near_one():
    r = calibrate(GaussianShiftModel(0.01), "cusum", 50, grid_n=1000)
    assert r.A == pytest.approx(1.06, rel=0.02)
    assert r.rel_error <= 1e-4


def test_validation_on_doubled_grid():
    r = calibrate(GaussianShiftModel(0.5), "cusum", 100, grid_n=800, validate=True)
    assert r.refined_arl == pytest.approx(r.arl, rel=1e-3)


def test_bracket_failure_reports_history():
    with pytest.raises(BracketError) as err:
        calibrate(GaussianShiftModel(1.0), "sr", 1e4, grid_n=200, initial_guess=1e-6,
                  max_evals=3)
    assert len(err.value.history) == 3


def test_argument_checks():
    m = GaussianShiftModel(1.0)
    with pytest.raises(ValueError):
        calibrate(m, "sr", 1.0)
    with pytest.raises(ValueError):
        calibrate(m, "sr", 50, rel_tol=0.0)
    with pytest.raises(ValueError):
        calibrate(m, "sr", 50, initial_guess=-1.0)
    assert math.isfinite(calibrate(m, "sr", 50, grid_n=200, rel_tol=1e-3).A)
