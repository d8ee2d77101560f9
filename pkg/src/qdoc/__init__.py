"""Operating characteristics of CUSUM and Shiryaev-Roberts change detectors.

ARL to false alarm, SADD and STADD for a Gaussian mean shift are obtained by
solving the renewal integral equations of the detection statistic on a
grid, and can be cross-checked by Monte Carlo.
"""

from .calibration import CalibrationResult, calibrate, initial_threshold, renewal_constant_v
from .errors import (
    BracketError,
    CensoredRunError,
    NumericalError,
    QdocError,
    SpectralRadiusError,
)
from .metrics import (
    DelayProfile,
    OperatingCharacteristics,
    arl_to_false_alarm,
    delay_profile,
    operating_characteristics,
    sadd,
    stadd,
)
from .model import ChangeModel, GaussianShiftModel, Regime
from .montecarlo import McEstimate, mc_expectation, mc_stadd
from .procedure import CUSUM, SR, Procedure, get_procedure

__version__ = "0.1.0"

__all__ = [
    "BracketError", "CUSUM", "CalibrationResult", "CensoredRunError", "ChangeModel",
    "DelayProfile", "GaussianShiftModel", "McEstimate", "NumericalError",
    "OperatingCharacteristics", "Procedure", "QdocError", "Regime", "SR",
    "SpectralRadiusError", "arl_to_false_alarm", "calibrate", "delay_profile",
    "get_procedure", "initial_threshold", "mc_expectation", "mc_stadd",
    "operating_characteristics", "renewal_constant_v", "sadd", "stadd",
]
