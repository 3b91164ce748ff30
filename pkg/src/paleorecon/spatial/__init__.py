from .covariance import (
    CovarianceParams,
    Location,
    distance_matrix,
    exp_cov,
    great_circle_distance,
    haversine,
    round_index,
)
from .censoring import (
    CensoredCovariance,
    MonteCarloConfig,
    TabulatedFunction,
    VariogramFit,
    bias_correct,
    calibrate_f1,
    calibrate_f2,
    calibrate_f3,
    censored_mean,
    invert_calibration,
    tabulate_f1,
    tabulate_f2,
    tabulate_f3,
)
from .kriging import CensoredKriger, CensoredMoments, KrigedValue, censored_moments, krige, nearest_psd
from .variogram import EmpiricalVariogram, empirical_variogram, variogram_model, wls_fit_variogram

__all__ = [
    "CensoredCovariance", "CensoredKriger", "CensoredMoments", "CovarianceParams",
    "EmpiricalVariogram", "KrigedValue", "Location", "MonteCarloConfig", "TabulatedFunction",
    "VariogramFit", "bias_correct", "calibrate_f1", "calibrate_f2", "calibrate_f3",
    "censored_mean", "censored_moments", "distance_matrix", "empirical_variogram", "exp_cov",
    "great_circle_distance", "haversine", "invert_calibration", "krige", "nearest_psd",
    "round_index", "tabulate_f1", "tabulate_f2", "tabulate_f3", "variogram_model",
    "wls_fit_variogram",
]
