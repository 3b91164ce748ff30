"""Reconstruction of temperature series from ordinal spatial proxy records.

Stages: censored kriging of the ordinal field (``spatial``), quantile mapping
to temperatures (``qmap``), a penalized nonstationary AR(1) prior fitted to
ensemble simulations (``prior``) and Kalman smoothing (``assimilate``).
"""

__version__ = "0.1.0"
