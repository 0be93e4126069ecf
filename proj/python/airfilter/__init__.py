"""Low-cost air-pollution sensor calibration with a conditional-GP Kalman filter."""

from ._core import (
    AirfilterError,
    cli,
    cov_matrix,
    filter_time_point,
    kalman_update,
    proposition_suite,
    simulate,
)

__all__ = [
    "AirfilterError",
    "cli",
    "cov_matrix",
    "filter_time_point",
    "kalman_update",
    "proposition_suite",
    "simulate",
]
