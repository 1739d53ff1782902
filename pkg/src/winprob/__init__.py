"""Restricted and unrestricted win probabilities for two-arm survival trials."""

__version__ = "0.1.0"

from .estimands import (EstimandValue, empirical_wp, net_benefit, rwp, win_function,
                        win_function_restricted, win_odds, wp, wp_from_hr_under_ph)
from .survival import (ArmData, Dataset, EarlyEffect, Exponential, LateEffect, SurvivalRecord,
                       WeibullParams, km_estimate)

__all__ = [
    "EstimandValue", "empirical_wp", "net_benefit", "rwp", "win_function",
    "win_function_restricted", "win_odds", "wp", "wp_from_hr_under_ph",
    "ArmData", "Dataset", "EarlyEffect", "Exponential", "LateEffect", "SurvivalRecord",
    "WeibullParams", "km_estimate",
]
