"""Differentially private client optimisation and RDP accounting."""

from .accountant import (
    DEFAULT_ORDERS,
    SIGMA_BOUNDS,
    AccountantState,
    CalibrationError,
    InfinitePrivacyLoss,
    TargetTooLoose,
    calibrate_sigma,
    epsilon,
    epsilon_for,
    rdp_step,
    rdp_subsampled_gaussian,
)
from .optimizer import (
    AdamParams,
    BudgetExhausted,
    check_budget,
    DpConfig,
    EmptyBatch,
    clip_per_example,
    dp_client_step,
    noised_average,
    privacy_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
