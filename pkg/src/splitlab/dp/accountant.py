"""Renyi-DP accounting for the subsampled Gaussian mechanism.

RDP of one step at order alpha is ``log(A_alpha) / (alpha - 1)`` where
``A_alpha = E_{z ~ N(0, s^2)}[((1 - q) + q * exp((2z - 1) / (2 s^2)))^alpha]``.
Integer orders use the finite binomial expansion; fractional orders use the
two-sided erfc series of Mironov, Talwar and Zhang (2019).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import special

DEFAULT_ORDERS: tuple = (1.25, 1.5) + tuple(float(a) for a in range(2, 65)) + (128.0, 256.0)

SIGMA_BOUNDS = (0.3, 100.0)


class InfinitePrivacyLoss(ValueError):
    """A zero noise multiplier gives no finite privacy guarantee."""


class CalibrationError(ValueError):
    """No noise multiplier inside the allowed bounds meets the target epsilon."""


class TargetTooLoose(CalibrationError):
    """Even the smallest allowed noise multiplier spends less than the target."""


def _logsumexp_signed(log_mags: np.ndarray, signs: np.ndarray) -> float:
    top = np.max(log_mags)
    if not np.isfinite(top):
        return -np.inf
    total = float(np.sum(signs * np.exp(log_mags - top)))
    if total <= 0:
        return -np.inf
    return top + math.log(total)


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    i = np.arange(alpha + 1, dtype=np.float64)
    log_coef = special.gammaln(alpha + 1) - special.gammaln(i + 1) - special.gammaln(alpha - i + 1)
    terms = log_coef + i * math.log(q) + (alpha - i) * math.log1p(-q) + (i * i - i) / (2 * sigma ** 2)
    return float(special.logsumexp(terms))


def _log_erfc(x: float) -> float:
    return math.log(2.0) + float(special.log_ndtr(-x * math.sqrt(2.0)))


def _log_a_frac(q: float, sigma: float, alpha: float, max_terms: int = 2000) -> float:
    z0 = sigma ** 2 * math.log(1.0 / q - 1.0) + 0.5
    log_q, log_1mq = math.log(q), math.log1p(-q)
    mags, signs = [], []
    for i in range(max_terms):
        coef = special.binom(alpha, i)
        if coef == 0:
            break
        log_coef = math.log(abs(coef))
        sign = 1.0 if coef > 0 else -1.0
        j = alpha - i
        log_t0 = log_coef + i * log_q + j * log_1mq
        log_t1 = log_coef + j * log_q + i * log_1mq
        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2) * sigma))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2) * sigma))
        log_s0 = log_t0 + (i * i - i) / (2 * sigma ** 2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2 * sigma ** 2) + log_e1
        mags.extend((log_s0, log_s1))
        signs.extend((sign, sign))
        if i > alpha + 1 and max(log_s0, log_s1) < max(mags) - 40:
            break
    return _logsumexp_signed(np.array(mags), np.array(signs))


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: float) -> float:
    """RDP at order ``alpha`` of one step with sampling rate ``q`` and noise ``sigma``."""
    if sigma <= 0:
        raise InfinitePrivacyLoss("noise multiplier must be positive for a finite privacy loss")
    if not 0 <= q <= 1:
        raise ValueError(f"sampling rate must lie in [0, 1], got {q}")
    if q == 0:
        return 0.0
    if q == 1.0:
        return alpha / (2 * sigma ** 2)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_frac(q, sigma, alpha)
    return max(log_a, 0.0) / (alpha - 1)


@lru_cache(maxsize=256)
def _step_vector(q: float, sigma: float, orders: tuple) -> np.ndarray:
    vec = np.array([rdp_subsampled_gaussian(q, sigma, a) for a in orders])
    vec.setflags(write=False)
    return vec


def rdp_vector(q: float, sigma: float, orders: Sequence[float] = DEFAULT_ORDERS) -> np.ndarray:
    return _step_vector(float(q), float(sigma), tuple(float(a) for a in orders))


@dataclass(frozen=True)
class AccountantState:
    steps_taken: int = 0
    rdp_orders: tuple = DEFAULT_ORDERS
    rdp_values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rdp_values is None:
            object.__setattr__(self, "rdp_values", np.zeros(len(self.rdp_orders)))


def rdp_step(state: AccountantState, q: float, sigma: float, count: int = 1) -> AccountantState:
    """Compose ``count`` more subsampled-Gaussian steps into the accountant."""
    if sigma <= 0:
        raise InfinitePrivacyLoss("noise multiplier 0 means infinite privacy loss")
    step = rdp_vector(q, sigma, state.rdp_orders)
    return AccountantState(state.steps_taken + count, state.rdp_orders,
                           state.rdp_values + count * step)


def epsilon(state: AccountantState, delta: float) -> tuple[float, Optional[float]]:
    """Smallest (epsilon, order) over the order grid for the given delta."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if state.steps_taken == 0:
        return 0.0, None
    orders = np.asarray(state.rdp_orders)
    eps = state.rdp_values + math.log(1.0 / delta) / (orders - 1)
    best = int(np.argmin(eps))
    return float(eps[best]), float(orders[best])


def epsilon_for(q: float, sigma: float, steps: int, delta: float,
                orders: Sequence[float] = DEFAULT_ORDERS) -> tuple[float, Optional[float]]:
    state = rdp_step(AccountantState(rdp_orders=tuple(orders)), q, sigma, count=steps) if steps else \
        AccountantState(rdp_orders=tuple(orders))
    return epsilon(state, delta)


def calibrate_sigma(epsilon_target: float, delta: float, q: float, steps: int,
                    bounds: tuple = SIGMA_BOUNDS, rel_tol: float = 0.01) -> float:
    """Noise multiplier whose epsilon after ``steps`` lies in ((1 - rel_tol) * target, target]."""
    if epsilon_target <= 0:
        raise ValueError(f"epsilon target must be positive, got {epsilon_target}")
    lo, hi = bounds

    def eps(s):
        return epsilon_for(q, s, steps, delta)[0]

    if eps(hi) > epsilon_target:
        raise CalibrationError(
            f"epsilon {epsilon_target} unreachable: even sigma={hi} spends {eps(hi):.4g}")
    if eps(lo) <= epsilon_target:
        if eps(lo) > (1 - rel_tol) * epsilon_target:
            return lo
        raise TargetTooLoose(
            f"epsilon {epsilon_target} unreachable: sigma={lo} already spends only {eps(lo):.4g}")
    # invariant: eps(lo) > target >= eps(hi)
    for _ in range(200):
        e_hi = eps(hi)
        if e_hi > (1 - rel_tol) * epsilon_target:
            return hi
        mid = math.sqrt(lo * hi)
        if eps(mid) > epsilon_target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("bisection did not converge")  # pragma: no cover
