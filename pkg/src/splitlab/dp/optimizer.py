"""DP-SGD style client update: per-example clipping, Gaussian noise, Adam."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..nn import AdamState, adam_step
from .accountant import (
    SIGMA_BOUNDS,
    AccountantState,
    TargetTooLoose,
    calibrate_sigma,
    epsilon,
    epsilon_for,
    rdp_step,
)

log = logging.getLogger(__name__)


class BudgetExhausted(RuntimeError):
    """The next step would spend more privacy than the configured budget."""


class EmptyBatch(ValueError):
    pass


@dataclass
class DpConfig:
    """Privacy parameters of the client optimizer.

    Exactly one of ``epsilon_target`` and ``noise_multiplier`` is given; the other
    is derived from the accountant over ``max_steps`` steps at ``sampling_rate``.
    """

    delta: float
    sampling_rate: float
    max_steps: int
    epsilon_target: Optional[float] = None
    noise_multiplier: Optional[float] = None
    clip_norm: float = 1.0
    _sigma: Optional[float] = field(default=None, init=False, repr=False)
    _budget: Optional[float] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if (self.epsilon_target is None) == (self.noise_multiplier is None):
            raise ValueError("exactly one of epsilon_target and noise_multiplier must be given")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError(f"sampling_rate must lie in (0, 1], got {self.sampling_rate}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.epsilon_target is not None and self.epsilon_target <= 0:
            raise ValueError("epsilon_target must be positive")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")

    @property
    def sigma(self) -> float:
        if self._sigma is None:
            if self.noise_multiplier is not None:
                self._sigma = float(self.noise_multiplier)
            else:
                try:
                    self._sigma = calibrate_sigma(self.epsilon_target, self.delta,
                                                  self.sampling_rate, self.max_steps)
                except TargetTooLoose as exc:
                    self._sigma = SIGMA_BOUNDS[0]
                    log.warning("%s; using sigma=%s, which stays inside the budget", exc, self._sigma)
        return self._sigma

    @property
    def budget(self) -> float:
        """Epsilon the client may spend (the target, or the derived value)."""
        if self._budget is None:
            if self.epsilon_target is not None:
                self._budget = float(self.epsilon_target)
            elif self.sigma == 0:
                self._budget = math.inf
            else:
                self._budget = epsilon_for(self.sampling_rate, self.sigma, self.max_steps, self.delta)[0]
        return self._budget


def clip_per_example(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale each row to L2 norm at most ``clip_norm``; short rows are left untouched."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] == 0:
        raise EmptyBatch("per-example gradients must be a non-empty N x P array")
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    norms = np.sqrt(np.einsum("ij,ij->i", grads, grads))
    over = norms > clip_norm
    out = grads.copy()
    if over.any():
        out[over] = grads[over] * (clip_norm / norms[over])[:, None]
    return out


def noised_average(clipped: np.ndarray, sigma: float, clip_norm: float,
                   rng: np.random.Generator) -> np.ndarray:
    """(sum of rows + N(0, (sigma * C)^2 I)) / batch size."""
    clipped = np.asarray(clipped, dtype=np.float64)
    if clipped.ndim != 2 or clipped.shape[0] == 0:
        raise EmptyBatch("cannot average an empty batch")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    total = clipped.sum(axis=0)
    if sigma > 0:
        total = total + rng.normal(0.0, sigma * clip_norm, size=total.shape)
    return total / clipped.shape[0]


@dataclass
class AdamParams:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def check_budget(config: DpConfig, accountant: AccountantState) -> AccountantState:
    """Accountant state after one more step; ``BudgetExhausted`` if that overspends."""
    if config.sigma > 0:
        nxt = rdp_step(accountant, config.sampling_rate, config.sigma)
        spent, _ = epsilon(nxt, config.delta)
        if spent > config.budget * (1 + 1e-9):
            raise BudgetExhausted(
                f"step {nxt.steps_taken} would spend epsilon={spent:.4f} > budget {config.budget:.4f}")
        return nxt
    return AccountantState(accountant.steps_taken + 1, accountant.rdp_orders,
                           np.full(len(accountant.rdp_orders), np.inf))


def dp_client_step(params: np.ndarray, per_example_grads: np.ndarray, config: DpConfig,
                   adam_state: AdamState, accountant: AccountantState,
                   rng: np.random.Generator, adam: AdamParams = AdamParams()):
    """Clip, noise, apply Adam and advance the accountant.

    Returns ``(params, adam_state, accountant)``. Raises ``BudgetExhausted`` before
    touching anything when the step would overspend the budget.
    """
    per_example_grads = np.asarray(per_example_grads, dtype=np.float64)
    if per_example_grads.ndim != 2 or per_example_grads.shape[1] != params.shape[0]:
        raise ValueError(
            f"shape mismatch: per-example grads {per_example_grads.shape}, params {params.shape}")
    sigma = config.sigma
    nxt = check_budget(config, accountant)
    clip = config.clip_norm
    clipped = clip_per_example(per_example_grads, clip) if math.isfinite(clip) else per_example_grads
    noisy = noised_average(clipped, sigma, clip, rng)
    new_params, new_state = adam_step(params, noisy, adam_state, adam.lr, adam.beta1,
                                      adam.beta2, adam.eps)
    return new_params, new_state, nxt


def privacy_report(config: Optional[DpConfig], accountant: Optional[AccountantState]) -> dict:
    if config is None:
        return {"epsilon_target": None, "delta": None, "sigma": None, "C": None, "q": None,
                "steps": accountant.steps_taken if accountant else 0,
                "epsilon_spent": None, "best_alpha": None}
    accountant = accountant or AccountantState()
    spent, alpha = (epsilon(accountant, config.delta) if config.sigma > 0
                    else (math.inf if accountant.steps_taken else 0.0, None))
    return {
        "epsilon_target": config.budget,
        "delta": config.delta,
        "sigma": config.sigma,
        "C": config.clip_norm,
        "q": config.sampling_rate,
        "steps": accountant.steps_taken,
        "epsilon_spent": spent,
        "best_alpha": alpha,
    }
