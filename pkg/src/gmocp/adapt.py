"""Per-model adaptive miscoverage via pinball loss and scale-free OGD."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class AlphaState:
    """Adaptive miscoverage level plus the running gradient-norm accumulator."""

    alpha: float
    eta: float
    grad_sq_sum: float = 0.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.grad_sq_sum < 0:
            raise ValueError("grad_sq_sum must be >= 0")


def pinball_loss(alpha_bar: float, alpha: float, target_alpha: float) -> float:
    diff = alpha_bar - alpha
    return target_alpha * diff - min(0.0, diff)


def pinball_gradient(alpha_bar: float, alpha: float, target_alpha: float) -> float:
    """Subgradient in alpha; the boundary alpha_bar == alpha counts as covered."""
    err = 1.0 if alpha_bar < alpha else 0.0
    return err - target_alpha


def sfogd_update(state: AlphaState, alpha_bar: float, target_alpha: float) -> AlphaState:
    """One scale-free OGD step: denominator is the running root-sum-of-squares."""
    g = pinball_gradient(alpha_bar, state.alpha, target_alpha)
    return sfogd_update_gradient(state, g)


def sfogd_update_err(state: AlphaState, err: int, target_alpha: float) -> AlphaState:
    """SF-OGD step driven directly by a coverage indicator (used by COMA)."""
    return sfogd_update_gradient(state, float(err) - target_alpha)


def sfogd_update_gradient(state: AlphaState, g: float) -> AlphaState:
    grad_sq_sum = state.grad_sq_sum + g * g
    # |g| >= target_alpha > 0, so grad_sq_sum > 0 whenever an update happens
    alpha = state.alpha - state.eta * g / math.sqrt(grad_sq_sum)
    return AlphaState(alpha=alpha, eta=state.eta, grad_sq_sum=grad_sq_sum)
