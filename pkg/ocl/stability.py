"""
Loss-plateau controller deciding when to consolidate.

A sliding window of per-batch losses is watched for plateaus (mean and standard deviation both
under their thresholds). A plateau fires one consolidation and disarms the detector; it is
re-armed once the window mean rises above the previous plateau's mean plus one standard deviation.
"""

import logging
import math
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ocl.errors import StreamFaultError

logger = logging.getLogger(__name__)

ROUNDING_SLACK = 1e-12


class LossWindow(BaseModel):
    capacity: int = Field(..., gt=0, description="Window length")
    entries: tuple[float, ...] = Field(default=(), description="Recent losses, oldest first")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_size(self) -> Self:
        if len(self.entries) > self.capacity:
            raise ValueError(f"window holds {len(self.entries)} entries but capacity is {self.capacity}")
        return self

    @property
    def is_full(self) -> bool:
        return len(self.entries) == self.capacity

    @property
    def mean(self) -> float:
        return float(np.mean(self.entries)) if self.entries else 0.0

    @property
    def std(self) -> float:
        """Sample standard deviation; 0 for fewer than two entries."""
        return float(np.std(self.entries, ddof=1)) if len(self.entries) > 1 else 0.0

    def push(self, loss: float) -> "LossWindow":
        return self.model_copy(update={"entries": (self.entries + (loss,))[-self.capacity :]})


class ControllerState(BaseModel):
    window: LossWindow
    delta_mu: float = Field(..., gt=0.0, description="Plateau threshold on the window mean")
    delta_sigma: float = Field(..., gt=0.0, description="Plateau threshold on the window std")
    plateau_flag: bool = False
    mu_old: float = Field(0.0, ge=0.0)
    sigma_old: float = Field(0.0, ge=0.0)

    model_config = ConfigDict(frozen=True)


def init_controller(window_length: int, delta_mu: float, delta_sigma: float) -> ControllerState:
    return ControllerState(window=LossWindow(capacity=window_length), delta_mu=delta_mu, delta_sigma=delta_sigma)


def record_loss(state: ControllerState, loss: float) -> ControllerState:
    if not math.isfinite(loss):
        raise StreamFaultError(f"non-finite loss {loss} cannot enter the loss window")
    return state.model_copy(update={"window": state.window.push(float(loss))})


def should_consolidate(state: ControllerState) -> bool:
    window = state.window
    return (
        window.is_full
        and not state.plateau_flag
        and window.mean < state.delta_mu
        and window.std < state.delta_sigma
    )


def on_consolidated(state: ControllerState) -> ControllerState:
    window = state.window
    logger.debug(f"plateau recorded: mean={window.mean:.4f} std={window.std:.4f}")
    return state.model_copy(
        update={
            "mu_old": window.mean,
            "sigma_old": window.std,
            "window": LossWindow(capacity=window.capacity),
            "plateau_flag": True,
        }
    )


def check_peak(state: ControllerState) -> ControllerState:
    window = state.window
    threshold = state.mu_old + state.sigma_old
    # strict >, but a window refilled with the plateau losses can land a few ulps above mu_old
    rising = window.mean - threshold > ROUNDING_SLACK
    if state.plateau_flag and window.entries and rising:
        logger.debug(f"peak: window mean {window.mean:.4f} > {state.mu_old:.4f} + {state.sigma_old:.4f}, re-armed")
        return state.model_copy(update={"plateau_flag": False})
    return state
