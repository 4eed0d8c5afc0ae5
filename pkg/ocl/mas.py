"""
Importance-weight regularizer.

Parameter importance is the mean magnitude of the gradient of half the squared L2 norm of the
network output, averaged over a sample set. Estimates are accumulated across consolidations
either as a cumulative moving average or with a halving decay. The quadratic penalty pulls
parameters toward the anchor taken at the last consolidation, weighted by importance.
"""

import logging
from enum import StrEnum
from typing import Self

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ocl.errors import EmptySampleSetError, RejectedInputError
from ocl.nn_core import FloatArray, Model, as_input_rows, forward_trace, per_sample_gradients

logger = logging.getLogger(__name__)


class OmegaMode(StrEnum):
    CUMULATIVE_AVERAGE = "cumulative-average"
    DECAYING = "decaying"


class ImportanceState(BaseModel):
    omega: FloatArray = Field(..., description="Nonnegative importance per parameter")
    anchor: FloatArray = Field(..., description="Parameters at the last consolidation")
    update_count: int = Field(0, ge=0)
    mode: OmegaMode = OmegaMode.CUMULATIVE_AVERAGE
    lam: float = Field(..., ge=0.0, description="Penalty weight lambda")

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _check_vectors(self) -> Self:
        if self.omega.shape != self.anchor.shape or self.omega.ndim != 1:
            raise ValueError(f"omega {self.omega.shape} and anchor {self.anchor.shape} must be equal-length vectors")
        if np.any(self.omega < 0.0):
            raise ValueError("importance weights must be nonnegative")
        return self


def init_importance(model: Model, lam: float, mode: OmegaMode = OmegaMode.CUMULATIVE_AVERAGE) -> ImportanceState:
    """Zero importance, anchored at the model's current parameters."""
    return ImportanceState(omega=np.zeros(model.num_params), anchor=model.params.copy(), lam=lam, mode=mode)


def _sensitivities(model: Model, rows: FloatArray) -> FloatArray:
    out = forward_trace(model, rows)[0][-1]
    # d(0.5 * ||F||^2) / dF = F
    return np.abs(per_sample_gradients(model, rows, out))


def output_sensitivity(model: Model, x: npt.ArrayLike) -> FloatArray:
    """|d(0.5 * ||F(x)||^2) / d(theta_i)| for a single input vector."""
    if np.ndim(x) != 1:
        raise RejectedInputError(f"output_sensitivity takes one input vector, got shape {np.shape(x)}")
    return _sensitivities(model, as_input_rows(model, x))[0]


def estimate_raw_importance(model: Model, samples: npt.ArrayLike) -> FloatArray:
    """
    Mean output sensitivity over a sample set.

    Args:
        model: network whose parameters are scored
        samples: input rows (n, d); triplet stacks (n, 3, d) are flattened into 3n inputs

    Raises:
        EmptySampleSetError: if there is nothing to average over
    """
    inputs = np.asarray(samples, dtype=np.float64)
    if inputs.size == 0:
        raise EmptySampleSetError("importance estimation needs at least one sample")
    rows = as_input_rows(model, inputs.reshape(-1, inputs.shape[-1]))
    return _sensitivities(model, rows).mean(axis=0)


def consolidate(state: ImportanceState, model: Model, samples: npt.ArrayLike) -> ImportanceState:
    """Fold a fresh importance estimate into the state and re-anchor at the current parameters."""
    raw = estimate_raw_importance(model, samples)
    if raw.shape != state.omega.shape:
        raise RejectedInputError(f"model has {raw.shape[0]} parameters, importance state has {state.omega.shape[0]}")
    count = state.update_count + 1
    # the first estimate is taken as-is in both modes; there is nothing to decay from yet
    if count == 1:
        omega = raw
    elif state.mode == OmegaMode.CUMULATIVE_AVERAGE:
        omega = state.omega + (raw - state.omega) / count
    else:
        omega = (state.omega + raw) / 2.0
    logger.debug(f"importance update #{count} ({state.mode}): mean omega {omega.mean():.3e}")
    return state.model_copy(update={"omega": omega, "anchor": model.params.copy(), "update_count": count})


def penalty(state: ImportanceState, model: Model) -> float:
    drift = model.params - state.anchor
    return float(0.5 * state.lam * np.sum(state.omega * drift**2))


def penalty_grad(state: ImportanceState, model: Model) -> FloatArray:
    return state.lam * state.omega * (model.params - state.anchor)
