"""
Hard-sample buffer with prioritized keeping.

On every update the losses of the stored entries are recomputed under the current model and
ranked together with the losses of the new samples; the easiest candidates are dropped first,
not the oldest. Optionally the slots are normalized across classes.
"""

import logging

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from ocl.errors import ConfigurationError
from ocl.nn_core import Batch, FloatArray, LossSpec, Model, per_sample_losses

logger = logging.getLogger(__name__)


class BufferEntry(BaseModel):
    x: FloatArray
    y: npt.NDArray[np.generic]
    loss: float = Field(..., ge=0.0)

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class HardBuffer(BaseModel):
    capacity: int = Field(..., gt=0)
    normalize_classes: bool = False
    samples: Batch | None = Field(None, description="Stored entries, hardest first")
    losses: FloatArray = Field(default_factory=lambda: np.zeros(0))
    stamps: npt.NDArray[np.int64] = Field(
        default_factory=lambda: np.zeros(0, dtype=np.int64), description="Update call in which each entry arrived"
    )
    updates: int = Field(0, ge=0, description="Number of update calls so far")

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def __len__(self) -> int:
        return 0 if self.samples is None else len(self.samples)

    @property
    def entries(self) -> list[BufferEntry]:
        if self.samples is None:
            return []
        return [
            BufferEntry(x=self.samples.x[i], y=np.asarray(self.samples.y[i]), loss=float(self.losses[i]))
            for i in range(len(self))
        ]

    def class_counts(self) -> dict[int, int]:
        if self.samples is None or self.samples.y.ndim != 1:
            return {}
        labels, counts = np.unique(self.samples.y, return_counts=True)
        return {int(label): int(count) for label, count in zip(labels, counts)}


def _rank(candidates: Batch, losses: FloatArray, stamps: npt.NDArray[np.int64]) -> npt.NDArray[np.int64]:
    """Hardest first; equal losses prefer the newer arrival, then the lexicographically smaller input."""
    features = candidates.x.reshape(len(candidates), -1)
    keys = (*features.T[::-1], -stamps, -losses)
    return np.lexsort(keys).astype(np.int64)


def _select_normalized(order: npt.NDArray[np.int64], labels: npt.NDArray[np.generic], capacity: int) -> list[int]:
    """
    Split the slots evenly over the observed classes, hardest first within each class.

    Slots a class cannot fill go to the globally hardest leftovers. Each class takes at most one
    of those spare slots before any class takes a second, which keeps per-class counts within one
    whenever every class has enough candidates.
    """
    classes = np.unique(labels[order])
    quota = capacity // len(classes)
    taken: dict[object, int] = {label.item(): 0 for label in classes}
    chosen: list[int] = []
    leftovers: list[int] = []
    for pos in order:
        label = labels[pos].item()
        if taken[label] < quota:
            taken[label] += 1
            chosen.append(int(pos))
        else:
            leftovers.append(int(pos))

    spare = capacity - len(chosen)
    got_spare: set[object] = set()
    for pos in leftovers:
        if spare == 0:
            break
        label = labels[pos].item()
        if label not in got_spare:
            got_spare.add(label)
            chosen.append(pos)
            spare -= 1
    for pos in leftovers:
        if spare == 0:
            break
        if pos not in chosen:
            chosen.append(pos)
            spare -= 1
    return chosen


def update_buffer(buffer: HardBuffer, model: Model, new_samples: Batch, spec: LossSpec) -> HardBuffer:
    """Keep the `capacity` hardest samples among the stored entries and the new samples."""
    stamp = buffer.updates
    if buffer.samples is None:
        candidates = new_samples
        stamps = np.full(len(new_samples), stamp, dtype=np.int64)
    else:
        candidates = Batch.concat([buffer.samples, new_samples])
        stamps = np.concatenate([buffer.stamps, np.full(len(new_samples), stamp, dtype=np.int64)])

    if len(candidates) == 0:
        return buffer.model_copy(update={"updates": stamp + 1})

    losses = per_sample_losses(model, candidates, spec)
    finite = np.isfinite(losses)
    if not finite.all():
        logger.warning(f"discarding {int((~finite).sum())} buffer candidates with non-finite loss")
        keep = np.flatnonzero(finite)
        candidates, losses, stamps = candidates.subset(keep), losses[keep], stamps[keep]
        if len(candidates) == 0:
            return HardBuffer(capacity=buffer.capacity, normalize_classes=buffer.normalize_classes, updates=stamp + 1)

    order = _rank(candidates, losses, stamps)
    if buffer.normalize_classes:
        if candidates.y.ndim != 1:
            raise ConfigurationError("class normalization needs one scalar label per sample")
        chosen = _select_normalized(order, candidates.y, buffer.capacity)
        rank_of = np.empty(len(order), dtype=np.int64)
        rank_of[order] = np.arange(len(order))
        keep = np.array(sorted(chosen, key=lambda pos: rank_of[pos]), dtype=np.int64)
    else:
        keep = order[: buffer.capacity]

    return buffer.model_copy(
        update={
            "samples": candidates.subset(keep),
            "losses": losses[keep],
            "stamps": stamps[keep],
            "updates": stamp + 1,
        }
    )
