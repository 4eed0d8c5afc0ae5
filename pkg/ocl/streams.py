"""
Seeded non-i.i.d. sample streams with scheduled distribution shifts.

A stream walks a segment schedule batch by batch. Segment boundaries are either sudden or
gradual (a blend over a number of batches). The segment id travels with every StreamBatch for
evaluation bookkeeping, but `learner_batches()` hands the learner nothing but samples and labels.
"""

import logging
from abc import ABC, abstractmethod
from collections.abc import Iterator
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from ocl.errors import ConfigurationError
from ocl.nn_core import Batch, FloatArray

logger = logging.getLogger(__name__)

TEMPLATES_PER_IDENTITY = 5


class StreamKind(StrEnum):
    QUADRANT_SPHERE = "quadrant_sphere"
    DRIFTING_GAUSSIAN = "drifting_gaussian"
    IDENTITY_TRACK = "identity_track"


class OrthantSampling(StrEnum):
    RADIAL = "radial"  # radius uniform in [0, radius] minus the gap shell, direction uniform over the orthant, balanced
    BOX = "box"  # coordinates uniform in [0, radius], signs applied, no balancing


class Segment(BaseModel):
    """One stretch of the schedule. Only the fields of the schedule's stream kind are read."""

    duration: int = Field(..., gt=0, description="Length in batches")
    blend: int = Field(0, ge=0, description="Batches of gradual transition from the previous segment; 0 = sudden")
    # quadrant_sphere
    signs: tuple[float, ...] | None = None
    radius: float = Field(1.3, gt=0.0)
    gap: float = Field(0.0, ge=0.0, lt=1.0, description="Half-width of the empty shell around the unit sphere (radial)")
    sampling: OrthantSampling = OrthantSampling.RADIAL
    # drifting_gaussian
    means: list[list[float]] | None = None
    cov: list[list[float]] | None = None
    std: float = Field(1.0, gt=0.0)
    # drifting_gaussian and identity_track
    priors: list[float] | None = None
    # identity_track
    identities: list[int] | None = None

    model_config = ConfigDict(frozen=True)


class SegmentSchedule(BaseModel):
    kind: StreamKind
    dim: int = Field(..., gt=0, description="Input dimension")
    batch_size: int = Field(10, gt=0, description="Samples (or triplets) per stream batch")
    segments: list[Segment] = Field(..., min_length=1)
    # identity_track only
    num_identities: int = Field(0, ge=0)
    cluster_std: float = Field(0.5, gt=0.0)
    cluster_spread: float = Field(3.0, gt=0.0)
    track_length: int = Field(10, gt=1)

    model_config = ConfigDict(frozen=True)

    @property
    def total_batches(self) -> int:
        return sum(segment.duration for segment in self.segments)

    @property
    def boundaries(self) -> list[int]:
        """Index of the first batch of every segment after the first."""
        return np.cumsum([s.duration for s in self.segments])[:-1].astype(int).tolist()


class StreamBatch(BaseModel):
    samples: Batch
    segment_id: int = Field(..., ge=0, description="Hidden from the learner")
    index: int = Field(..., ge=0)

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class LabeledSet(BaseModel):
    """Held-out evaluation data tagged by the segment it belongs to."""

    x: FloatArray
    y: npt.NDArray[np.int64]
    segment: npt.NDArray[np.int64]

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def __len__(self) -> int:
        return int(self.x.shape[0])


def _normalized(priors: list[float] | None, count: int, where: str) -> FloatArray:
    if priors is None:
        return np.full(count, 1.0 / count)
    p = np.asarray(priors, dtype=np.float64)
    if p.shape != (count,) or np.any(p < 0.0) or p.sum() <= 0.0:
        raise ConfigurationError(f"{where}: priors must be {count} nonnegative weights, got {priors}")
    return p / p.sum()


class StreamSource(ABC):
    """Base class of the scheduled streams. Iterating twice replays the identical stream."""

    def __init__(self, seed: int, schedule: SegmentSchedule) -> None:
        self.seed = seed
        self.schedule = schedule
        for i, segment in enumerate(schedule.segments):
            if i == 0 and segment.blend > 0:
                raise ConfigurationError("the first segment has nothing to blend from")
            if segment.blend > segment.duration:
                raise ConfigurationError(f"segment {i}: blend {segment.blend} exceeds duration {segment.duration}")

    def __len__(self) -> int:
        return self.schedule.total_batches

    def position(self, index: int) -> tuple[int, float]:
        """Segment id at batch `index` and the weight of that segment (below 1 while blending in)."""
        start = 0
        for i, segment in enumerate(self.schedule.segments):
            if index < start + segment.duration:
                offset = index - start
                if offset < segment.blend:
                    return i, (offset + 1) / (segment.blend + 1)
                return i, 1.0
            start += segment.duration
        raise IndexError(f"batch {index} is past the end of the schedule ({self.schedule.total_batches} batches)")

    def __iter__(self) -> Iterator[StreamBatch]:
        rng = np.random.default_rng([self.seed, 0])
        for index in range(len(self)):
            segment_id, weight = self.position(index)
            samples = self._draw_batch(rng, segment_id, weight)
            yield StreamBatch(samples=samples, segment_id=segment_id, index=index)

    def learner_batches(self) -> Iterator[Batch]:
        for batch in self:
            yield batch.samples

    @abstractmethod
    def _draw_batch(self, rng: np.random.Generator, segment_id: int, weight: float) -> Batch: ...

    @abstractmethod
    def test_set(self, per_segment: int) -> LabeledSet:
        """Held-out samples from an RNG independent of the stream."""


class QuadrantSphereStream(StreamSource):
    def __init__(self, seed: int, schedule: SegmentSchedule) -> None:
        super().__init__(seed, schedule)
        for i, segment in enumerate(schedule.segments):
            if segment.signs is None or len(segment.signs) != schedule.dim:
                raise ConfigurationError(f"segment {i}: needs {schedule.dim} orthant signs, got {segment.signs}")
            if any(s not in (-1.0, 1.0) for s in segment.signs):
                raise ConfigurationError(f"segment {i}: orthant signs must be +1 or -1, got {segment.signs}")
            if segment.sampling == OrthantSampling.RADIAL and segment.radius <= 1.0 + segment.gap:
                raise ConfigurationError(
                    f"segment {i}: balanced sampling needs a radius above {1.0 + segment.gap}, got {segment.radius}"
                )
            if segment.sampling == OrthantSampling.BOX and segment.gap > 0.0:
                raise ConfigurationError(f"segment {i}: the gap shell only applies to radial sampling")

    def _sample(self, rng: np.random.Generator, segment: Segment, n: int) -> tuple[FloatArray, npt.NDArray[np.int64]]:
        signs = np.asarray(segment.signs, dtype=np.float64)
        dim = self.schedule.dim
        if segment.sampling == OrthantSampling.BOX:
            x = rng.uniform(0.0, segment.radius, size=(n, dim)) * signs
            return x, (np.linalg.norm(x, axis=1) < 1.0).astype(np.int64)

        n_inside = n // 2
        radii: list[float] = []
        inside = outside = 0
        while inside < n_inside or outside < n - n_inside:
            for r in rng.uniform(0.0, segment.radius, size=2 * n):
                if r < 1.0 - segment.gap and inside < n_inside:
                    radii.append(r)
                    inside += 1
                elif r >= 1.0 + segment.gap and outside < n - n_inside:
                    radii.append(r)
                    outside += 1
        directions = np.abs(rng.standard_normal((n, dim)))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        x = directions * np.asarray(radii)[:, np.newaxis] * signs
        y = (np.asarray(radii) < 1.0).astype(np.int64)
        order = rng.permutation(n)
        return x[order], y[order]

    def _draw_batch(self, rng: np.random.Generator, segment_id: int, weight: float) -> Batch:
        segments = self.schedule.segments
        k = self.schedule.batch_size
        if weight >= 1.0:
            x, y = self._sample(rng, segments[segment_id], k)
            return Batch(x=x, y=y)
        from_new = rng.random(k) < weight
        x_new, y_new = self._sample(rng, segments[segment_id], k)
        x_old, y_old = self._sample(rng, segments[segment_id - 1], k)
        return Batch(x=np.where(from_new[:, np.newaxis], x_new, x_old), y=np.where(from_new, y_new, y_old))

    def test_set(self, per_segment: int) -> LabeledSet:
        rng = np.random.default_rng([self.seed, 1])
        xs: list[FloatArray] = []
        ys: list[npt.NDArray[np.int64]] = []
        tags: list[npt.NDArray[np.int64]] = []
        for i, segment in enumerate(self.schedule.segments):
            x, y = self._sample(rng, segment.model_copy(update={"sampling": OrthantSampling.RADIAL}), per_segment)
            xs.append(x)
            ys.append(y)
            tags.append(np.full(per_segment, i, dtype=np.int64))
        return LabeledSet(x=np.concatenate(xs), y=np.concatenate(ys), segment=np.concatenate(tags))


class DriftingGaussianStream(StreamSource):
    def __init__(self, seed: int, schedule: SegmentSchedule) -> None:
        super().__init__(seed, schedule)
        self._means: list[FloatArray] = []
        self._factors: list[FloatArray] = []
        self._priors: list[FloatArray] = []
        num_classes: int | None = None
        for i, segment in enumerate(schedule.segments):
            if segment.means is None:
                raise ConfigurationError(f"segment {i}: class means are required")
            means = np.asarray(segment.means, dtype=np.float64)
            if means.ndim != 2 or means.shape[1] != schedule.dim:
                raise ConfigurationError(f"segment {i}: means must be (classes, {schedule.dim}), got {means.shape}")
            if num_classes is not None and means.shape[0] != num_classes:
                raise ConfigurationError(f"segment {i}: every segment must have {num_classes} classes")
            num_classes = means.shape[0]
            self._means.append(means)
            self._factors.append(self._cholesky(i, segment))
            self._priors.append(_normalized(segment.priors, num_classes, f"segment {i}"))

    def _cholesky(self, i: int, segment: Segment) -> FloatArray:
        dim = self.schedule.dim
        if segment.cov is None:
            return np.eye(dim) * segment.std
        cov = np.asarray(segment.cov, dtype=np.float64)
        if cov.shape != (dim, dim) or not np.allclose(cov, cov.T):
            raise ConfigurationError(f"segment {i}: covariance must be a symmetric {dim}x{dim} matrix")
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise ConfigurationError(f"segment {i}: covariance is not positive definite") from e

    @property
    def num_classes(self) -> int:
        return int(self._means[0].shape[0])

    def _sample(
        self, rng: np.random.Generator, means: FloatArray, factor: FloatArray, priors: FloatArray, n: int
    ) -> tuple[FloatArray, npt.NDArray[np.int64]]:
        labels = rng.choice(len(priors), size=n, p=priors).astype(np.int64)
        noise = rng.standard_normal((n, self.schedule.dim))
        return means[labels] + noise.dot(factor.T), labels

    def _draw_batch(self, rng: np.random.Generator, segment_id: int, weight: float) -> Batch:
        means = self._means[segment_id]
        if weight < 1.0:
            means = (1.0 - weight) * self._means[segment_id - 1] + weight * means
        x, y = self._sample(rng, means, self._factors[segment_id], self._priors[segment_id], self.schedule.batch_size)
        return Batch(x=x, y=y)

    def test_set(self, per_segment: int) -> LabeledSet:
        rng = np.random.default_rng([self.seed, 1])
        xs: list[FloatArray] = []
        ys: list[npt.NDArray[np.int64]] = []
        tags: list[npt.NDArray[np.int64]] = []
        for i in range(len(self.schedule.segments)):
            x, y = self._sample(rng, self._means[i], self._factors[i], self._priors[i], per_segment)
            xs.append(x)
            ys.append(y)
            tags.append(np.full(per_segment, i, dtype=np.int64))
        return LabeledSet(x=np.concatenate(xs), y=np.concatenate(ys), segment=np.concatenate(tags))


class IdentityTrackStream(StreamSource):
    """
    Pairs of tracks of two different identities, turned into triplets.

    Every identity is a Gaussian cluster. Half of a batch's triplets take their anchor and positive
    from the first track and the negative from the second; the other half the other way round.
    Labels are the anchor identities.
    """

    def __init__(self, seed: int, schedule: SegmentSchedule) -> None:
        super().__init__(seed, schedule)
        if schedule.num_identities < 2:
            raise ConfigurationError(f"identity streams need at least 2 identities, got {schedule.num_identities}")
        self._priors: list[FloatArray] = []
        for i, segment in enumerate(schedule.segments):
            ids = segment.identities
            if ids is None or len(set(ids)) < 2 or len(set(ids)) != len(ids):
                raise ConfigurationError(f"segment {i}: needs 2 or more distinct identities, got {ids}")
            if any(not 0 <= identity < schedule.num_identities for identity in ids):
                raise ConfigurationError(f"segment {i}: identities must lie in [0, {schedule.num_identities})")
            self._priors.append(_normalized(segment.priors, len(ids), f"segment {i}"))
        centers_rng = np.random.default_rng([seed, 2])
        self.centers = centers_rng.standard_normal((schedule.num_identities, schedule.dim)) * schedule.cluster_spread

    def _faces(self, rng: np.random.Generator, identity: int, n: int) -> FloatArray:
        noise = rng.standard_normal((n, self.schedule.dim)) * self.schedule.cluster_std
        return self.centers[identity] + noise

    def draw_pair(self, rng: np.random.Generator, segment_id: int) -> tuple[int, int]:
        """Two distinct identities; the second is drawn from the priors renormalized without the first."""
        ids = self.schedule.segments[segment_id].identities or []
        priors = self._priors[segment_id]
        first = int(rng.choice(len(ids), p=priors))
        rest = priors.copy()
        rest[first] = 0.0
        if rest.sum() <= 0.0:
            rest = np.ones(len(ids))
            rest[first] = 0.0
        second = int(rng.choice(len(ids), p=rest / rest.sum()))
        return ids[first], ids[second]

    def _draw_batch(self, rng: np.random.Generator, segment_id: int, weight: float) -> Batch:
        if weight < 1.0 and rng.random() >= weight:
            segment_id -= 1
        first, second = self.draw_pair(rng, segment_id)
        length = self.schedule.track_length
        tracks = {first: self._faces(rng, first, length), second: self._faces(rng, second, length)}
        triplets: list[FloatArray] = []
        labels: list[int] = []
        k = self.schedule.batch_size
        for i in range(k):
            anchor_id, other_id = (first, second) if i < (k + 1) // 2 else (second, first)
            own, other = tracks[anchor_id], tracks[other_id]
            triplets.append(np.stack([own[i % length], own[(i + 1) % length], other[i % length]]))
            labels.append(anchor_id)
        return Batch(x=np.stack(triplets), y=np.asarray(labels, dtype=np.int64))

    def first_segment_of(self) -> dict[int, int]:
        seen: dict[int, int] = {}
        for i, segment in enumerate(self.schedule.segments):
            for identity in segment.identities or []:
                seen.setdefault(identity, i)
        return seen

    def test_set(self, per_segment: int) -> LabeledSet:
        """`per_segment` held-out samples per identity, tagged with the first segment showing it."""
        rng = np.random.default_rng([self.seed, 1])
        xs: list[FloatArray] = []
        ys: list[npt.NDArray[np.int64]] = []
        tags: list[npt.NDArray[np.int64]] = []
        for identity, segment_id in sorted(self.first_segment_of().items()):
            xs.append(self._faces(rng, identity, per_segment))
            ys.append(np.full(per_segment, identity, dtype=np.int64))
            tags.append(np.full(per_segment, segment_id, dtype=np.int64))
        return LabeledSet(x=np.concatenate(xs), y=np.concatenate(ys), segment=np.concatenate(tags))

    def templates(self) -> LabeledSet:
        rng = np.random.default_rng([self.seed, 3])
        xs: list[FloatArray] = []
        ys: list[npt.NDArray[np.int64]] = []
        tags: list[npt.NDArray[np.int64]] = []
        for identity, segment_id in sorted(self.first_segment_of().items()):
            xs.append(self._faces(rng, identity, TEMPLATES_PER_IDENTITY))
            ys.append(np.full(TEMPLATES_PER_IDENTITY, identity, dtype=np.int64))
            tags.append(np.full(TEMPLATES_PER_IDENTITY, segment_id, dtype=np.int64))
        return LabeledSet(x=np.concatenate(xs), y=np.concatenate(ys), segment=np.concatenate(tags))


def quadrant_sphere_stream(seed: int, schedule: SegmentSchedule) -> QuadrantSphereStream:
    return QuadrantSphereStream(seed, schedule)


def drifting_gaussian_stream(seed: int, schedule: SegmentSchedule) -> DriftingGaussianStream:
    return DriftingGaussianStream(seed, schedule)


def identity_track_stream(seed: int, schedule: SegmentSchedule) -> IdentityTrackStream:
    return IdentityTrackStream(seed, schedule)


def build_stream(seed: int, schedule: SegmentSchedule) -> StreamSource:
    if schedule.kind == StreamKind.QUADRANT_SPHERE:
        return quadrant_sphere_stream(seed, schedule)
    elif schedule.kind == StreamKind.DRIFTING_GAUSSIAN:
        return drifting_gaussian_stream(seed, schedule)
    elif schedule.kind == StreamKind.IDENTITY_TRACK:
        return identity_track_stream(seed, schedule)
    raise ConfigurationError(f"Unknown stream kind: {schedule.kind}")


DRIFTING_PRIORS = [[1.0, 1.0, 1.0], [0.6, 0.3, 0.1], [1.0, 1.0, 1.0], [0.2, 0.2, 0.6]]


def drifting_schedule(num_segments: int = 4, duration: int = 200) -> SegmentSchedule:
    """
    Three classes in 4-D, moving to a new region of input space at every segment.

    Region centers sit 4 apart along the first axis. Inside a region every class is a tight cluster
    offset by 3 along one axis, and the axis each class uses rotates by one per segment, so a
    region-agnostic rule that fits one segment misclassifies the next. Class priors cycle through
    balanced and skewed patterns; every fourth segment starting at the third blends in over 10 batches.
    """
    if num_segments < 1:
        raise ConfigurationError(f"a drifting schedule needs at least one segment, got {num_segments}")
    dim, num_classes = 4, 3
    segments: list[Segment] = []
    for s in range(num_segments):
        center = [4.0 * (s - (num_segments - 1) / 2.0), 0.0, 0.0, 0.0]
        means = [
            [c + (3.0 if j == (k + s) % dim else 0.0) for j, c in enumerate(center)] for k in range(num_classes)
        ]
        segments.append(
            Segment(
                duration=duration,
                blend=10 if s % 4 == 2 else 0,
                means=means,
                std=0.4,
                priors=DRIFTING_PRIORS[s % len(DRIFTING_PRIORS)],
            )
        )
    return SegmentSchedule(kind=StreamKind.DRIFTING_GAUSSIAN, dim=dim, segments=segments)


def default_schedule(kind: StreamKind) -> SegmentSchedule:
    """Built-in schedules: two orthants, four drifting segments, three identity segments."""
    if kind == StreamKind.QUADRANT_SPHERE:
        # the empty shell around the sphere gives the classes a margin the learner can settle on
        return SegmentSchedule(
            kind=kind,
            dim=4,
            segments=[
                Segment(duration=250, signs=(1.0, 1.0, 1.0, 1.0), radius=2.0, gap=0.4),
                Segment(duration=250, signs=(-1.0, 1.0, 1.0, 1.0), radius=2.0, gap=0.4),
            ],
        )
    if kind == StreamKind.DRIFTING_GAUSSIAN:
        return drifting_schedule()
    return SegmentSchedule(
        kind=kind,
        dim=8,
        num_identities=8,
        cluster_spread=1.0,
        cluster_std=0.7,
        segments=[
            Segment(duration=80, identities=[0, 1, 2, 3]),
            Segment(duration=80, identities=[3, 4, 5], priors=[0.2, 0.4, 0.4]),
            Segment(duration=80, identities=[5, 6, 7]),
        ],
    )
