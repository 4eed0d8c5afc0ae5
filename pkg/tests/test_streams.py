import numpy as np
import pytest
from pydantic import ValidationError

from ocl.errors import ConfigurationError
from ocl.nn_core import Batch
from ocl.streams import (
    TEMPLATES_PER_IDENTITY,
    DriftingGaussianStream,
    IdentityTrackStream,
    OrthantSampling,
    QuadrantSphereStream,
    Segment,
    SegmentSchedule,
    StreamKind,
    build_stream,
    default_schedule,
    drifting_gaussian_stream,
    drifting_schedule,
    identity_track_stream,
    quadrant_sphere_stream,
)


def binomial_tolerance(p: float, n: int, sigmas: float = 4.0) -> float:
    return sigmas * float(np.sqrt(p * (1.0 - p) / n))


def quadrant_schedule(
    durations: tuple[int, ...] = (5, 5), blend: int = 0, sampling: OrthantSampling = OrthantSampling.RADIAL
) -> SegmentSchedule:
    signs = [(1.0, 1.0, 1.0, 1.0), (-1.0, 1.0, 1.0, 1.0)]
    segments = [
        Segment(duration=d, signs=signs[i % 2], sampling=sampling, blend=blend if i else 0)
        for i, d in enumerate(durations)
    ]
    return SegmentSchedule(kind=StreamKind.QUADRANT_SPHERE, dim=4, segments=segments)


def gaussian_schedule(means: list[list[list[float]]], priors: list[float] | None = None, **kwargs) -> SegmentSchedule:
    segments = [Segment(duration=10, means=m, priors=priors, **kwargs) for m in means]
    return SegmentSchedule(kind=StreamKind.DRIFTING_GAUSSIAN, dim=len(means[0][0]), segments=segments)


def identity_schedule(priors: list[float] | None = None) -> SegmentSchedule:
    return SegmentSchedule(
        kind=StreamKind.IDENTITY_TRACK,
        dim=3,
        num_identities=4,
        batch_size=6,
        segments=[
            Segment(duration=5, identities=[0, 1, 2], priors=priors),
            Segment(duration=5, identities=[2, 3]),
        ],
    )


@pytest.mark.parametrize("kind", list(StreamKind))
def test_same_seed_gives_identical_stream(kind: StreamKind):
    schedule = default_schedule(kind)
    first = list(build_stream(3, schedule))
    second = list(build_stream(3, schedule))
    assert len(first) == schedule.total_batches
    for a, b in zip(first, second):
        assert np.array_equal(a.samples.x, b.samples.x)
        assert np.array_equal(a.samples.y, b.samples.y)
        assert a.segment_id == b.segment_id
    other = next(iter(build_stream(4, schedule)))
    assert not np.array_equal(other.samples.x, first[0].samples.x)


def test_learner_batches_carry_samples_only():
    batches = list(quadrant_sphere_stream(0, quadrant_schedule()).learner_batches())
    assert len(batches) == 10
    assert all(type(batch) is Batch for batch in batches)


def test_sudden_boundary_switches_segment_exactly():
    stream = quadrant_sphere_stream(0, quadrant_schedule((7, 4)))
    ids = [batch.segment_id for batch in stream]
    assert ids == [0] * 7 + [1] * 4
    assert stream.schedule.boundaries == [7]


def test_blend_weights_ramp_up_over_the_blend_length():
    stream = quadrant_sphere_stream(0, quadrant_schedule((5, 6), blend=4))
    weights = [stream.position(i) for i in range(5, 11)]
    assert weights == [(1, 0.2), (1, 0.4), (1, 0.6), (1, 0.8), (1, 1.0), (1, 1.0)]
    with pytest.raises(IndexError):
        stream.position(11)


def test_blend_is_rejected_on_the_first_segment_and_when_too_long():
    bad_first = SegmentSchedule(
        kind=StreamKind.QUADRANT_SPHERE, dim=4, segments=[Segment(duration=5, blend=2, signs=(1.0,) * 4)]
    )
    with pytest.raises(ConfigurationError):
        quadrant_sphere_stream(0, bad_first)
    with pytest.raises(ConfigurationError):
        quadrant_sphere_stream(0, quadrant_schedule((5, 3), blend=4))


@pytest.mark.parametrize(
    ("x", "inside"), [((0.1, 0.1, 0.1, 0.1), True), ((0.9, 0.9, 0.9, 0.9), False)]
)
def test_sphere_label_examples(x: tuple[float, ...], inside: bool):
    assert (float(np.linalg.norm(x)) < 1.0) is inside


def test_radial_sampling_is_balanced_and_stays_in_the_orthant():
    for batch in quadrant_sphere_stream(1, quadrant_schedule((20, 20))):
        x, y = batch.samples.x, batch.samples.y
        assert y.sum() == 5
        assert np.array_equal(y, (np.linalg.norm(x, axis=1) < 1.0).astype(np.int64))
        signs = (1.0, 1.0, 1.0, 1.0) if batch.segment_id == 0 else (-1.0, 1.0, 1.0, 1.0)
        assert np.all(x * np.asarray(signs) >= 0.0)


def test_box_sampling_matches_the_orthant_sphere_volume_fraction():
    schedule = SegmentSchedule(
        kind=StreamKind.QUADRANT_SPHERE,
        dim=4,
        batch_size=1000,
        segments=[Segment(duration=100, signs=(1.0,) * 4, sampling=OrthantSampling.BOX, radius=1.3)],
    )
    labels = np.concatenate([b.samples.y for b in quadrant_sphere_stream(0, schedule)])
    assert labels.size == 100_000
    assert labels.mean() == pytest.approx((np.pi**2 / 32.0) / 1.3**4, abs=0.01)


def test_quadrant_stream_validation():
    with pytest.raises(ConfigurationError):
        quadrant_sphere_stream(
            0, SegmentSchedule(kind=StreamKind.QUADRANT_SPHERE, dim=4, segments=[Segment(duration=1, signs=(1.0,))])
        )
    with pytest.raises(ConfigurationError):
        quadrant_sphere_stream(
            0,
            SegmentSchedule(
                kind=StreamKind.QUADRANT_SPHERE, dim=2, segments=[Segment(duration=1, signs=(1.0, 1.0), radius=1.0)]
            ),
        )


def test_gap_leaves_an_empty_shell_around_the_sphere():
    schedule = SegmentSchedule(
        kind=StreamKind.QUADRANT_SPHERE,
        dim=4,
        batch_size=50,
        segments=[Segment(duration=20, signs=(1.0, -1.0, 1.0, 1.0), radius=2.0, gap=0.4)],
    )
    stream = quadrant_sphere_stream(2, schedule)
    norms = np.concatenate([np.linalg.norm(b.samples.x, axis=1) for b in stream])
    labels = np.concatenate([b.samples.y for b in stream])
    assert np.all((norms < 0.6) | (norms >= 1.4))
    assert np.all(norms < 2.0)
    assert np.array_equal(labels, (norms < 1.0).astype(np.int64))
    assert labels.mean() == 0.5
    test_norms = np.linalg.norm(stream.test_set(200).x, axis=1)
    assert np.all((test_norms < 0.6) | (test_norms >= 1.4))


def test_gap_must_fit_inside_the_radius_and_needs_radial_sampling():
    def schedule(**fields: object) -> SegmentSchedule:
        segment = Segment.model_validate({"duration": 1, "signs": (1.0,) * 4, **fields})
        return SegmentSchedule(kind=StreamKind.QUADRANT_SPHERE, dim=4, segments=[segment])

    with pytest.raises(ConfigurationError):
        quadrant_sphere_stream(0, schedule(radius=1.3, gap=0.4))
    with pytest.raises(ConfigurationError):
        quadrant_sphere_stream(0, schedule(radius=2.0, gap=0.4, sampling=OrthantSampling.BOX))
    with pytest.raises(ValidationError):
        Segment(duration=1, signs=(1.0,) * 4, gap=1.0)


def test_drifting_schedule_moves_regions_and_rotates_class_axes():
    schedule = drifting_schedule(num_segments=8, duration=30)
    assert schedule.total_batches == 240
    assert [s.blend for s in schedule.segments] == [0, 0, 10, 0, 0, 0, 10, 0]
    centers = [float(np.min(np.asarray(s.means)[:, 0])) for s in schedule.segments]
    assert np.diff(centers) == pytest.approx([4.0] * 7)
    for s, segment in enumerate(schedule.segments):
        offsets = np.asarray(segment.means) - np.asarray(segment.means).min(axis=0)
        assert [int(np.argmax(row)) for row in offsets] == [(k + s) % 4 for k in range(3)]
    with pytest.raises(ConfigurationError):
        drifting_schedule(num_segments=0)


def test_default_drifting_schedule_has_four_segments():
    schedule = default_schedule(StreamKind.DRIFTING_GAUSSIAN)
    assert schedule == drifting_schedule()
    assert len(schedule.segments) == 4
    assert build_stream(0, schedule).num_classes == 3


def test_quadrant_test_set_is_tagged_per_segment():
    testset = quadrant_sphere_stream(0, quadrant_schedule()).test_set(40)
    assert len(testset) == 80
    assert np.array_equal(np.bincount(testset.segment), [40, 40])
    assert testset.y.mean() == pytest.approx(0.5)


def test_gaussian_priors_are_respected():
    priors = [0.6, 0.3, 0.1]
    means = [[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]]
    schedule = gaussian_schedule(means, priors=priors).model_copy(update={"batch_size": 1000})
    labels = np.concatenate([b.samples.y for b in drifting_gaussian_stream(0, schedule)])
    frequencies = np.bincount(labels, minlength=3) / labels.size
    for frequency, p in zip(frequencies, priors):
        assert frequency == pytest.approx(p, abs=binomial_tolerance(p, labels.size))


def test_gaussian_identical_means_are_indistinguishable():
    stream = drifting_gaussian_stream(0, gaussian_schedule([[[1.0, 1.0], [1.0, 1.0]]]))
    x = np.concatenate([b.samples.x for b in stream])
    y = np.concatenate([b.samples.y for b in stream])
    assert x[y == 0].mean(axis=0) == pytest.approx(x[y == 1].mean(axis=0), abs=1.0)


def test_gaussian_well_separated_classes_are_linearly_separable():
    # classify by the perpendicular bisector of the two means
    testset = stream.test_set(500)
    # the probe is the perpendicular bisector of the two means
    predictions = (testset.x[:, 0] > 0.0).astype(np.int64)
    assert (predictions == testset.y).mean() >= 0.99


def test_gaussian_blend_interpolates_the_means():
    schedule = SegmentSchedule(
        kind=StreamKind.DRIFTING_GAUSSIAN,
        dim=1,
        batch_size=2000,
        segments=[
            Segment(duration=1, means=[[0.0]], std=0.1),
            Segment(duration=4, blend=3, means=[[8.0]], std=0.1),
        ],
    )
    centers = [float(b.samples.x.mean()) for b in drifting_gaussian_stream(0, schedule)]
    assert centers == pytest.approx([0.0, 2.0, 4.0, 6.0, 8.0], abs=0.05)


def test_gaussian_covariance_must_be_positive_definite():
    with pytest.raises(ConfigurationError):
        drifting_gaussian_stream(0, gaussian_schedule([[[0.0, 0.0], [1.0, 1.0]]], cov=[[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ConfigurationError):
        drifting_gaussian_stream(0, gaussian_schedule([[[0.0, 0.0], [1.0, 1.0]]], cov=[[1.0, 0.5], [0.0, 1.0]]))


def test_gaussian_segments_must_agree_on_classes():
    with pytest.raises(ConfigurationError):
        drifting_gaussian_stream(0, gaussian_schedule([[[0.0], [1.0]], [[0.0], [1.0], [2.0]]]))
    with pytest.raises(ConfigurationError):
        drifting_gaussian_stream(0, gaussian_schedule([[[0.0], [1.0]]], priors=[1.0, -1.0]))


def test_identity_pairs_are_always_distinct():
    stream = identity_track_stream(0, identity_schedule())
    rng = np.random.default_rng(0)
    for _ in range(1000):
        first, second = stream.draw_pair(rng, 0)
        assert first != second
        assert {first, second} <= {0, 1, 2}


def test_identity_frequencies_follow_the_priors():
    priors = [0.5, 0.3, 0.2]
    stream = identity_track_stream(0, identity_schedule(priors))
    rng = np.random.default_rng(1)
    n = 10_000
    firsts = np.array([stream.draw_pair(rng, 0)[0] for _ in range(n)])
    for identity, p in enumerate(priors):
        assert (firsts == identity).mean() == pytest.approx(p, abs=binomial_tolerance(p, n))


def test_identity_batches_are_triplets_of_two_tracks():
    stream = identity_track_stream(0, identity_schedule())
    for batch in stream:
        x, y = batch.samples.x, batch.samples.y
        assert x.shape == (6, 3, 3)
        assert len(set(y.tolist())) == 2
        assert np.all(y[:3] == y[0]) and np.all(y[3:] == y[3])
        # the second half takes its negatives from the first half's track
        assert np.array_equal(x[3, 2], x[2, 1])


def test_identity_templates_are_held_out():
    stream = identity_track_stream(0, identity_schedule())
    templates = stream.templates()
    assert np.array_equal(np.bincount(templates.y), [TEMPLATES_PER_IDENTITY] * 4)
    streamed = {tuple(row) for b in stream for row in b.samples.x.reshape(-1, 3)}
    testset = {tuple(row) for row in stream.test_set(10).x}
    template_rows = {tuple(row) for row in templates.x}
    assert not template_rows & streamed
    assert not template_rows & testset
    assert stream.first_segment_of() == {0: 0, 1: 0, 2: 0, 3: 1}


def test_identity_segments_need_two_identities():
    schedule = SegmentSchedule(
        kind=StreamKind.IDENTITY_TRACK, dim=2, num_identities=3, segments=[Segment(duration=1, identities=[1])]
    )
    with pytest.raises(ConfigurationError):
        identity_track_stream(0, schedule)
    with pytest.raises(ConfigurationError):
        identity_track_stream(0, schedule.model_copy(update={"segments": [Segment(duration=1, identities=[0, 5])]}))


def test_build_stream_dispatches_on_kind():
    assert isinstance(build_stream(0, default_schedule(StreamKind.QUADRANT_SPHERE)), QuadrantSphereStream)
    assert isinstance(build_stream(0, default_schedule(StreamKind.DRIFTING_GAUSSIAN)), DriftingGaussianStream)
    assert isinstance(build_stream(0, default_schedule(StreamKind.IDENTITY_TRACK)), IdentityTrackStream)
