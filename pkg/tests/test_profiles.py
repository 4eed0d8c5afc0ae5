import pytest

from ocl.errors import ConfigurationError
from ocl.profiles import ProfileName, get_profile, get_profiles
from ocl.streams import StreamKind


def test_every_profile_is_listed():
    assert get_profiles() == ["embedding", "classification", "small"]


@pytest.mark.parametrize(
    ("name", "stream", "buffer_capacity", "inner_steps"),
    [
        (ProfileName.EMBEDDING, StreamKind.IDENTITY_TRACK, 100, 10),
        (ProfileName.CLASSIFICATION, StreamKind.DRIFTING_GAUSSIAN, 40, 5),
        (ProfileName.SMALL, StreamKind.QUADRANT_SPHERE, 30, 5),
    ],
)
def test_profile_defaults(name: ProfileName, stream: StreamKind, buffer_capacity: int, inner_steps: int):
    profile = get_profile(name)
    assert profile.stream == stream
    assert profile.buffer_capacity == buffer_capacity
    assert profile.inner_steps == inner_steps
    assert profile.window_length == 5


def test_profiles_can_be_looked_up_by_string():
    assert get_profile("embedding").lam == 100.0
    assert get_profile("small").delta_sigma == 0.02


def test_unknown_profile_lists_the_alternatives():
    with pytest.raises(ConfigurationError, match="Available profiles"):
        get_profile("huge")
