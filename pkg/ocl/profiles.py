from enum import StrEnum
from typing import List

from pydantic import BaseModel, ConfigDict, Field

from ocl.errors import ConfigurationError
from ocl.streams import StreamKind


class ProfileName(StrEnum):
    EMBEDDING = "embedding"
    CLASSIFICATION = "classification"
    SMALL = "small"


class ProfileProperties(BaseModel):
    """Default hyperparameters of one experiment profile."""

    name: ProfileName = Field(..., description="Profile identifier")
    stream: StreamKind = Field(..., description="Stream the profile is meant for")
    lr: float = Field(..., gt=0.0, description="SGD learning rate")
    lam: float = Field(..., ge=0.0, description="Importance penalty weight")
    buffer_capacity: int = Field(..., gt=0, description="Hard buffer size")
    window_length: int = Field(..., gt=0, description="Loss window length")
    delta_mu: float = Field(..., gt=0.0, description="Plateau threshold on the window mean")
    delta_sigma: float = Field(..., gt=0.0, description="Plateau threshold on the window std")
    inner_steps: int = Field(..., gt=0, description="Gradient steps per incoming batch")
    hidden_sizes: tuple[int, ...] = Field(..., description="Hidden layer widths")
    embedding_dim: int = Field(16, gt=0, description="Output size when the loss is the triplet margin")
    margin: float = Field(1.0, gt=0.0, description="Triplet margin")

    model_config = ConfigDict(frozen=True)


PROFILES: List[ProfileProperties] = [
    # face-identification analog: triplets over identity tracks
    ProfileProperties(
        name=ProfileName.EMBEDDING,
        stream=StreamKind.IDENTITY_TRACK,
        lr=0.0001,
        lam=100.0,
        buffer_capacity=100,
        window_length=5,
        delta_mu=0.3,
        delta_sigma=0.1,
        inner_steps=10,
        hidden_sizes=(64,),
    ),
    # corridor-navigation analog: imbalanced classes drifting across segments
    ProfileProperties(
        name=ProfileName.CLASSIFICATION,
        stream=StreamKind.DRIFTING_GAUSSIAN,
        lr=0.01,
        lam=0.5,
        buffer_capacity=40,
        window_length=5,
        delta_mu=0.5,
        delta_sigma=0.1,
        inner_steps=5,
        hidden_sizes=(32,),
    ),
    ProfileProperties(
        name=ProfileName.SMALL,
        stream=StreamKind.QUADRANT_SPHERE,
        lr=0.01,
        lam=0.5,
        buffer_capacity=30,
        window_length=5,
        delta_mu=0.5,
        delta_sigma=0.02,
        inner_steps=5,
        hidden_sizes=(32,),
    ),
]


def get_profile(name: ProfileName | str) -> ProfileProperties:
    """
    Get the default hyperparameters of a profile.

    Raises:
        ConfigurationError: If no profile has that name
    """
    for profile in PROFILES:
        if profile.name == name:
            return profile

    raise ConfigurationError(f"Unknown profile '{name}'. Available profiles: {get_profiles()}")


def get_profiles() -> List[str]:
    return [profile.name.value for profile in PROFILES]
