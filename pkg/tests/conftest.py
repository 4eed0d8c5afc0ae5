from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest

from ocl.config import set_config
from ocl.nn_core import Model, from_layers

QUADRANT_SCHEDULE = """\
STREAM=quadrant_sphere
DIM=4
BATCH_SIZE=10
SEGMENTS=2
SEGMENT_0_DURATION=20
SEGMENT_0_SIGNS=1,1,1,1
SEGMENT_1_DURATION=20
SEGMENT_1_SIGNS=-1,1,1,1
"""


@pytest.fixture(autouse=True)
def reset_config() -> Iterator[None]:
    set_config(None)
    yield
    set_config(None)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def logit_model() -> Model:
    """Linear 2 -> 2 identity map: the logits are the inputs."""
    return from_layers([(np.eye(2), np.zeros(2))])


@pytest.fixture
def quadrant_schedule_file(tmp_path: Path) -> Path:
    path = tmp_path / "quadrant.schedule"
    path.write_text(QUADRANT_SCHEDULE, encoding="utf-8")
    return path
