import logging

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from ocl.errors import ConfigurationError, RejectedInputError
from ocl.nn_core import Model, forward
from ocl.streams import LabeledSet

logger = logging.getLogger(__name__)


class Scores(BaseModel):
    """Accuracies of one evaluation pass."""

    total: float = Field(..., ge=0.0, le=1.0)
    weighted: float = Field(..., ge=0.0, le=1.0, description="Unweighted mean of the per-class accuracies")
    per_class: dict[int, float]
    per_segment: dict[int, float]
    missing_classes: list[int] = Field(default_factory=list, description="Expected classes absent from the test set")

    model_config = ConfigDict(frozen=True)


def _score(
    predictions: npt.NDArray[np.int64], testset: LabeledSet, expected_classes: list[int] | None = None
) -> Scores:
    correct = predictions == testset.y
    classes = sorted(set(int(c) for c in np.unique(testset.y)) | set(expected_classes or []))
    per_class: dict[int, float] = {}
    missing: list[int] = []
    for label in classes:
        mask = testset.y == label
        if not mask.any():
            missing.append(label)
            continue
        per_class[label] = float(correct[mask].mean())
    if missing:
        logger.warning(f"classes {missing} have no test samples and are left out of the weighted accuracy")
    per_segment = {int(s): float(correct[testset.segment == s].mean()) for s in np.unique(testset.segment)}
    return Scores(
        total=float(correct.mean()),
        weighted=float(np.mean(list(per_class.values()))),
        per_class=per_class,
        per_segment=per_segment,
        missing_classes=missing,
    )


def evaluate_classifier(model: Model, testset: LabeledSet, num_classes: int | None = None) -> Scores:
    """
    Argmax accuracy of a classifier, overall, per class, and per segment.

    Args:
        model: network producing one logit per class
        testset: held-out samples tagged by segment
        num_classes: classes expected in the test set; defaults to the model's output size
    """
    if len(testset) == 0:
        raise RejectedInputError("evaluation needs a nonempty test set")
    predictions = np.argmax(forward(model, testset.x), axis=1).astype(np.int64)
    expected = list(range(num_classes if num_classes is not None else model.output_dim))
    return _score(predictions, testset, expected)


def evaluate_templates(model: Model, templates: LabeledSet, testset: LabeledSet, seed: int = 0) -> Scores:
    """
    Nearest-template identification in embedding space.

    Every test sample gets the identity of the closest template (Euclidean distance between
    embeddings, 1-NN over all templates). Exact ties are broken at random with a seeded generator.
    """
    if len(testset) == 0:
        raise RejectedInputError("evaluation needs a nonempty test set")
    identities = np.unique(templates.y)
    if identities.size < 2:
        raise ConfigurationError(f"template evaluation needs at least 2 identities, got {identities.tolist()}")
    untemplated = sorted(set(np.unique(testset.y).tolist()) - set(identities.tolist()))
    if untemplated:
        raise ConfigurationError(f"identities {untemplated} have test samples but no templates")

    reference = forward(model, templates.x)
    queries = forward(model, testset.x)
    distances = ((queries[:, np.newaxis, :] - reference[np.newaxis, :, :]) ** 2).sum(axis=2)
    rng = np.random.default_rng(seed)
    predictions = np.empty(len(testset), dtype=np.int64)
    for i, row in enumerate(distances):
        nearest = np.flatnonzero(row == row.min())
        pick = nearest[0] if nearest.size == 1 else rng.choice(nearest)
        predictions[i] = templates.y[pick]
    return _score(predictions, testset)


def update_best(best: dict[int, float], current: dict[int, float]) -> dict[int, float]:
    """Running per-segment maximum of accuracy."""
    merged = dict(best)
    for segment, accuracy in current.items():
        merged[segment] = max(merged.get(segment, accuracy), accuracy)
    return merged


def forgetting(best: dict[int, float], current: dict[int, float]) -> dict[int, float]:
    """Per segment: best accuracy seen so far minus current accuracy (never negative)."""
    return {segment: max(best.get(segment, accuracy), accuracy) - accuracy for segment, accuracy in current.items()}
