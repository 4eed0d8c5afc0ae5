"""
OCL - Online Continual Learner - Experiment Harness

Runs the online learner and its baselines over a scheduled stream, evaluates on held-out data at a
fixed cadence and at every (hidden) segment boundary, and writes the metrics as CSV.

Variants:
    online-no-buffer   plain online SGD on the recent batch
    online-baseline    recent batch plus the hard buffer
    online-continual   recent batch, hard buffer, plateau-triggered importance weights
    online-joint       online-baseline rule on one shuffled pass of the recorded stream
    offline-joint      online-baseline rule on several reshuffled passes
"""

import csv
import logging
from collections.abc import Callable, Iterable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from enum import StrEnum
from pathlib import Path
from typing import Any, Self

import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ocl.errors import ConfigurationError, EmptySampleSetError, StreamFaultError
from ocl.evaluation import Scores, evaluate_classifier, evaluate_templates, forgetting, update_best
from ocl.hard_buffer import HardBuffer, update_buffer
from ocl.mas import ImportanceState, OmegaMode, consolidate, init_importance, penalty_grad
from ocl.nn_core import Batch, FloatArray, LossKind, LossSpec, Model, init_model, loss_and_grad, sgd_step
from ocl.profiles import ProfileName, get_profile
from ocl.recording import replay_stream, threaded_batches
from ocl.schedule_file import load_schedule
from ocl.stability import (
    ControllerState,
    check_peak,
    init_controller,
    on_consolidated,
    record_loss,
    should_consolidate,
)
from ocl.streams import (
    DriftingGaussianStream,
    IdentityTrackStream,
    LabeledSet,
    SegmentSchedule,
    StreamBatch,
    StreamKind,
    StreamSource,
    build_stream,
    default_schedule,
)

logger = logging.getLogger(__name__)


class Variant(StrEnum):
    ONLINE_NO_BUFFER = "online-no-buffer"
    ONLINE_BASELINE = "online-baseline"
    ONLINE_CONTINUAL = "online-continual"
    ONLINE_JOINT = "online-joint"
    OFFLINE_JOINT = "offline-joint"

    @property
    def is_joint(self) -> bool:
        return self in (Variant.ONLINE_JOINT, Variant.OFFLINE_JOINT)


class RunConfig(BaseModel):
    """One run. Hyperparameters left as None fall back to the profile defaults."""

    variant: Variant = Variant.ONLINE_CONTINUAL
    profile: ProfileName = ProfileName.SMALL
    seed: int = 0
    stream: StreamKind | None = Field(None, description="Built-in schedule to use; defaults to the profile's stream")
    schedule_file: Path | None = Field(None, description="Key-value schedule file, overrides `stream`")
    recording: Path | None = Field(None, description="Recorded stream to train on instead of the live stream")

    lr: float | None = Field(None, gt=0.0)
    lam: float | None = Field(None, ge=0.0)
    buffer_capacity: int | None = Field(None, gt=0)
    window_length: int | None = Field(None, gt=0)
    delta_mu: float | None = Field(None, gt=0.0)
    delta_sigma: float | None = Field(None, gt=0.0)
    inner_steps: int | None = Field(None, gt=0)
    hidden_sizes: tuple[int, ...] | None = None
    omega_mode: OmegaMode = OmegaMode.CUMULATIVE_AVERAGE
    normalize_buffer: bool = False

    epochs: int = Field(5, gt=0, description="Passes over the shuffled data for offline-joint")
    eval_every: int = Field(50, gt=0, description="Evaluation cadence in stream batches")
    test_per_segment: int = Field(200, gt=0, description="Held-out samples per segment (per identity)")
    prefetch: int = Field(0, ge=0, description="Queue size of the threaded stream handoff; 0 = same thread")
    trace_params: bool = False

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("hidden_sizes", mode="before")
    @classmethod
    def _split_sizes(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(int(v) for v in value.split(",") if v.strip())
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> Self:
        if self.variant == Variant.ONLINE_NO_BUFFER and self.normalize_buffer:
            raise ValueError("online-no-buffer has no buffer to normalize")
        if self.variant != Variant.ONLINE_CONTINUAL and self.omega_mode != OmegaMode.CUMULATIVE_AVERAGE:
            raise ValueError(f"omega_mode only applies to online-continual, not {self.variant}")
        return self


class Hyperparameters(BaseModel):
    """RunConfig resolved against its profile and variant."""

    lr: float
    lam: float
    buffer_capacity: int
    window_length: int
    delta_mu: float
    delta_sigma: float
    inner_steps: int
    hidden_sizes: tuple[int, ...]
    embedding_dim: int
    margin: float
    regularize: bool

    model_config = ConfigDict(frozen=True)


def resolve(config: RunConfig) -> Hyperparameters:
    profile = get_profile(config.profile)
    no_buffer = config.variant == Variant.ONLINE_NO_BUFFER

    def pick(value: Any, default: Any) -> Any:
        return default if value is None else value

    return Hyperparameters(
        lr=pick(config.lr, profile.lr),
        lam=pick(config.lam, profile.lam),
        buffer_capacity=0 if no_buffer else pick(config.buffer_capacity, profile.buffer_capacity),
        window_length=pick(config.window_length, profile.window_length),
        delta_mu=pick(config.delta_mu, profile.delta_mu),
        delta_sigma=pick(config.delta_sigma, profile.delta_sigma),
        inner_steps=pick(config.inner_steps, profile.inner_steps),
        hidden_sizes=pick(config.hidden_sizes, profile.hidden_sizes),
        embedding_dim=profile.embedding_dim,
        margin=profile.margin,
        regularize=config.variant == Variant.ONLINE_CONTINUAL,
    )


def load_run_config(path: Path | None = None, **overrides: Any) -> RunConfig:
    """
    Build a RunConfig from an optional key-value file plus overrides.

    Keys in the file are RunConfig field names. Overrides that are None are ignored, so CLI
    flags left unset do not shadow file values.
    """
    values: dict[str, Any] = {}
    if path is not None:
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        values.update({key.lower(): value for key, value in dotenv_values(path).items() if value is not None})
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid run configuration: {e}") from e


class EvalRecord(BaseModel):
    step: int = Field(..., ge=0, description="Stream batches learned from so far")
    segment_accuracy: dict[int, float]
    total: float = Field(..., ge=0.0, le=1.0)
    weighted: float = Field(..., ge=0.0, le=1.0)
    forgetting: dict[int, float]
    consolidated: bool = Field(..., description="A consolidation fired since the previous record")
    window_mean: float
    window_std: float
    buffer_classes: dict[int, int] = Field(default_factory=dict)
    omega_updates: int = 0

    model_config = ConfigDict(frozen=True)


class ConsolidationEvent(BaseModel):
    step: int
    window_mean: float
    window_std: float
    update_count: int

    model_config = ConfigDict(frozen=True)


class PeakEvent(BaseModel):
    step: int
    window_mean: float

    model_config = ConfigDict(frozen=True)


class MetricsLog(BaseModel):
    variant: Variant
    seed: int
    num_segments: int = Field(..., gt=0)
    records: list[EvalRecord] = Field(default_factory=list)
    consolidations: list[ConsolidationEvent] = Field(default_factory=list)
    peaks: list[PeakEvent] = Field(default_factory=list)
    visits: dict[int, int] = Field(default_factory=dict, description="Times each stream batch was learned from")
    param_trace: list[FloatArray] = Field(default_factory=list)
    final_params: FloatArray | None = None
    aborted: str | None = None

    model_config = ConfigDict(arbitrary_types_allowed=True)


class _Learner:
    """Mutable training state of one run: the network, the buffer, the controller and Omega."""

    def __init__(
        self, model: Model, spec: LossSpec, hp: Hyperparameters, omega_mode: OmegaMode, normalize_buffer: bool
    ) -> None:
        self.model = model
        self.spec = spec
        self.hp = hp
        self.buffer: HardBuffer | None = None
        if hp.buffer_capacity > 0:
            self.buffer = HardBuffer(capacity=hp.buffer_capacity, normalize_classes=normalize_buffer)
        self.controller: ControllerState = init_controller(hp.window_length, hp.delta_mu, hp.delta_sigma)
        self.importance: ImportanceState | None = init_importance(model, hp.lam, omega_mode) if hp.regularize else None
        self.consolidated_since_eval = False

    def learn(self, batch: Batch, step: int, log: MetricsLog) -> None:
        """One stream step: N gradient steps, plateau bookkeeping, then the buffer update."""
        buffered = self.buffer.samples if self.buffer is not None else None
        for n in range(self.hp.inner_steps):
            data_loss, grad = loss_and_grad(self.model, batch, self.spec)
            buffer_loss = 0.0
            if buffered is not None:
                buffer_loss, buffer_grad = loss_and_grad(self.model, buffered, self.spec)
                grad = grad + buffer_grad
            if not np.isfinite(data_loss + buffer_loss) or not np.all(np.isfinite(grad)):
                raise StreamFaultError(f"non-finite loss at step {step} (recent {data_loss}, buffer {buffer_loss})")
            if self.importance is not None:
                grad = grad + penalty_grad(self.importance, self.model)
            self.model = sgd_step(self.model, grad, self.hp.lr)
            if n == 0:
                self.controller = record_loss(self.controller, data_loss + buffer_loss)

        if self.importance is not None:
            self._maybe_consolidate(step, log)

        if self.buffer is not None:
            self.buffer = update_buffer(self.buffer, self.model, batch, self.spec)

    def _maybe_consolidate(self, step: int, log: MetricsLog) -> None:
        assert self.importance is not None
        if should_consolidate(self.controller):
            window = self.controller.window
            stored = self.buffer.samples if self.buffer is not None else None
            samples = stored.x if stored is not None else np.zeros((0, self.model.input_dim))
            try:
                self.importance = consolidate(self.importance, self.model, samples)
            except EmptySampleSetError as e:
                logger.warning(f"step {step}: plateau detected but consolidation skipped ({e})")
            else:
                event = ConsolidationEvent(
                    step=step, window_mean=window.mean, window_std=window.std, update_count=self.importance.update_count
                )
                log.consolidations.append(event)
                self.consolidated_since_eval = True
                self.controller = on_consolidated(self.controller)
                logger.info(
                    f"consolidation at step {step}: window mean={window.mean:.4f} std={window.std:.4f}, "
                    f"omega update #{event.update_count}"
                )

        was_disarmed = self.controller.plateau_flag
        self.controller = check_peak(self.controller)
        if was_disarmed and not self.controller.plateau_flag:
            log.peaks.append(PeakEvent(step=step, window_mean=self.controller.window.mean))
            logger.info(f"peak at step {step}: window mean={self.controller.window.mean:.4f}, detection re-armed")


def resolve_schedule(config: RunConfig) -> SegmentSchedule:
    if config.schedule_file is not None:
        return load_schedule(config.schedule_file)
    return default_schedule(config.stream or get_profile(config.profile).stream)


def _build_model(config: RunConfig, hp: Hyperparameters, source: StreamSource) -> tuple[Model, LossSpec]:
    if isinstance(source, IdentityTrackStream):
        spec = LossSpec(kind=LossKind.TRIPLET_MARGIN, margin=hp.margin)
        output_dim = hp.embedding_dim
    else:
        spec = LossSpec(kind=LossKind.CROSS_ENTROPY)
        output_dim = source.num_classes if isinstance(source, DriftingGaussianStream) else 2
    sizes = (source.schedule.dim, *hp.hidden_sizes, output_dim)
    return init_model(sizes, config.seed), spec


def _evaluator(
    source: StreamSource, model_spec: LossSpec, config: RunConfig, num_classes: int
) -> Callable[[Model], Scores]:
    testset: LabeledSet = source.test_set(config.test_per_segment)
    if model_spec.kind == LossKind.TRIPLET_MARGIN:
        assert isinstance(source, IdentityTrackStream)
        templates = source.templates()
        return lambda model: evaluate_templates(model, templates, testset, seed=config.seed)
    return lambda model: evaluate_classifier(model, testset, num_classes)


def _joint_batches(batches: list[StreamBatch], batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """Pool every sample of the recorded stream, shuffle, and re-chunk into batches of the stream's size."""
    pooled = Batch.concat([b.samples for b in batches])
    order = rng.permutation(len(pooled))
    for start in range(0, len(pooled), batch_size):
        yield pooled.subset(order[start : start + batch_size])


def train_online(config: RunConfig) -> MetricsLog:
    """
    Run one variant over the stream and return its metrics.

    Raises:
        ConfigurationError: If the configuration cannot be resolved; nothing is trained then.
    """
    hp = resolve(config)
    schedule = resolve_schedule(config)
    source = build_stream(config.seed, schedule)
    model, spec = _build_model(config, hp, source)
    evaluate = _evaluator(source, spec, config, model.output_dim)
    boundaries = set(schedule.boundaries)

    learner = _Learner(model, spec, hp, config.omega_mode, config.normalize_buffer)
    log = MetricsLog(variant=config.variant, seed=config.seed, num_segments=len(schedule.segments))
    best: dict[int, float] = {}

    def record(step: int) -> None:
        nonlocal best
        scores: Scores = evaluate(learner.model)
        best = update_best(best, scores.per_segment)
        window = learner.controller.window
        log.records.append(
            EvalRecord(
                step=step,
                segment_accuracy=scores.per_segment,
                total=scores.total,
                weighted=scores.weighted,
                forgetting=forgetting(best, scores.per_segment),
                consolidated=learner.consolidated_since_eval,
                window_mean=window.mean,
                window_std=window.std,
                buffer_classes=learner.buffer.class_counts() if learner.buffer is not None else {},
                omega_updates=learner.importance.update_count if learner.importance is not None else 0,
            )
        )
        learner.consolidated_since_eval = False
        logger.debug(f"eval at step {step}: total={scores.total:.3f} weighted={scores.weighted:.3f}")

    logger.info(f"starting {config.variant} run (profile {config.profile}, seed {config.seed}, {len(source)} batches)")
    stream: Iterable[StreamBatch] = replay_stream(config.recording) if config.recording is not None else source
    record(0)
    try:
        if config.variant.is_joint:
            recorded = list(stream)
            epochs = config.epochs if config.variant == Variant.OFFLINE_JOINT else 1
            shuffle_rng = np.random.default_rng([config.seed, 4])
            step = 0
            for _ in range(epochs):
                for batch in _joint_batches(recorded, schedule.batch_size, shuffle_rng):
                    learner.learn(batch, step, log)
                    step += 1
                    if config.trace_params:
                        log.param_trace.append(learner.model.params.copy())
                    if step % config.eval_every == 0:
                        record(step)
                for b in recorded:
                    log.visits[b.index] = log.visits.get(b.index, 0) + 1
            if not log.records or log.records[-1].step != step:
                record(step)
        else:
            if config.prefetch > 0:
                stream = threaded_batches(stream, maxsize=config.prefetch)
            step = 0
            for batch in stream:
                learner.learn(batch.samples, batch.index, log)
                log.visits[batch.index] = log.visits.get(batch.index, 0) + 1
                step += 1
                if config.trace_params:
                    log.param_trace.append(learner.model.params.copy())
                if step % config.eval_every == 0 or step in boundaries:
                    record(step)
            if log.records[-1].step != step:
                record(step)
    except StreamFaultError as e:
        log.aborted = str(e)
        logger.error(f"run aborted: {e}")

    log.final_params = learner.model.params.copy()
    logger.info(
        f"finished {config.variant} run: {len(log.consolidations)} consolidations, "
        f"final total accuracy {log.records[-1].total:.3f}"
    )
    return log


def sweep(configs: Sequence[RunConfig], workers: int = 1) -> list[MetricsLog]:
    """Run independent configs, in parallel processes when workers > 1. Results keep the input order."""
    if workers <= 1 or len(configs) <= 1:
        return [train_online(config) for config in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(train_online, configs))


def csv_header(num_segments: int) -> list[str]:
    segments = range(num_segments)
    return [
        "step",
        "variant",
        "seed",
        *(f"acc_seg_{s}" for s in segments),
        "total",
        "weighted",
        *(f"forgetting_seg_{s}" for s in segments),
        "consolidated",
        "window_mean",
        "window_std",
    ]


def _rows(log: MetricsLog) -> Iterator[dict[str, Any]]:
    for record in log.records:
        row: dict[str, Any] = {"step": record.step, "variant": log.variant.value, "seed": log.seed}
        for s in range(log.num_segments):
            row[f"acc_seg_{s}"] = record.segment_accuracy.get(s, float("nan"))
            row[f"forgetting_seg_{s}"] = record.forgetting.get(s, float("nan"))
        row.update(
            total=record.total,
            weighted=record.weighted,
            consolidated=int(record.consolidated),
            window_mean=record.window_mean,
            window_std=record.window_std,
        )
        yield row


def export_csv(logs: MetricsLog | Sequence[MetricsLog], path: Path) -> Path:
    """Write one row per evaluation point; several logs must share the segment count."""
    all_logs = [logs] if isinstance(logs, MetricsLog) else list(logs)
    if not all_logs or not any(log.records for log in all_logs):
        raise ConfigurationError("nothing to export: the metrics log is empty")
    num_segments = {log.num_segments for log in all_logs}
    if len(num_segments) != 1:
        raise ConfigurationError(f"logs disagree on the number of segments: {sorted(num_segments)}")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=csv_header(num_segments.pop()), lineterminator="\n")
        writer.writeheader()
        for log in all_logs:
            writer.writerows(_rows(log))
    logger.info(f"wrote metrics to {path}")
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


class SummaryRow(BaseModel):
    variant: str
    seed: str
    final_total: float
    final_weighted: float
    mean_forgetting: float = Field(..., description="Mean final forgetting over all segments but the last")


def summarize(rows: list[dict[str, str]]) -> list[SummaryRow]:
    """Final evaluation point of every (variant, seed) in a metrics CSV."""
    if not rows:
        raise ConfigurationError("metrics CSV holds no rows")
    forgetting_cols = [c for c in rows[0] if c.startswith("forgetting_seg_")]
    forgetting_cols.sort(key=lambda c: int(c.rsplit("_", 1)[1]))
    earlier = forgetting_cols[:-1] or forgetting_cols
    finals: dict[tuple[str, str], dict[str, str]] = {}
    for row in rows:
        key = (row["variant"], row["seed"])
        if key not in finals or int(row["step"]) >= int(finals[key]["step"]):
            finals[key] = row
    return [
        SummaryRow(
            variant=variant,
            seed=seed,
            final_total=float(row["total"]),
            final_weighted=float(row["weighted"]),
            mean_forgetting=float(np.mean([float(row[c]) for c in earlier])),
        )
        for (variant, seed), row in finals.items()
    ]


def format_report(summary: list[SummaryRow]) -> str:
    lines = [f"{'variant':<18} {'seed':>6} {'total':>8} {'weighted':>9} {'forgetting':>11}"]
    for row in summary:
        lines.append(
            f"{row.variant:<18} {row.seed:>6} {row.final_total:>8.4f} {row.final_weighted:>9.4f} "
            f"{row.mean_forgetting:>11.4f}"
        )
    variants = dict.fromkeys(row.variant for row in summary)
    for variant in variants:
        group = [row for row in summary if row.variant == variant]
        lines.append(
            f"{variant:<18} {'mean':>6} {np.mean([r.final_total for r in group]):>8.4f} "
            f"{np.mean([r.final_weighted for r in group]):>9.4f} {np.mean([r.mean_forgetting for r in group]):>11.4f}"
        )
    return "\n".join(lines)
