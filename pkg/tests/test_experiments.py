"""
Multi-seed replications of the synthetic experiments. Slow, deselected by default:

    poetry run pytest -m experiment
"""

from pathlib import Path

import numpy as np
import pytest

from ocl.harness import MetricsLog, RunConfig, Variant, sweep, train_online
from ocl.mas import OmegaMode
from ocl.profiles import ProfileName
from ocl.schedule_file import dump_schedule
from ocl.streams import drifting_schedule

pytestmark = pytest.mark.experiment

SEEDS = [0, 1, 2]


def final_segment_accuracy(log: MetricsLog, segment: int) -> float:
    return log.records[-1].segment_accuracy[segment]


def mean_forgetting(log: MetricsLog, segments: int) -> float:
    return float(np.mean([log.records[-1].forgetting[s] for s in range(segments)]))


def run_all(
    profile: ProfileName, variants: list[Variant], **overrides: object
) -> dict[tuple[Variant, int], MetricsLog]:
    configs = [
        RunConfig.model_validate({"variant": v, "profile": profile, "seed": s, **overrides})
        for v in variants
        for s in SEEDS
    ]
    return {(log.variant, log.seed): log for log in sweep(configs, workers=3)}


def assert_consolidated_away_from(continual: MetricsLog, baseline: MetricsLog) -> None:
    assert continual.consolidations, f"seed {continual.seed} never consolidated"
    assert not np.array_equal(continual.final_params, baseline.final_params)


def test_quadrant_ordering():
    logs = run_all(
        ProfileName.SMALL,
        [Variant.ONLINE_NO_BUFFER, Variant.ONLINE_BASELINE, Variant.ONLINE_CONTINUAL],
        eval_every=50,
    )
    continual_wins = 0
    baseline_wins = 0
    buffer_totals = 0
    for seed in SEEDS:
        no_buffer = logs[Variant.ONLINE_NO_BUFFER, seed]
        baseline = logs[Variant.ONLINE_BASELINE, seed]
        continual = logs[Variant.ONLINE_CONTINUAL, seed]
        assert_consolidated_away_from(continual, baseline)
        continual_wins += final_segment_accuracy(continual, 0) >= final_segment_accuracy(baseline, 0)
        baseline_wins += final_segment_accuracy(baseline, 0) >= final_segment_accuracy(no_buffer, 0)
        buffer_totals += min(baseline.records[-1].total, continual.records[-1].total) > no_buffer.records[-1].total
    assert continual_wins == 3
    assert baseline_wins >= 2
    assert buffer_totals >= 2


def test_drifting_segments_forget_less_with_consolidation():
    logs = run_all(
        ProfileName.CLASSIFICATION,
        [Variant.ONLINE_BASELINE, Variant.ONLINE_CONTINUAL, Variant.OFFLINE_JOINT],
        eval_every=25,
    )
    for seed in SEEDS:
        assert_consolidated_away_from(logs[Variant.ONLINE_CONTINUAL, seed], logs[Variant.ONLINE_BASELINE, seed])
    forgetting = {v: np.mean([mean_forgetting(logs[v, s], 3) for s in SEEDS]) for v in Variant if (v, 0) in logs}
    totals = {v: np.mean([logs[v, s].records[-1].total for s in SEEDS]) for v in Variant if (v, 0) in logs}
    assert forgetting[Variant.ONLINE_CONTINUAL] < forgetting[Variant.ONLINE_BASELINE]
    assert totals[Variant.ONLINE_CONTINUAL] > totals[Variant.ONLINE_BASELINE]
    assert totals[Variant.OFFLINE_JOINT] >= max(totals[Variant.ONLINE_BASELINE], totals[Variant.ONLINE_CONTINUAL])


def test_decaying_importance_is_noisier_than_cumulative(tmp_path: Path):
    # the two modes agree until the third importance update, so the stream needs room for several plateaus
    schedule_file = tmp_path / "long.schedule"
    schedule_file.write_text(dump_schedule(drifting_schedule(num_segments=8, duration=150)), encoding="utf-8")

    def run(mode: OmegaMode, seed: int) -> MetricsLog:
        config = RunConfig(
            profile=ProfileName.CLASSIFICATION, seed=seed, omega_mode=mode, schedule_file=schedule_file, eval_every=10
        )
        return train_online(config)

    def trace_variance(log: MetricsLog) -> float:
        steps = [[record.segment_accuracy[s] for record in log.records] for s in range(log.num_segments)]
        return float(np.mean([np.var(np.diff(trace)) for trace in steps]))

    cumulative: list[float] = []
    decaying: list[float] = []
    for seed in SEEDS:
        averaged = run(OmegaMode.CUMULATIVE_AVERAGE, seed)
        decayed = run(OmegaMode.DECAYING, seed)
        assert len(averaged.consolidations) >= 3
        assert len(decayed.consolidations) >= 3
        assert not np.array_equal(averaged.final_params, decayed.final_params)
        cumulative.append(trace_variance(averaged))
        decaying.append(trace_variance(decayed))
    assert np.mean(decaying) > np.mean(cumulative)


def test_zero_penalty_weight_follows_the_baseline_over_a_full_stream():
    def run(variant: Variant, **overrides: object) -> MetricsLog:
        config = RunConfig.model_validate(
            {"variant": variant, "profile": ProfileName.SMALL, "trace_params": True, **overrides}
        )
        return train_online(config)

    baseline = run(Variant.ONLINE_BASELINE)
    continual = run(Variant.ONLINE_CONTINUAL, lam=0.0, window_length=3)
    assert continual.consolidations
    assert len(baseline.param_trace) == 500
    for a, b in zip(baseline.param_trace, continual.param_trace):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_identity_tracking_starts_below_perfect_and_improves():
    log = train_online(RunConfig(variant=Variant.ONLINE_CONTINUAL, profile=ProfileName.EMBEDDING, seed=0))
    first, last = log.records[0], log.records[-1]
    assert first.step == 0
    assert first.total < 1.0
    assert first.total < last.total
