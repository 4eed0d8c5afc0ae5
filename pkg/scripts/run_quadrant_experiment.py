# %%
from pathlib import Path

import numpy as np

from ocl.config import get_config
from ocl.harness import RunConfig, Variant, export_csv, format_report, read_csv, summarize, sweep
from ocl.profiles import ProfileName

config = get_config()

seeds = [0, 1, 2]
variants = [Variant.ONLINE_NO_BUFFER, Variant.ONLINE_BASELINE, Variant.ONLINE_CONTINUAL, Variant.OFFLINE_JOINT]

configs = [
    RunConfig(variant=variant, profile=ProfileName.SMALL, seed=seed, eval_every=25)
    for variant in variants
    for seed in seeds
]
logs = sweep(configs, workers=config.sweep_workers)

# %%
path_csv: Path = config.results_dir / "quadrant_sweep.csv"
export_csv(logs, path_csv)
print(format_report(summarize(read_csv(path_csv))))

# %%
# accuracy on the first orthant after the second one has been learned
for variant in variants:
    first = [log.records[-1].segment_accuracy[0] for log in logs if log.variant == variant]
    print(f"{variant:<18} orthant A: {np.mean(first):.3f} +- {np.std(first):.3f}")

# %%
for log in logs:
    if log.variant == Variant.ONLINE_CONTINUAL:
        steps = [event.step for event in log.consolidations]
        print(f"seed {log.seed}: {len(steps)} consolidations at {steps}, {len(log.peaks)} peaks")
