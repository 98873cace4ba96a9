"""End to end on a synthetic cohort small enough for a laptop.

Twenty patients per class, three 10 s recordings each, 8 channels at 100 Hz.
Epileptic recordings carry spike-and-slow-wave events spread over neighbouring
channels. Patients are split so nobody appears in both training and test.

    python3 demos/03_desk_experiment.py [out_dir]
"""

import sys
import time

from iedkit.config import desk_config
from iedkit.experiment import run_experiment
from iedkit.metrics import agreement_partition, confidence_summary, format_report

out_dir = sys.argv[1] if len(sys.argv) > 1 else None
config = desk_config(seed=42)

start = time.perf_counter()
result = run_experiment(config, out_dir)
print(f"trained three models in {time.perf_counter() - start:.1f} s")
for name, history in result.histories.items():
    best = result.checkpoints[name].epoch
    print(f"  {name:9s} {len(history):3d} epochs, best epoch {best}, "
          f"val loss {history[best].val_loss:.4f}")
print(f"sub-models untouched by ensemble training: {result.frozen_ok}")
print(f"trainable head parameters: {result.trainable_head}")

print()
print(format_report([(m, *result.reports[m]) for m in ("cnn", "lstm", "ensemble")]))

labels = [e.target for e in result.test_entries]
part = agreement_partition(labels, result.probs["cnn"], result.probs["lstm"],
                           result.probs["ensemble"])
print(part.format())

summary = confidence_summary(result.probs["ensemble"])
for group in ("epileptic", "non_epileptic"):
    c = getattr(summary, group)
    if c is not None:
        print(f"{group}: n={c.n} mean {c.mean:.3f} 95% [{c.lower:.3f}, {c.upper:.3f}]")
