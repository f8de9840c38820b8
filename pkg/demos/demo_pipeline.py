"""End-to-end audit from a declarative plan.

Writes a small experiment plan, runs the full checkpointed pipeline
(train, compress, attack, evaluate, report), and prints the aggregated
report. The same plan can be driven stage by stage from the command
line: compaudit --plan plan.ini --out out --stage train, and so on.
"""

import tempfile
from pathlib import Path

from compaudit.pipeline import run_plan
from compaudit.plan import parse_plan_text

PLAN = """
[dataset]
kind = synth
samples = 800
features = 24
classes = 8
spread = 1.6
seed = 3

[split]
victim_train = 200
victim_test = 200
shadow_train = 200
shadow_test = 200

[train]
learning_rate = 0.15
batch_size = 25
max_epochs = 25
hidden = 64,32
dropout = 0.1

[compression]
prune = 0.7,0.9
int8 = true
finetune_epochs = 4

[attacks]
nr = loss,mentr
sr_methods = sorted_concat_label
sr_classifiers = rf
mr = adv2

[metrics]
fpr_caps = 0.01

[run]
repetitions = 2
seed_base = 12345
"""

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "audit"
    report = run_plan(parse_plan_text(PLAN), out)
    print(f"plan hash {report['plan_hash'][:16]}..., "
          f"{len(report['cells'])} attack cells over {report['repetitions']} repetitions\n")
    print(f"{'attack':<28} {'target':<22} {'bal.acc':>8} {'auc':>8}")
    for cell_key, agg in report["aggregates"].items():
        attack_key, target_key = cell_key.split("__", 1)
        print(f"{attack_key:<28} {target_key:<22} "
              f"{agg['balanced_accuracy_median']:>8.3f} {agg['auc_median']:>8.3f}")
    print("\nreport artifacts:", ", ".join(p.name for p in sorted((out / 'report').iterdir())))
