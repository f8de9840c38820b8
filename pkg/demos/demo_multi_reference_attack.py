"""Aggregating leakage across multiple compressed model versions.

A provider shipping several compressed variants of one model hands an
attacker several correlated views of the same training set. This demo
compares the per-level paired attack against the two multi-reference
aggregations: adversary 1 sees the original plus all compressed versions,
adversary 2 sees the compressed versions only.
"""

from compaudit import attacks, compress, data, meta, metrics, nn
from compaudit.attacks import ADV1, ADV2, SrConstruction

ds = data.synth_generate(n=2400, d=48, class_count=20, cluster_spread=2.0, seed=31)
split = data.make_split(ds, data.SplitSizes(400, 400, 600, 600), seed=4)

config = nn.TrainConfig(learning_rate=0.15, batch_size=32, max_epochs=20, l2_lambda=1e-4, seed=8)
victim = nn.train(
    nn.init_fcn([48, 128, 64, 20], seed=1, dropout_rates=[0.1, 0.1]),
    ds.xy(split.victim_train), None, config,
)
shadow = nn.train(
    nn.init_fcn([48, 128, 64, 20], seed=2, dropout_rates=[0.1, 0.1]),
    ds.xy(split.shadow_train), None, config,
)

levels = (0.85, 0.92, 0.97)
finetune = nn.TrainConfig(learning_rate=0.15, batch_size=32, max_epochs=4, seed=9)
victim_models = [
    compress.finetune_compressed(compress.prune_l1(victim, s), ds.xy(split.victim_train), None, finetune)
    for s in levels
]
shadow_models = [
    compress.finetune_compressed(compress.prune_l1(shadow, s), ds.xy(split.shadow_train), None, finetune)
    for s in levels
]

print("per-level paired attack:")
for vm, sm in zip(victim_models, shadow_models):
    _, scores = attacks.run_sr(
        ds, split, victim, vm, shadow, sm, SrConstruction.SORTED_CONCAT_LABEL, "rf", seed=17
    )
    print(f"  sparsity {vm.degree_tag:.0f}%: balanced accuracy "
          f"{metrics.balanced_accuracy(scores):.3f}  auc {metrics.roc_auc(scores):.3f}")

mlp_hyper = meta.MlpHyper(standardize=False, epochs=1200, learning_rate=0.2)
for adversary, label in ((ADV1, "adversary 1 (original + compressed set)"),
                         (ADV2, "adversary 2 (compressed set only)")):
    _, scores = attacks.run_mr(
        ds, split, victim, victim_models, shadow, shadow_models,
        adversary=adversary, seed=23, mlp_hyper=mlp_hyper,
    )
    print(f"multi-reference {label}: balanced accuracy "
          f"{metrics.balanced_accuracy(scores):.3f}  auc {metrics.roc_auc(scores):.3f}  "
          f"tpr@1%fpr {metrics.tpr_at_fpr(scores, 0.01):.3f}")
