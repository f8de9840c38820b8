"""Single-model membership attacks against an overfit classifier.

Trains a deliberately overfit victim, mirrors it with a shadow model,
then runs the threshold attacks (loss, modified entropy) and the
shadow-trained meta-classifier attacks, reporting balanced accuracy,
AUC, and TPR at 1% FPR for each.
"""

from compaudit import attacks, data, metrics, nn

ds = data.synth_generate(n=1600, d=48, class_count=20, cluster_spread=2.0, seed=11)
split = data.make_split(ds, data.SplitSizes(300, 300, 400, 400), seed=2)

config = nn.TrainConfig(learning_rate=0.15, batch_size=32, max_epochs=30, l2_lambda=1e-4, seed=4)
victim = nn.train(
    nn.init_fcn([48, 128, 64, 20], seed=1, dropout_rates=[0.1, 0.1]),
    ds.xy(split.victim_train), None, config,
)
shadow = nn.train(
    nn.init_fcn([48, 128, 64, 20], seed=2, dropout_rates=[0.1, 0.1]),
    ds.xy(split.shadow_train), None, config,
)

gap = nn.evaluate_accuracy(victim, *ds.xy(split.victim_train)) - nn.evaluate_accuracy(
    victim, *ds.xy(split.victim_test)
)
print(f"victim train-test gap: {gap:.3f}\n")


def report(name, scores):
    ba = metrics.balanced_accuracy(scores)
    auc = metrics.roc_auc(scores)
    tpr = metrics.tpr_at_fpr(scores, 0.01)
    print(f"{name:<28} balanced accuracy {ba:.3f}  auc {auc:.3f}  tpr@1%fpr {tpr:.3f}")


for metric in ("loss", "mentr"):
    tau, scores = attacks.run_nr_metric(ds, split, victim, shadow, metric=metric)
    report(f"threshold on {metric} (tau={tau:.2f})", scores)

for with_label, label_tag in ((False, "posterior"), (True, "posterior+label")):
    for kind in ("lr", "rf"):
        _, scores = attacks.run_nr_training(
            ds, split, victim, shadow, clf_kind=kind, with_label=with_label, seed=9
        )
        report(f"{label_tag} ({kind})", scores)
