"""Train a small classifier and derive its compressed variants.

Walks through the basic model lifecycle: generate a synthetic tabular
dataset, split it, train the dense network, then produce pruned,
quantized, and clustered versions and compare their accuracy.
"""

import numpy as np

from compaudit import compress, data, nn

ds = data.synth_generate(n=1200, d=32, class_count=10, cluster_spread=1.0, seed=7)
split = data.make_split(ds, data.SplitSizes(300, 300, 300, 300), seed=1)
train_xy = ds.xy(split.victim_train)
test_xy = ds.xy(split.victim_test)

model = nn.init_fcn([32, 64, 32, 10], seed=3, dropout_rates=[0.1, 0.1])
config = nn.TrainConfig(learning_rate=0.15, batch_size=32, max_epochs=40, l2_lambda=1e-4, seed=5)
model = nn.train(model, train_xy, None, config)

print("original model")
print(f"  train accuracy: {nn.evaluate_accuracy(model, *train_xy):.3f}")
print(f"  test accuracy : {nn.evaluate_accuracy(model, *test_xy):.3f}")

finetune = nn.TrainConfig(learning_rate=0.15, batch_size=32, max_epochs=5, seed=6)

for name, cm in [
    ("pruned 70%", compress.prune_l1(model, 0.7)),
    ("int8", compress.quantize_int8(model)),
    ("clustered N=8", compress.cluster_weights(model, 8, seed=2)),
]:
    tuned = compress.finetune_compressed(cm, train_xy, None, finetune)
    acc = nn.evaluate_accuracy(tuned.model, *test_xy)
    distinct = max(np.unique(w).size for w in tuned.model.weights)
    zeros = sum(int(np.sum(w == 0.0)) for w in tuned.model.weights)
    print(f"{name:<14} test accuracy {acc:.3f}  constraint ok: {tuned.verify()}  "
          f"(max distinct values {distinct}, zero weights {zeros})")
