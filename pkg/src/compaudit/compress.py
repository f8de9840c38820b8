"""Compression operations over dense classifier models.

Three families are supported, each producing a ``CompressedModel`` whose
weights exactly satisfy a recorded ``CompressionConstraint``:

- magnitude pruning: the globally smallest-magnitude weights are zeroed
  and masked (biases are never pruned);
- symmetric int8 quantization: per-matrix scale s = max|w| / 127, weights
  stored dequantized as q * s, optionally after fake-quant fine-tuning;
- weight clustering: per-matrix 1-D k-means with shared centroid values
  and cluster-aware gradient aggregation during fine-tuning.

``degree_tag`` orders models within one family by compression strength:
pruning uses the sparsity percentage (60 < 70 < 80 < 90), quantization is
pinned at 8, and clustering maps the cluster count N to 100 / N so that
fewer clusters means a higher degree (16 < 8 < 4).
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .constraints import (
    CLUSTER,
    PRUNE,
    QUANT,
    CompressionConstraint,
    check_constraint,
    derive_cluster_centroids,
    fake_quantize,
    quant_scale,
)
from .errors import InputError, TrainingError

FAMILY_PRUNE = "prune"
FAMILY_QUANT = "quant"
FAMILY_CLUSTER = "cluster"


@dataclass
class CompressedModel:
    """A model together with the constraint its compression imposed."""

    model: nn.FcnModel
    constraint: CompressionConstraint
    family: str
    degree_tag: float

    @property
    def order_key(self) -> tuple[str, float]:
        return (self.family, self.degree_tag)

    def verify(self) -> bool:
        """Exact re-check of the constraint against the weights."""
        return check_constraint(self.model.weights, self.constraint)


def prune_l1(model: nn.FcnModel, sparsity: float, scope: str = "global") -> CompressedModel:
    """Zero the fraction ``sparsity`` of smallest-magnitude weights.

    Ranking is global across all weight matrices by default (``scope`` may
    be "per_layer" instead). Exactly floor(sparsity * P) weights are
    zeroed; biases are untouched. The keep-mask is recorded.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise InputError("sparsity must be in [0, 1]")
    if scope not in ("global", "per_layer"):
        raise InputError("scope must be 'global' or 'per_layer'")
    for w in model.weights:
        if not np.all(np.isfinite(w)):
            raise InputError("model weights contain non-finite values")
    new = model.copy()
    masks = []
    if scope == "global":
        flat = np.concatenate([np.abs(w).ravel() for w in new.weights])
        k = int(np.floor(sparsity * flat.size))
        drop = np.zeros(flat.size, dtype=bool)
        if k > 0:
            drop[np.argsort(flat, kind="stable")[:k]] = True
        offset = 0
        for w in new.weights:
            m = ~drop[offset : offset + w.size].reshape(w.shape)
            w[~m] = 0.0
            masks.append(m)
            offset += w.size
    else:
        for w in new.weights:
            k = int(np.floor(sparsity * w.size))
            m = np.ones(w.size, dtype=bool)
            if k > 0:
                m[np.argsort(np.abs(w).ravel(), kind="stable")[:k]] = False
            m = m.reshape(w.shape)
            w[~m] = 0.0
            masks.append(m)
    constraint = CompressionConstraint(kind=PRUNE, prune_masks=masks)
    return CompressedModel(new, constraint, FAMILY_PRUNE, sparsity * 100.0)


def quantize_int8(
    model: nn.FcnModel,
    mode: str = "calibrate",
    train_set=None,
    valid_set=None,
    config: nn.TrainConfig | None = None,
    dp: nn.DpConfig | None = None,
) -> CompressedModel:
    """Symmetric per-matrix int8 quantization.

    "calibrate" snaps weights straight onto the grid. "qat" first runs
    fake-quant fine-tuning (forward passes use the quantized weights,
    gradients flow straight through to float latents), then re-quantizes;
    with ``dp`` set the fine-tuning steps are DP-SGD. An all-zero matrix
    keeps the degenerate scale 1 and stays zero.
    """
    if mode not in ("calibrate", "qat"):
        raise InputError("mode must be 'calibrate' or 'qat'")
    base = model
    if mode == "qat":
        if train_set is None or config is None:
            raise InputError("qat mode requires train_set and config")
        seed_constraint = CompressionConstraint(
            kind=QUANT, quant_scales=[quant_scale(w) for w in model.weights]
        )
        if dp is None:
            base = nn.train(model, train_set, valid_set, config, constraint=seed_constraint)
        else:
            base = nn.train_dpsgd(model, train_set, config, dp, constraint=seed_constraint)
    new = base.copy()
    scales = []
    for l, w in enumerate(new.weights):
        snapped, s = fake_quantize(w)
        new.weights[l] = snapped
        scales.append(s)
    constraint = CompressionConstraint(kind=QUANT, quant_scales=scales)
    return CompressedModel(new, constraint, FAMILY_QUANT, 8.0)


def kmeans_1d(
    values: np.ndarray,
    n_clusters: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
):
    """Lloyd's algorithm on a 1-D array with k-means++ style seeding.

    Returns (centroids, assignment, inertia_history). The history is the
    within-cluster sum of squares after each Lloyd iteration and is
    non-increasing. Empty clusters keep their previous centroid.
    """
    x = np.asarray(values, dtype=float).ravel()
    if n_clusters < 1:
        raise InputError("n_clusters must be >= 1")
    k = min(n_clusters, np.unique(x).size)
    rng = np.random.default_rng(seed)
    centers = np.empty(k)
    centers[0] = x[rng.integers(x.size)]
    d2 = (x - centers[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = centers[0]
            break
        centers[j] = x[rng.choice(x.size, p=d2 / total)]
        d2 = np.minimum(d2, (x - centers[j]) ** 2)
    assign = np.zeros(x.size, dtype=np.int64)
    history = []
    prev = np.inf
    for _ in range(max_iter):
        assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        counts = np.bincount(assign, minlength=k)
        sums = np.bincount(assign, weights=x, minlength=k)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty]
        inertia = float(np.sum((x - centers[assign]) ** 2))
        history.append(inertia)
        if prev - inertia <= tol:
            break
        prev = inertia
    assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    return centers, assign, history


def cluster_weights(model: nn.FcnModel, n_clusters: int, seed: int = 0) -> CompressedModel:
    """Replace every weight matrix by at most ``n_clusters`` shared values.

    Each matrix is clustered independently; every weight is assigned its
    centroid value and the assignment is recorded so fine-tuning can move
    cluster members together.
    """
    if n_clusters < 1:
        raise InputError("n_clusters must be >= 1")
    new = model.copy()
    assignments, centroids = [], []
    seeds = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF).spawn(len(new.weights))
    for l, w in enumerate(new.weights):
        cent, assign, _ = kmeans_1d(w.ravel(), n_clusters, seed=seeds[l])
        new.weights[l] = cent[assign].reshape(w.shape)
        assignments.append(assign)
        centroids.append(cent)
    constraint = CompressionConstraint(
        kind=CLUSTER, cluster_assignments=assignments, cluster_centroids=centroids
    )
    return CompressedModel(new, constraint, FAMILY_CLUSTER, 100.0 / n_clusters)


def finetune_compressed(
    cm: CompressedModel,
    train_set,
    valid_set,
    config: nn.TrainConfig,
    dp: nn.DpConfig | None = None,
) -> CompressedModel:
    """Fine-tune under the model's constraint and refresh the constraint.

    Delegates to the training engine (DP-SGD when ``dp`` is given, so a
    privately trained model is not un-defended by its fine-tuning stage).
    Pruned positions stay exactly zero, clustered layers move
    centroid-wise (gradient of a centroid is the sum over its member
    weights), and fake-quant layers are re-quantized from their trained
    latents.
    """
    if not cm.verify():
        raise InputError("compressed model violates its constraint")
    if dp is None:
        trained = nn.train(cm.model, train_set, valid_set, config, constraint=cm.constraint)
    else:
        trained = nn.train_dpsgd(cm.model, train_set, config, dp, constraint=cm.constraint)
    constraint = cm.constraint
    if constraint.kind == CLUSTER:
        constraint = CompressionConstraint(
            kind=CLUSTER,
            cluster_assignments=constraint.cluster_assignments,
            cluster_centroids=derive_cluster_centroids(trained.weights, constraint),
        )
    elif constraint.kind == QUANT:
        constraint = CompressionConstraint(
            kind=QUANT, quant_scales=[quant_scale(w) for w in trained.weights]
        )
    out = CompressedModel(trained, constraint, cm.family, cm.degree_tag)
    if not out.verify():
        raise TrainingError("constraint violated after fine-tuning")
    return out
