"""Compression constraints attached to dense models.

A constraint records the structure a compression operation imposed on the
weight matrices of a model: a keep-mask for pruning, a shared-centroid
cluster assignment, or a symmetric int8 quantization grid. Trainers keep
the active constraint satisfied after every parameter update, so a
compressed model never drifts off its constrained manifold.

Biases are never constrained.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError

PRUNE = "prune_mask"
CLUSTER = "cluster_assignment"
QUANT = "fake_quant"

# Symmetric signed int8 grid: integer levels in [-127, 127].
QUANT_LEVELS = 127


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to the nearest integer with halves away from zero.

    np.round rounds halves to even, which is the wrong convention here.
    """
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quant_scale(w: np.ndarray) -> float:
    """Symmetric per-tensor scale max|w| / 127; an all-zero tensor gets 1."""
    m = float(np.max(np.abs(w))) if w.size else 0.0
    return m / QUANT_LEVELS if m > 0.0 else 1.0


def fake_quantize(w: np.ndarray, scale: float | None = None) -> tuple[np.ndarray, float]:
    """Snap a tensor onto the int8 grid, returning (q * s, s)."""
    s = quant_scale(w) if scale is None else float(scale)
    q = np.clip(round_half_away(w / s), -QUANT_LEVELS, QUANT_LEVELS)
    return q * s, s


@dataclass
class CompressionConstraint:
    """Structural constraint over the weight matrices of one model.

    Exactly one family of fields is populated, selected by ``kind``:

    - PRUNE: ``prune_masks``, boolean arrays shaped like each weight
      matrix, True at kept positions.
    - CLUSTER: ``cluster_assignments`` (flat int arrays, one entry per
      weight) and ``cluster_centroids`` (shared values per matrix).
    - QUANT: ``quant_scales``, one positive scale per weight matrix.
    """

    kind: str
    prune_masks: list[np.ndarray] | None = None
    cluster_assignments: list[np.ndarray] | None = None
    cluster_centroids: list[np.ndarray] | None = None
    quant_scales: list[float] | None = None

    def __post_init__(self):
        if self.kind not in (PRUNE, CLUSTER, QUANT):
            raise InputError(f"unknown constraint kind {self.kind!r}")
        if self.kind == PRUNE and self.prune_masks is None:
            raise InputError("prune constraint requires masks")
        if self.kind == CLUSTER and (
            self.cluster_assignments is None or self.cluster_centroids is None
        ):
            raise InputError("cluster constraint requires assignments and centroids")
        if self.kind == QUANT:
            if self.quant_scales is None:
                raise InputError("quant constraint requires scales")
            if any(s <= 0 for s in self.quant_scales):
                raise InputError("quant scales must be positive")


def check_constraint(weights: list[np.ndarray], constraint: CompressionConstraint) -> bool:
    """Exact check that ``weights`` satisfy ``constraint``.

    No tolerance is applied: pruned positions must be exactly zero,
    clustered matrices must be exactly reproduced by their centroids, and
    quantized matrices must sit exactly on the recorded grid.
    """
    if constraint.kind == PRUNE:
        for w, mask in zip(weights, constraint.prune_masks, strict=True):
            if mask.shape != w.shape:
                return False
            if np.any(w[~mask] != 0.0):
                return False
        return True
    if constraint.kind == CLUSTER:
        for w, assign, cent in zip(
            weights, constraint.cluster_assignments, constraint.cluster_centroids, strict=True
        ):
            if assign.shape[0] != w.size or np.any(assign >= cent.shape[0]):
                return False
            if not np.array_equal(cent[assign].reshape(w.shape), w):
                return False
        return True
    if constraint.kind == QUANT:
        for w, s in zip(weights, constraint.quant_scales, strict=True):
            snapped, _ = fake_quantize(w, s)
            if not np.array_equal(snapped, w):
                return False
        return True
    return False


def derive_cluster_centroids(
    weights: list[np.ndarray], constraint: CompressionConstraint
) -> list[np.ndarray]:
    """Re-read centroid values from clustered weights after training.

    Member weights of one cluster stay equal throughout constrained
    training, so any member carries the centroid value. Empty clusters
    keep their previous centroid.
    """
    out = []
    for w, assign, old in zip(
        weights, constraint.cluster_assignments, constraint.cluster_centroids, strict=True
    ):
        cent = old.astype(float).copy()
        flat = w.ravel()
        # first occurrence of each cluster id
        seen = np.full(cent.shape[0], -1, dtype=np.int64)
        idx = np.arange(assign.shape[0] - 1, -1, -1)
        seen[assign[idx]] = idx
        present = seen >= 0
        cent[present] = flat[seen[present]]
        out.append(cent)
    return out
