"""Checkpoint format for models, constraints, and meta-classifiers.

One stable on-disk representation: UTF-8 JSON with sorted keys and compact
separators. Arrays are nested row-major lists; floats use Python's repr,
which round-trips exactly, so a reloaded checkpoint is bit-identical to
the saved object and repeated saves of the same object produce identical
bytes.

Model layout (version 1)::

    {"format": "compaudit-checkpoint", "version": 1, "kind": "fcn",
     "layer_sizes": [...], "weights": [[[...]]], "biases": [[...]],
     "dropout_rates": [...],
     "constraint": null | {"kind": ..., family-specific fields},
     "family": null | str, "degree_tag": null | float}

Classifier layout: {"format": ..., "version": 1, "kind": "lr"|"rf"|"mlp",
parameter fields}; forest trees are nested {"prob"} leaves and
{"feature", "threshold", "left", "right"} splits.
"""

import json
from pathlib import Path

import numpy as np

from .compress import CompressedModel
from .constraints import CLUSTER, PRUNE, QUANT, CompressionConstraint
from .errors import CheckpointError
from .meta import LogisticMeta, MlpMeta, RandomForestMeta, _TreeNode
from .nn import FcnModel

FORMAT = "compaudit-checkpoint"
VERSION = 1


def _dump(payload: dict, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def _load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    if payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {payload.get('version')}")
    return payload


def _constraint_to_dict(c: CompressionConstraint | None):
    if c is None:
        return None
    if c.kind == PRUNE:
        return {"kind": c.kind, "masks": [m.astype(int).tolist() for m in c.prune_masks]}
    if c.kind == CLUSTER:
        return {
            "kind": c.kind,
            "assignments": [a.tolist() for a in c.cluster_assignments],
            "centroids": [cent.tolist() for cent in c.cluster_centroids],
        }
    return {"kind": c.kind, "scales": [float(s) for s in c.quant_scales]}


def _constraint_from_dict(d) -> CompressionConstraint | None:
    if d is None:
        return None
    kind = d["kind"]
    if kind == PRUNE:
        return CompressionConstraint(
            kind=PRUNE, prune_masks=[np.asarray(m, dtype=bool) for m in d["masks"]]
        )
    if kind == CLUSTER:
        return CompressionConstraint(
            kind=CLUSTER,
            cluster_assignments=[np.asarray(a, dtype=np.int64) for a in d["assignments"]],
            cluster_centroids=[np.asarray(c, dtype=float) for c in d["centroids"]],
        )
    if kind == QUANT:
        return CompressionConstraint(kind=QUANT, quant_scales=[float(s) for s in d["scales"]])
    raise CheckpointError(f"unknown constraint kind {kind!r}")


def save_model(path, model: FcnModel | CompressedModel):
    """Write a plain or compressed model checkpoint."""
    constraint, family, degree = None, None, None
    if isinstance(model, CompressedModel):
        constraint, family, degree = model.constraint, model.family, model.degree_tag
        model = model.model
    _dump(
        {
            "format": FORMAT,
            "version": VERSION,
            "kind": "fcn",
            "layer_sizes": list(model.layer_sizes),
            "weights": [w.tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
            "dropout_rates": [float(p) for p in model.dropout_rates],
            "constraint": _constraint_to_dict(constraint),
            "family": family,
            "degree_tag": degree,
        },
        path,
    )


def load_model(path) -> FcnModel | CompressedModel:
    """Read a model checkpoint; returns a CompressedModel when constrained."""
    d = _load(path)
    if d.get("kind") != "fcn":
        raise CheckpointError(f"{path}: not a model checkpoint")
    model = FcnModel(
        [int(s) for s in d["layer_sizes"]],
        [np.asarray(w, dtype=float) for w in d["weights"]],
        [np.asarray(b, dtype=float) for b in d["biases"]],
        [float(p) for p in d["dropout_rates"]],
    )
    constraint = _constraint_from_dict(d.get("constraint"))
    if constraint is None:
        return model
    return CompressedModel(model, constraint, d["family"], float(d["degree_tag"]))


def _tree_to_dict(node: _TreeNode):
    if node.is_leaf():
        return {"prob": node.prob}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_to_dict(node.left),
        "right": _tree_to_dict(node.right),
    }


def _tree_from_dict(d) -> _TreeNode:
    if "prob" in d:
        return _TreeNode(prob=float(d["prob"]))
    return _TreeNode(
        prob=None,
        feature=int(d["feature"]),
        threshold=float(d["threshold"]),
        left=_tree_from_dict(d["left"]),
        right=_tree_from_dict(d["right"]),
    )


def save_classifier(path, clf):
    """Write a meta-classifier checkpoint."""
    base = {"format": FORMAT, "version": VERSION, "kind": clf.kind, "seed": clf.seed}
    if isinstance(clf, LogisticMeta):
        base |= {"weights": clf.weights.tolist(), "bias": clf.bias}
    elif isinstance(clf, MlpMeta):
        base |= {
            "W1": clf.W1.tolist(),
            "b1": clf.b1.tolist(),
            "w2": clf.w2.tolist(),
            "b2": clf.b2,
            "mean": clf.mean.tolist(),
            "std": clf.std.tolist(),
        }
    elif isinstance(clf, RandomForestMeta):
        base |= {
            "n_features": clf.n_features,
            "trees": [_tree_to_dict(t) for t in clf.trees],
        }
    else:
        raise CheckpointError(f"cannot serialize classifier of type {type(clf).__name__}")
    _dump(base, path)


def load_classifier(path):
    d = _load(path)
    kind = d.get("kind")
    if kind == "lr":
        return LogisticMeta(np.asarray(d["weights"], dtype=float), d["bias"], d["seed"])
    if kind == "mlp":
        return MlpMeta(
            np.asarray(d["W1"], dtype=float),
            np.asarray(d["b1"], dtype=float),
            np.asarray(d["w2"], dtype=float),
            d["b2"],
            d["seed"],
            mean=np.asarray(d["mean"], dtype=float),
            std=np.asarray(d["std"], dtype=float),
        )
    if kind == "rf":
        trees = [_tree_from_dict(t) for t in d["trees"]]
        return RandomForestMeta(trees, int(d["n_features"]), d["seed"])
    raise CheckpointError(f"{path}: unknown classifier kind {kind!r}")
