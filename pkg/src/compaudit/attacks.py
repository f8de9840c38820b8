"""Membership attack builders and runners.

Three attack families, all black-box over posterior vectors:

- single-model attacks ("NR"): threshold attacks on per-sample loss or
  modified entropy, and shadow-trained meta-classifiers over sorted
  posteriors with or without the one-hot label;
- paired-reference attacks ("SR"): a meta-classifier over the original
  model's posterior paired with one compressed model's posterior for the
  same sample, capturing how compression shifts members differently from
  non-members;
- multi-reference attacks ("MR"): per-compression-level SR meta-classifier
  probabilities (adversary 1) or raw compressed posteriors (adversary 2)
  concatenated with a per-level cross-entropy loss vector, stacked and fed
  to an MLP meta-classifier.

Every runner trains on the shadow world and scores the victim world;
membership ground truth comes exclusively from the split plan. Attack
scores live in [0, 1]; metric attacks expose exp(-metric) so thresholds
carry over monotonically.
"""

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import meta, nn
from .compress import CompressedModel
from .data import SplitPlan, TabularDataset
from .errors import ConfigError, InputError, OrderingError, ShapeError
from .metrics import AttackScoreSet


class SrConstruction(Enum):
    """Feature layouts for paired original/compressed meta-data."""

    SORTED_CONCAT = "sorted_concat"              # method 1: pi(p_o) || pi(p_c)
    SORTED_CONCAT_LABEL = "sorted_concat_label"  # method 2: ... || one_hot(y)
    DIRECT_CONCAT_LABEL = "direct_concat_label"  # p_o || p_c || one_hot(y), unsorted
    L2_DISTANCE_LABEL = "l2_distance_label"      # ||p_o - p_c||_2 || one_hot(y)

    def feature_length(self, class_count: int) -> int:
        if self is SrConstruction.SORTED_CONCAT:
            return 2 * class_count
        if self in (SrConstruction.SORTED_CONCAT_LABEL, SrConstruction.DIRECT_CONCAT_LABEL):
            return 3 * class_count
        return class_count + 1


def _posteriors(model, X: np.ndarray) -> np.ndarray:
    fcn = model.model if isinstance(model, CompressedModel) else model
    return nn.forward(fcn, X)


def modified_entropy(posteriors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mentr(p, y) = -(1 - p_y) log p_y - sum_{k != y} p_k log(1 - p_k).

    Zero exactly when the posterior is one-hot at the true label;
    non-negative everywhere. Logs are clamped at 1e-12.
    """
    P = np.asarray(posteriors, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or labels.shape != (P.shape[0],):
        raise ShapeError("posteriors (n, C) and labels (n,) expected")
    idx = np.arange(P.shape[0])
    p_y = P[idx, labels]
    log_p = np.log(np.maximum(P, nn.LOSS_CLAMP))
    log_1mp = np.log(np.maximum(1.0 - P, nn.LOSS_CLAMP))
    total = np.sum(P * log_1mp, axis=1) - p_y * log_1mp[idx, labels]
    return -(1.0 - p_y) * log_p[idx, labels] - total


def nr_metric_loss(posteriors: np.ndarray, labels: np.ndarray, tau: float) -> np.ndarray:
    """Member iff cross-entropy loss < tau (a tie is a non-member)."""
    return nn.cross_entropy_losses(posteriors, labels) < tau


def nr_metric_modified_entropy(
    posteriors: np.ndarray, labels: np.ndarray, tau: float
) -> np.ndarray:
    """Member iff modified entropy < tau (a tie is a non-member)."""
    return modified_entropy(posteriors, labels) < tau


def calibrate_threshold(member_values: np.ndarray, nonmember_values: np.ndarray) -> float:
    """Threshold maximizing balanced accuracy of "member iff value < tau".

    Exhaustive scan over midpoints of the sorted unique values; ties are
    broken toward the smallest threshold. Both populations must be
    non-empty.
    """
    mv = np.asarray(member_values, dtype=float).ravel()
    nv = np.asarray(nonmember_values, dtype=float).ravel()
    if mv.size == 0 or nv.size == 0:
        raise InputError("calibration needs both populations")
    uniq = np.unique(np.concatenate([mv, nv]))
    if uniq.size == 1:
        return float(uniq[0])
    candidates = (uniq[1:] + uniq[:-1]) / 2.0
    best_tau, best_ba = candidates[0], -1.0
    for tau in candidates:
        ba = threshold_balanced_accuracy(mv, nv, tau)
        if ba > best_ba:
            best_tau, best_ba = tau, ba
    return float(best_tau)


def threshold_balanced_accuracy(member_values, nonmember_values, tau: float) -> float:
    """Balanced accuracy of the rule "member iff value < tau"."""
    mv = np.asarray(member_values, dtype=float)
    nv = np.asarray(nonmember_values, dtype=float)
    return 0.5 * (float(np.mean(mv < tau)) + float(np.mean(nv >= tau)))


def build_nr_metadata(
    posterior: np.ndarray, label: int | None, with_label: bool, class_count: int | None = None
) -> np.ndarray:
    """Descending-sorted posterior, optionally followed by the one-hot label."""
    p = np.asarray(posterior, dtype=float)
    if p.ndim != 1:
        raise ShapeError("posterior must be a vector")
    out = np.sort(p)[::-1]
    if with_label:
        if label is None:
            raise InputError("label required when with_label is set")
        C = class_count if class_count is not None else p.shape[0]
        out = np.concatenate([out, nn.one_hot(int(label), C)])
    return out


def build_nr_metadata_batch(posteriors, labels, with_label: bool) -> np.ndarray:
    P = np.asarray(posteriors, dtype=float)
    out = -np.sort(-P, axis=1)
    if with_label:
        out = np.concatenate([out, nn.one_hot(np.asarray(labels), P.shape[1])], axis=1)
    return out


def build_sr_metadata(
    p_o: np.ndarray,
    p_c: np.ndarray,
    label: int | None,
    method: SrConstruction,
    class_count: int | None = None,
) -> np.ndarray:
    """Paired-posterior feature vector for one sample.

    Sorted constructions order the original posterior descending and apply
    the same permutation to the compressed posterior, so matched classes
    stay aligned across the two halves.
    """
    p_o = np.asarray(p_o, dtype=float)
    p_c = np.asarray(p_c, dtype=float)
    if p_o.shape != p_c.shape or p_o.ndim != 1:
        raise ShapeError("paired posteriors must be equal-length vectors")
    C = class_count if class_count is not None else p_o.shape[0]
    needs_label = method is not SrConstruction.SORTED_CONCAT
    if needs_label and label is None:
        raise InputError(f"{method.value} requires the ground-truth label")
    if method in (SrConstruction.SORTED_CONCAT, SrConstruction.SORTED_CONCAT_LABEL):
        pi = np.argsort(-p_o, kind="stable")
        parts = [p_o[pi], p_c[pi]]
        if method is SrConstruction.SORTED_CONCAT_LABEL:
            parts.append(nn.one_hot(int(label), C))
        return np.concatenate(parts)
    if method is SrConstruction.DIRECT_CONCAT_LABEL:
        return np.concatenate([p_o, p_c, nn.one_hot(int(label), C)])
    dist = float(np.linalg.norm(p_o - p_c))
    return np.concatenate([[dist], nn.one_hot(int(label), C)])


def build_sr_metadata_batch(P_o, P_c, labels, method: SrConstruction) -> np.ndarray:
    P_o = np.asarray(P_o, dtype=float)
    P_c = np.asarray(P_c, dtype=float)
    if P_o.shape != P_c.shape:
        raise ShapeError("paired posterior batches must have equal shape")
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    rows = [
        build_sr_metadata(
            P_o[i], P_c[i], None if labels is None else int(labels[i]), method, P_o.shape[1]
        )
        for i in range(P_o.shape[0])
    ]
    return np.stack(rows)


def shuffled_score_set(scores: AttackScoreSet, seed: int = 0) -> AttackScoreSet:
    """Pool all scores and reassign membership at random (null control)."""
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    pooled = np.concatenate([scores.member_scores, scores.nonmember_scores])
    perm = rng.permutation(pooled.size)
    m = scores.member_scores.size
    return AttackScoreSet(
        pooled[perm[:m]], pooled[perm[m:]], decision_threshold=scores.decision_threshold
    )


def export_metadata_csv(records, path):
    """Dump meta-records as CSV, one row per record, label last."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for r in records:
            writer.writerow([repr(float(v)) for v in r.features] + [int(r.membership)])


# ---------------------------------------------------------------------------
# attack runners


def _strictly_after(score: float) -> float:
    """Smallest float above ``score``; turns a strict rule into >=."""
    return float(np.nextafter(score, np.inf))


def run_nr_metric(
    dataset: TabularDataset,
    splits: SplitPlan,
    victim_model,
    shadow_model,
    metric: str = "loss",
) -> tuple[float, AttackScoreSet]:
    """Threshold attack on loss or modified entropy.

    The threshold is calibrated on the shadow model's member/non-member
    metric values, then applied to the victim model. Scores are
    exp(-metric value), so the strict "metric < tau" rule becomes
    "score >= nextafter(exp(-tau))". Returns (tau, score set).
    """
    if metric not in ("loss", "mentr"):
        raise ConfigError(f"unknown metric {metric!r}")

    def values(model, idx):
        X, y = dataset.xy(idx)
        P = _posteriors(model, X)
        if metric == "loss":
            return nn.cross_entropy_losses(P, y)
        return modified_entropy(P, y)

    tau = calibrate_threshold(
        values(shadow_model, splits.shadow_train), values(shadow_model, splits.shadow_test)
    )
    member = np.exp(-values(victim_model, splits.victim_train))
    nonmember = np.exp(-values(victim_model, splits.victim_test))
    threshold = _strictly_after(float(np.exp(-tau)))
    return tau, AttackScoreSet(member, nonmember, decision_threshold=threshold)


def _meta_records(features: np.ndarray, membership: int) -> list[meta.MetaRecord]:
    return [meta.MetaRecord(features[i], membership) for i in range(features.shape[0])]


def run_nr_training(
    dataset: TabularDataset,
    splits: SplitPlan,
    victim_model,
    shadow_model,
    clf_kind: str = "rf",
    with_label: bool = True,
    seed: int = 0,
    hyper=None,
):
    """Shadow-trained meta-classifier over single-model posteriors.

    ``with_label`` False uses the sorted posterior alone; True appends the
    one-hot ground-truth label. Returns (classifier, score set).
    """

    def features(model, idx):
        X, y = dataset.xy(idx)
        return build_nr_metadata_batch(_posteriors(model, X), y, with_label)

    records = _meta_records(features(shadow_model, splits.shadow_train), 1) + _meta_records(
        features(shadow_model, splits.shadow_test), 0
    )
    clf = meta.fit(clf_kind, records, hyper=hyper, seed=seed)
    member = meta.score_proba(clf, features(victim_model, splits.victim_train))
    nonmember = meta.score_proba(clf, features(victim_model, splits.victim_test))
    return clf, AttackScoreSet(member, nonmember)


def _sr_features(original, compressed, dataset, idx, construction):
    X, y = dataset.xy(idx)
    P_o = _posteriors(original, X)
    P_c = _posteriors(compressed, X)
    labels = None if construction is SrConstruction.SORTED_CONCAT else y
    return build_sr_metadata_batch(P_o, P_c, labels, construction)


def fit_sr_classifier(
    dataset: TabularDataset,
    splits: SplitPlan,
    shadow_original,
    shadow_compressed,
    construction: SrConstruction,
    clf_kind: str,
    seed: int = 0,
    hyper=None,
    member_rows=None,
    nonmember_rows=None,
):
    """Train one paired-posterior meta-classifier on the shadow world.

    ``member_rows``/``nonmember_rows`` default to the full shadow split;
    passing subsets supports cross-fitted stacking.
    """
    member_rows = splits.shadow_train if member_rows is None else member_rows
    nonmember_rows = splits.shadow_test if nonmember_rows is None else nonmember_rows
    records = _meta_records(
        _sr_features(shadow_original, shadow_compressed, dataset, member_rows, construction), 1
    ) + _meta_records(
        _sr_features(shadow_original, shadow_compressed, dataset, nonmember_rows, construction), 0
    )
    return meta.fit(clf_kind, records, hyper=hyper, seed=seed)


def run_sr(
    dataset: TabularDataset,
    splits: SplitPlan,
    victim_original,
    victim_compressed,
    shadow_original,
    shadow_compressed,
    construction: SrConstruction = SrConstruction.SORTED_CONCAT_LABEL,
    clf_kind: str = "rf",
    seed: int = 0,
    hyper=None,
):
    """Paired original/compressed attack.

    Stages: the meta-classifier is trained on shadow meta-records
    (member = shadow train rows), then victim meta-records are built by
    querying the victim pair and scored. Returns (classifier, score set).
    """
    clf = fit_sr_classifier(
        dataset, splits, shadow_original, shadow_compressed, construction, clf_kind, seed, hyper
    )
    member = meta.score_proba(
        clf, _sr_features(victim_original, victim_compressed, dataset, splits.victim_train, construction)
    )
    nonmember = meta.score_proba(
        clf, _sr_features(victim_original, victim_compressed, dataset, splits.victim_test, construction)
    )
    return clf, AttackScoreSet(member, nonmember)


# ---------------------------------------------------------------------------
# multi-reference attack


ADV1 = "adv1"
ADV2 = "adv2"

# default stacker hyperparameters per adversary: heavily regularized MLPs
# transfer from the shadow world to the victim world much better than a
# plain fit; adversary 2's unsorted posterior blocks additionally benefit
# from feature dropout and unstandardized loss magnitudes
MR_MLP_DEFAULTS = {
    ADV1: meta.MlpHyper(epochs=1200, learning_rate=0.2, dropout=0.5),
    ADV2: meta.MlpHyper(
        standardize=False, epochs=1200, learning_rate=0.2, dropout=0.5, input_dropout=0.5
    ),
}


@dataclass
class MrInput:
    """One side's view for multi-reference feature building.

    ``compressed_models`` must be sorted ascending by (family, degree);
    ties are allowed so a duplicated model can be studied as a control.
    Adversary 1 additionally carries the original model and one SR
    classifier per compressed model; adversary 2 sees compressed models
    only.
    """

    adversary: str
    compressed_models: list[CompressedModel]
    original_model: nn.FcnModel | None = None
    sr_classifiers: list | None = None
    sr_construction: SrConstruction = SrConstruction.SORTED_CONCAT_LABEL

    def __post_init__(self):
        if self.adversary not in (ADV1, ADV2):
            raise ConfigError(f"unknown adversary {self.adversary!r}")
        if len(self.compressed_models) < 2:
            raise ConfigError("multi-reference attack needs at least 2 compressed models")
        _check_ascending(self.compressed_models)
        if self.adversary == ADV1:
            if self.original_model is None:
                raise ConfigError("adversary 1 requires the original model")
            if self.sr_classifiers is None or len(self.sr_classifiers) != len(
                self.compressed_models
            ):
                raise ConfigError("adversary 1 needs one SR classifier per compressed model")


def _check_ascending(models: list[CompressedModel]):
    keys = [m.order_key for m in models]
    for a, b in zip(keys, keys[1:]):
        if b < a:
            raise OrderingError(f"models not in ascending compression order: {a} > {b}")


def mr_loss_concat(
    X: np.ndarray, labels: np.ndarray, compressed_models: list[CompressedModel]
) -> np.ndarray:
    """Per-model cross-entropy losses, concatenated in ascending order."""
    _check_ascending(compressed_models)
    cols = [
        nn.cross_entropy_losses(_posteriors(m, X), labels) for m in compressed_models
    ]
    return np.stack(cols, axis=1)


def mr_posterior_concat(X: np.ndarray, labels: np.ndarray, mr_input: MrInput) -> np.ndarray:
    """Adversary 1: per-level SR probability pairs [1-p, p], concatenated.
    Adversary 2: raw compressed posteriors, concatenated."""
    if mr_input.adversary == ADV2:
        return np.concatenate(
            [_posteriors(m, X) for m in mr_input.compressed_models], axis=1
        )
    blocks = []
    for cm, clf in zip(mr_input.compressed_models, mr_input.sr_classifiers):
        feats = _sr_features(
            mr_input.original_model, cm, _ArrayView(X, labels), slice(None), mr_input.sr_construction
        )
        p = np.asarray(meta.score_proba(clf, feats), dtype=float)
        blocks.append(np.stack([1.0 - p, p], axis=1))
    return np.concatenate(blocks, axis=1)


class _ArrayView:
    """Adapter so feature builders can run on raw arrays, not just datasets."""

    def __init__(self, X, y):
        self._X = np.asarray(X, dtype=float)
        self._y = np.asarray(y, dtype=np.int64)

    def xy(self, idx):
        return self._X[idx], self._y[idx]


def run_mr(
    dataset: TabularDataset,
    splits: SplitPlan,
    victim_original,
    victim_compressed: list[CompressedModel],
    shadow_original,
    shadow_compressed: list[CompressedModel],
    adversary: str = ADV1,
    sr_construction: SrConstruction = SrConstruction.SORTED_CONCAT_LABEL,
    sr_clf_kind: str = "rf",
    seed: int = 0,
    sr_hyper=None,
    mlp_hyper=None,
):
    """Multi-reference attack over an ascending set of compressed models.

    Shadow phase: shadow meta-records stack the posterior concatenation
    with the loss concatenation and an MLP meta-classifier is trained on
    them. For adversary 1 the per-level SR probabilities on shadow rows
    are cross-fitted (each half of the shadow split is scored by a
    classifier fit on the other half), so the stacker sees honestly
    calibrated probabilities instead of in-sample training outputs.
    Victim phase: per-level SR classifiers fit on the full shadow world
    score the victim models; everything is labeled by shadow membership,
    never victim labels. Returns (mlp classifier, score set).
    """
    if len(victim_compressed) != len(shadow_compressed):
        raise ConfigError("victim and shadow compressed model lists must align")
    victim_compressed = [victim_compressed[i] for i in _stable_order(victim_compressed)]
    shadow_compressed = [shadow_compressed[i] for i in _stable_order(shadow_compressed)]
    for v, s in zip(victim_compressed, shadow_compressed):
        if v.order_key != s.order_key:
            raise ConfigError("victim and shadow compression degrees do not match")
    if mlp_hyper is None:
        mlp_hyper = MR_MLP_DEFAULTS.get(adversary)

    n_models = len(victim_compressed)
    seeds = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(3 * n_models + 2)
    if adversary == ADV1:
        shadow_post = _cross_fitted_sr_probabilities(
            dataset, splits, shadow_original, shadow_compressed,
            sr_construction, sr_clf_kind, sr_hyper, seeds,
        )
        victim_clfs = [
            fit_sr_classifier(
                dataset, splits, shadow_original, shadow_compressed[i],
                sr_construction, sr_clf_kind, seed=_seq_int(seeds[2 * n_models + i]),
                hyper=sr_hyper,
            )
            for i in range(n_models)
        ]
        victim_input = MrInput(ADV1, victim_compressed, victim_original, victim_clfs, sr_construction)
    else:
        shadow_input = MrInput(ADV2, shadow_compressed)
        victim_input = MrInput(ADV2, victim_compressed)

    def features(idx, mr_input, models):
        X, y = dataset.xy(idx)
        post = mr_posterior_concat(X, y, mr_input)
        loss = mr_loss_concat(X, y, models)
        return np.concatenate([post, loss], axis=1)

    shadow_rows = np.concatenate([splits.shadow_train, splits.shadow_test])
    Xs, ys = dataset.xy(shadow_rows)
    shadow_loss = mr_loss_concat(Xs, ys, shadow_compressed)
    if adversary == ADV1:
        shadow_feats = np.concatenate([shadow_post, shadow_loss], axis=1)
    else:
        shadow_feats = np.concatenate(
            [mr_posterior_concat(Xs, ys, shadow_input), shadow_loss], axis=1
        )
    records = _meta_records(shadow_feats[: splits.shadow_train.size], 1)
    records += _meta_records(shadow_feats[splits.shadow_train.size :], 0)
    mlp = meta.fit("mlp", records, hyper=mlp_hyper, seed=_seq_int(seeds[-1]))
    member = meta.score_proba(mlp, features(splits.victim_train, victim_input, victim_compressed))
    nonmember = meta.score_proba(mlp, features(splits.victim_test, victim_input, victim_compressed))
    return mlp, AttackScoreSet(member, nonmember)


def _cross_fitted_sr_probabilities(
    dataset, splits, shadow_original, shadow_compressed, construction, clf_kind, hyper, seeds
):
    """Per-level [1-p, p] pairs for every shadow row, scored out-of-fold.

    Shadow members and non-members are each shuffled into two halves; a
    classifier fit on one half scores the other. Row order of the result
    is shadow_train followed by shadow_test.
    """
    n_train, n_test = splits.shadow_train.size, splits.shadow_test.size
    if min(n_train, n_test) < 2:
        raise ConfigError("cross-fitting needs at least 2 shadow rows per class")
    rng = np.random.default_rng(seeds[-2])
    perm_m = rng.permutation(splits.shadow_train)
    perm_n = rng.permutation(splits.shadow_test)
    folds = [
        (perm_m[: n_train // 2], perm_n[: n_test // 2]),
        (perm_m[n_train // 2 :], perm_n[n_test // 2 :]),
    ]
    blocks = []
    for i, cm in enumerate(shadow_compressed):
        probs = np.empty(n_train + n_test)
        for fit_fold, score_fold in ((0, 1), (1, 0)):
            clf = fit_sr_classifier(
                dataset, splits, shadow_original, cm, construction, clf_kind,
                seed=_seq_int(seeds[2 * i + fit_fold]), hyper=hyper,
                member_rows=folds[fit_fold][0], nonmember_rows=folds[fit_fold][1],
            )
            rows_m, rows_n = folds[score_fold]
            p_m = meta.score_proba(
                clf, _sr_features(shadow_original, cm, dataset, rows_m, construction)
            )
            p_n = meta.score_proba(
                clf, _sr_features(shadow_original, cm, dataset, rows_n, construction)
            )
            probs[np.searchsorted(splits.shadow_train, rows_m)] = p_m
            probs[n_train + np.searchsorted(splits.shadow_test, rows_n)] = p_n
        blocks.append(np.stack([1.0 - probs, probs], axis=1))
    return np.concatenate(blocks, axis=1)


def _stable_order(models: list[CompressedModel]) -> list[int]:
    return sorted(range(len(models)), key=lambda i: models[i].order_key)


def _seq_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])
