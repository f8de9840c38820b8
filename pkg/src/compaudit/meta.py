"""Binary meta-classifiers for membership attacks.

Three interchangeable models, all seeded and deterministic:

- "lr": logistic regression, full-batch gradient descent on binary
  cross-entropy;
- "rf": random forest of CART trees with Gini splits, per-node feature
  subsampling of sqrt(d), bootstrap bagging, and leaf-fraction
  probabilities averaged over trees;
- "mlp": one-hidden-layer perceptron (ReLU, sigmoid output) trained with
  full-batch gradient descent on binary cross-entropy.

``score_proba`` always lands in [0, 1]; ``predict`` thresholds at exactly
0.5 with ties resolved to member.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, InputError, ShapeError

_SIG_CLIP = 1e-12


@dataclass
class MetaRecord:
    """One attack-training row: a feature vector and a membership bit."""

    features: np.ndarray
    membership: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 1:
            raise ShapeError("meta-record features must be a vector")
        if not np.all(np.isfinite(self.features)):
            raise InputError("meta-record features must be finite")
        if self.membership not in (0, 1):
            raise InputError("membership label must be 0 or 1")


def records_to_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise InputError("no meta-records supplied")
    lengths = {r.features.shape[0] for r in records}
    if len(lengths) != 1:
        raise ShapeError(f"inconsistent feature lengths {sorted(lengths)}")
    X = np.stack([r.features for r in records])
    y = np.array([r.membership for r in records], dtype=np.int64)
    return X, y


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, _SIG_CLIP, 1.0 - _SIG_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class LrHyper:
    learning_rate: float = 0.5
    epochs: int = 1500
    l2: float = 1e-4


@dataclass
class RfHyper:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 1
    bootstrap: bool = True


@dataclass
class MlpHyper:
    hidden: int = 64
    learning_rate: float = 0.1
    epochs: int = 400
    l2: float = 1e-4
    dropout: float = 0.0        # hidden-layer dropout during fitting only
    input_dropout: float = 0.0  # feature dropout during fitting only
    standardize: bool = True


class LogisticMeta:
    """Logistic regression; zero-initialized, so fitting is deterministic."""

    kind = "lr"

    def __init__(self, weights: np.ndarray, bias: float, seed: int = 0):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)
        self.seed = seed

    def score_proba(self, features: np.ndarray):
        X = _check_features(features, self.weights.shape[0])
        p = _sigmoid(X @ self.weights + self.bias)
        return float(p[0]) if X.shape[0] == 1 and np.asarray(features).ndim == 1 else p


def lr_loss_and_gradients(weights, bias, X, y, l2: float = 0.0):
    """BCE objective and gradients for logistic regression (gradcheck hook)."""
    p = _sigmoid(X @ weights + bias)
    loss = bce_loss(p, y) + 0.5 * l2 * float(np.sum(weights**2))
    err = (p - y) / X.shape[0]
    gw = X.T @ err + l2 * weights
    gb = float(np.sum(err))
    return loss, gw, gb


def _fit_lr(X, y, hyper: LrHyper, seed: int) -> LogisticMeta:
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(hyper.epochs):
        _, gw, gb = lr_loss_and_gradients(w, b, X, y, hyper.l2)
        w = w - hyper.learning_rate * gw
        b = b - hyper.learning_rate * gb
    return LogisticMeta(w, b, seed)


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "prob")

    def __init__(self, prob=None, feature=None, threshold=None, left=None, right=None):
        self.prob = prob
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right

    def is_leaf(self):
        return self.left is None


def _gini_best_split(X, y, feature_ids, min_leaf):
    """Best (gini, feature, threshold) over candidate features, or None.

    For each feature the samples are sorted and every midpoint between
    distinct consecutive values is scored with the weighted Gini impurity,
    vectorized through cumulative positive counts.
    """
    n = y.shape[0]
    total_pos = int(y.sum())
    best = None
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        cum_pos = np.cumsum(ys)
        left_n = np.arange(1, n)
        valid = xs[1:] != xs[:-1]
        if min_leaf > 1:
            valid &= (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not np.any(valid):
            continue
        lp = cum_pos[:-1]
        rn = n - left_n
        rp = total_pos - lp
        gini_l = 1.0 - (lp / left_n) ** 2 - ((left_n - lp) / left_n) ** 2
        gini_r = 1.0 - (rp / rn) ** 2 - ((rn - rp) / rn) ** 2
        score = (left_n * gini_l + rn * gini_r) / n
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[0]:
            best = (float(score[i]), int(f), float((xs[i] + xs[i + 1]) / 2.0))
    return best


def _build_tree(X, y, rng, depth, hyper: RfHyper, n_sub):
    node = _TreeNode(prob=float(y.mean()))
    if depth >= hyper.max_depth or y.shape[0] < 2 * hyper.min_leaf:
        return node
    if y.min() == y.max():
        return node
    feature_ids = rng.permutation(X.shape[1])[:n_sub]
    best = _gini_best_split(X, y, feature_ids, hyper.min_leaf)
    if best is None:
        return node
    _, f, thr = best
    mask = X[:, f] < thr
    node.feature = f
    node.threshold = thr
    node.left = _build_tree(X[mask], y[mask], rng, depth + 1, hyper, n_sub)
    node.right = _build_tree(X[~mask], y[~mask], rng, depth + 1, hyper, n_sub)
    return node


def _tree_proba(node, X, out, idx):
    if node.is_leaf():
        out[idx] = node.prob
        return
    mask = X[idx, node.feature] < node.threshold
    _tree_proba(node.left, X, out, idx[mask])
    _tree_proba(node.right, X, out, idx[~mask])


class RandomForestMeta:
    """Bagged CART forest; probability = mean leaf member-fraction."""

    kind = "rf"

    def __init__(self, trees, n_features: int, seed: int = 0):
        self.trees = trees
        self.n_features = n_features
        self.seed = seed

    def score_proba(self, features: np.ndarray):
        X = _check_features(features, self.n_features)
        acc = np.zeros(X.shape[0])
        buf = np.empty(X.shape[0])
        for tree in self.trees:
            _tree_proba(tree, X, buf, np.arange(X.shape[0]))
            acc += buf
        p = acc / len(self.trees)
        return float(p[0]) if X.shape[0] == 1 and np.asarray(features).ndim == 1 else p


def _fit_rf(X, y, hyper: RfHyper, seed: int) -> RandomForestMeta:
    n, d = X.shape
    n_sub = max(1, int(np.floor(np.sqrt(d))))
    seeds = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF).spawn(hyper.n_trees)
    trees = []
    for t in range(hyper.n_trees):
        rng = np.random.default_rng(seeds[t])
        if hyper.bootstrap:
            idx = rng.integers(0, n, n)
        else:
            idx = np.arange(n)
        trees.append(_build_tree(X[idx], y[idx], rng, 0, hyper, n_sub))
    return RandomForestMeta(trees, d, seed)


class MlpMeta:
    """One-hidden-layer binary classifier with sigmoid output.

    Inputs are standardized with the training mean and deviation, so
    mixed-scale features (posterior entries next to loss values) train
    stably.
    """

    kind = "mlp"

    def __init__(self, W1, b1, w2, b2: float, seed: int = 0, mean=None, std=None):
        self.W1 = np.asarray(W1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.b2 = float(b2)
        self.seed = seed
        d = self.W1.shape[1]
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        self.std = np.ones(d) if std is None else np.asarray(std, dtype=float)

    def score_proba(self, features: np.ndarray):
        X = _check_features(features, self.W1.shape[1])
        X = (X - self.mean) / self.std
        h = np.maximum(X @ self.W1.T + self.b1, 0.0)
        p = _sigmoid(h @ self.w2 + self.b2)
        return float(p[0]) if X.shape[0] == 1 and np.asarray(features).ndim == 1 else p


def mlp_loss_and_gradients(W1, b1, w2, b2, X, y, l2: float = 0.0, hidden_mask=None):
    """BCE objective and gradients for the MLP meta-classifier.

    ``hidden_mask`` is an inverted-dropout mask applied to the hidden
    activations (training-time regularization); None disables it.
    """
    z1 = X @ W1.T + b1
    h = np.maximum(z1, 0.0)
    if hidden_mask is not None:
        h = h * hidden_mask
    p = _sigmoid(h @ w2 + b2)
    loss = bce_loss(p, y) + 0.5 * l2 * (float(np.sum(W1**2)) + float(np.sum(w2**2)))
    err = (p - y) / X.shape[0]
    gw2 = h.T @ err + l2 * w2
    gb2 = float(np.sum(err))
    dh = np.outer(err, w2)
    if hidden_mask is not None:
        dh = dh * hidden_mask
    dh = dh * (z1 > 0.0)
    gW1 = dh.T @ X + l2 * W1
    gb1 = dh.sum(axis=0)
    return loss, gW1, gb1, gw2, gb2


def _fit_mlp(X, y, hyper: MlpHyper, seed: int) -> MlpMeta:
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    if hyper.standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std < 1e-12] = 1.0
    else:
        mean = np.zeros(X.shape[1])
        std = np.ones(X.shape[1])
    Xs = (X - mean) / std
    d = X.shape[1]
    W1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(hyper.hidden, d))
    b1 = np.zeros(hyper.hidden)
    w2 = rng.normal(0.0, np.sqrt(1.0 / hyper.hidden), size=hyper.hidden)
    b2 = 0.0
    for _ in range(hyper.epochs):
        mask = None
        if hyper.dropout > 0.0:
            mask = (rng.random((X.shape[0], hyper.hidden)) >= hyper.dropout) / (1.0 - hyper.dropout)
        Xe = Xs
        if hyper.input_dropout > 0.0:
            keep = (rng.random(Xs.shape) >= hyper.input_dropout) / (1.0 - hyper.input_dropout)
            Xe = Xs * keep
        _, gW1, gb1, gw2, gb2 = mlp_loss_and_gradients(W1, b1, w2, b2, Xe, y, hyper.l2, mask)
        W1 = W1 - hyper.learning_rate * gW1
        b1 = b1 - hyper.learning_rate * gb1
        w2 = w2 - hyper.learning_rate * gw2
        b2 = b2 - hyper.learning_rate * gb2
    return MlpMeta(W1, b1, w2, b2, seed, mean=mean, std=std)


_DEFAULT_HYPERS = {"lr": LrHyper, "rf": RfHyper, "mlp": MlpHyper}
_FITTERS = {"lr": _fit_lr, "rf": _fit_rf, "mlp": _fit_mlp}


def fit(kind: str, records, hyper=None, seed: int = 0):
    """Train a meta-classifier of the given kind on labeled meta-records."""
    if kind not in _FITTERS:
        raise InputError(f"unknown meta-classifier kind {kind!r}")
    X, y = records_to_arrays(records)
    if y.min() == y.max():
        raise DegenerateDataError("meta-records contain a single class")
    if hyper is None:
        hyper = _DEFAULT_HYPERS[kind]()
    return _FITTERS[kind](X, y, hyper, int(seed) & 0xFFFFFFFFFFFFFFFF)


def fit_arrays(kind: str, X: np.ndarray, y: np.ndarray, hyper=None, seed: int = 0):
    """Array-based variant of ``fit`` for bulk callers."""
    records = [MetaRecord(X[i], int(y[i])) for i in range(X.shape[0])]
    return fit(kind, records, hyper=hyper, seed=seed)


def score_proba(clf, features: np.ndarray):
    """Membership probability in [0, 1] for one vector or a batch."""
    return clf.score_proba(features)


def predict(clf, features: np.ndarray):
    """Membership decision at threshold 0.5; ties go to member."""
    p = score_proba(clf, features)
    if np.isscalar(p):
        return p >= 0.5
    return np.asarray(p) >= 0.5


def _check_features(features, expected: int) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != expected:
        raise ShapeError(f"feature length {X.shape[-1]} != {expected}")
    return X
