"""Dense feed-forward classifier engine.

Minimal numpy implementation of a fully connected softmax classifier:
forward pass with optional seeded dropout, cross-entropy SGD training with
L2 regularization and best-validation early stopping, constraint-aware
updates for compressed models, and a per-sample-clipped DP-SGD variant.

Everything is deterministic: the same model, data, config, and seed
reproduce a bitwise-identical trained model. Posteriors are produced by a
softmax at inference time only; the stored parameters are raw weights.
"""

from dataclasses import dataclass, field

import numpy as np

from . import constraints as cons
from .errors import InputError, ShapeError, TrainingError

LOSS_CLAMP = 1e-12  # keeps per-sample losses (and attack features) finite


def _norm_seed(seed: int) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


@dataclass
class TrainConfig:
    """Hyperparameters for one SGD training run."""

    learning_rate: float
    batch_size: int
    max_epochs: int
    l2_lambda: float = 0.0
    early_stop_patience: int = 0
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise InputError("batch_size must be positive")
        if self.max_epochs < 0:
            raise InputError("max_epochs must be non-negative")
        if self.l2_lambda < 0:
            raise InputError("l2_lambda must be non-negative")
        if self.early_stop_patience < 0:
            raise InputError("early_stop_patience must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must be in [0, 1)")


@dataclass
class DpConfig:
    """DP-SGD parameters.

    ``delta`` is recorded for reporting only and never enters the
    computation. ``noise_multiplier`` = 0 with a finite ``clip_norm``
    still clips.
    """

    clip_norm: float
    noise_multiplier: float
    delta: float = 1e-5

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise InputError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise InputError("noise_multiplier must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise InputError("delta must be in (0, 1)")


@dataclass
class FcnModel:
    """Dense classifier: per-layer weight matrices (out x in) and bias vectors.

    ReLU on hidden layers, identity on the output layer; softmax is applied
    only when posteriors are requested. ``dropout_rates`` holds one rate per
    hidden layer and is active only in train mode.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rates: list[float] = field(default_factory=list)

    def __post_init__(self):
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1:
            raise ShapeError("model needs at least one layer")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("weights/biases do not match layer_sizes")
        for l in range(n_layers):
            expect = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if self.weights[l].shape != expect:
                raise ShapeError(f"layer {l} weight shape {self.weights[l].shape} != {expect}")
            if self.biases[l].shape != (self.layer_sizes[l + 1],):
                raise ShapeError(f"layer {l} bias shape mismatch")
        if not self.dropout_rates:
            self.dropout_rates = [0.0] * (n_layers - 1)
        if len(self.dropout_rates) != n_layers - 1:
            raise ShapeError("one dropout rate per hidden layer expected")
        if any(not 0.0 <= p < 1.0 for p in self.dropout_rates):
            raise InputError("dropout rates must be in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "FcnModel":
        return FcnModel(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.dropout_rates),
        )

    def check_finite(self):
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise TrainingError("model parameters contain non-finite values")


def init_fcn(
    layer_sizes: list[int], seed: int, dropout_rates: list[float] | None = None
) -> FcnModel:
    """He-normal initialized model; biases start at zero."""
    rng = np.random.default_rng(_norm_seed(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if dropout_rates is None:
        dropout_rates = [0.1] * (len(layer_sizes) - 2)
    return FcnModel(list(layer_sizes), weights, biases, list(dropout_rates))


def one_hot(labels: np.ndarray | int, class_count: int) -> np.ndarray:
    """One-hot encode an integer label (or a vector of them)."""
    labels = np.asarray(labels)
    scalar = labels.ndim == 0
    labels = np.atleast_1d(labels).astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= class_count):
        raise InputError("label out of range")
    out = np.zeros((labels.shape[0], class_count))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out[0] if scalar else out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for stability."""
    z = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def _validate_inputs(model: FcnModel, inputs: np.ndarray) -> np.ndarray:
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2:
        raise ShapeError("inputs must be a 2-D matrix (rows = samples)")
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"input width {X.shape[1]} != model input dim {model.input_dim}")
    if not np.all(np.isfinite(X)):
        raise InputError("inputs contain non-finite values")
    return X


def _forward_pass(weights, biases, dropout_rates, X, rng):
    """Run the network, caching activations for backprop.

    Returns (hs, zs, masks, logits): hs[l] is the input to layer l (after
    dropout), zs[l] the pre-activation of hidden layer l, masks[l] the
    inverted-dropout mask (or None). ``rng`` is None outside train mode.
    """
    n_layers = len(weights)
    hs = [X]
    zs, masks = [], []
    h = X
    for l in range(n_layers - 1):
        z = h @ weights[l].T + biases[l]
        a = np.maximum(z, 0.0)
        p = dropout_rates[l]
        if rng is not None and p > 0.0:
            mask = (rng.random(a.shape) >= p) / (1.0 - p)
            a = a * mask
        else:
            mask = None
        zs.append(z)
        masks.append(mask)
        hs.append(a)
        h = a
    logits = h @ weights[-1].T + biases[-1]
    return hs, zs, masks, logits


def forward(
    model: FcnModel, inputs: np.ndarray, train_mode: bool = False, seed: int = 0
) -> np.ndarray:
    """Posterior batch for ``inputs``; each row is a softmax distribution.

    Dropout is applied (seeded) only when ``train_mode`` is True.
    """
    X = _validate_inputs(model, inputs)
    rng = np.random.default_rng(_norm_seed(seed)) if train_mode else None
    _, _, _, logits = _forward_pass(model.weights, model.biases, model.dropout_rates, X, rng)
    return softmax(logits)


def cross_entropy_loss(posterior: np.ndarray, label: int) -> float:
    """-log p_y with p_y clamped to at least 1e-12."""
    p = np.asarray(posterior, dtype=float)
    if p.ndim != 1:
        raise ShapeError("posterior must be a vector")
    label = int(label)
    if not 0 <= label < p.shape[0]:
        raise InputError("label out of range")
    return float(-np.log(max(p[label], LOSS_CLAMP)))


def cross_entropy_losses(posteriors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vector of per-sample cross-entropy losses."""
    P = np.asarray(posteriors, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or labels.shape != (P.shape[0],):
        raise ShapeError("posteriors (n, C) and labels (n,) expected")
    if np.any(labels < 0) or np.any(labels >= P.shape[1]):
        raise InputError("label out of range")
    p_y = P[np.arange(P.shape[0]), labels]
    return -np.log(np.maximum(p_y, LOSS_CLAMP))


def evaluate_accuracy(model: FcnModel, X: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy with dropout off."""
    P = forward(model, X)
    return float(np.mean(np.argmax(P, axis=1) == np.asarray(y)))


def _backward_mean(weights, hs, zs, masks, delta):
    """Mean-over-batch gradients given output delta (already divided by B)."""
    n_layers = len(weights)
    dWs = [None] * n_layers
    dbs = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        dWs[l] = delta.T @ hs[l]
        dbs[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ weights[l]
            if masks[l - 1] is not None:
                delta = delta * masks[l - 1]
            delta = delta * (zs[l - 1] > 0.0)
    return dWs, dbs


def loss_and_gradients(
    model: FcnModel,
    X: np.ndarray,
    labels: np.ndarray,
    l2_lambda: float = 0.0,
    train_mode: bool = False,
    seed: int = 0,
):
    """Objective value and its gradients for one batch.

    Objective = mean cross-entropy + (l2_lambda / 2) * sum of squared
    weights (biases unregularized). Returns (loss, dWs, dbs).
    """
    X = _validate_inputs(model, X)
    labels = np.asarray(labels, dtype=np.int64)
    Y = one_hot(labels, model.output_dim)
    rng = np.random.default_rng(_norm_seed(seed)) if train_mode else None
    hs, zs, masks, logits = _forward_pass(model.weights, model.biases, model.dropout_rates, X, rng)
    P = softmax(logits)
    loss = float(np.mean(cross_entropy_losses(P, labels)))
    if l2_lambda > 0:
        loss += 0.5 * l2_lambda * sum(float(np.sum(w * w)) for w in model.weights)
    delta = (P - Y) / X.shape[0]
    dWs, dbs = _backward_mean(model.weights, hs, zs, masks, delta)
    if l2_lambda > 0:
        dWs = [dW + l2_lambda * w for dW, w in zip(dWs, model.weights)]
    return loss, dWs, dbs


def per_sample_gradients(
    model: FcnModel,
    X: np.ndarray,
    labels: np.ndarray,
    train_mode: bool = False,
    seed: int = 0,
):
    """Per-sample cross-entropy gradients (no regularization).

    Returns (pWs, pbs, norms): pWs[l] has shape (B, out, in), pbs[l]
    shape (B, out), norms the per-sample global L2 gradient norm.
    """
    X = _validate_inputs(model, X)
    labels = np.asarray(labels, dtype=np.int64)
    Y = one_hot(labels, model.output_dim)
    rng = np.random.default_rng(_norm_seed(seed)) if train_mode else None
    hs, zs, masks, logits = _forward_pass(model.weights, model.biases, model.dropout_rates, X, rng)
    P = softmax(logits)
    n_layers = model.n_layers
    delta = P - Y
    pWs = [None] * n_layers
    pbs = [None] * n_layers
    sq = np.zeros(X.shape[0])
    for l in range(n_layers - 1, -1, -1):
        pWs[l] = np.einsum("bo,bi->boi", delta, hs[l])
        pbs[l] = delta
        sq += np.sum(pWs[l] ** 2, axis=(1, 2)) + np.sum(pbs[l] ** 2, axis=1)
        if l > 0:
            delta = delta @ model.weights[l]
            if masks[l - 1] is not None:
                delta = delta * masks[l - 1]
            delta = delta * (zs[l - 1] > 0.0)
    return pWs, pbs, np.sqrt(sq)


class _TrainState:
    """Mutable optimizer state that keeps a compression constraint satisfied.

    Parameterization depends on the constraint kind: plain or pruned models
    update weight matrices directly (pruned positions pinned to zero),
    clustered layers update shared centroids with summed member gradients,
    and fake-quant layers hold float latents that are snapped onto the int8
    grid for every forward pass (straight-through gradients).
    """

    def __init__(self, model: FcnModel, constraint: cons.CompressionConstraint | None):
        self.kind = constraint.kind if constraint is not None else None
        self.constraint = constraint
        self.biases = [b.copy() for b in model.biases]
        self.vel_b = [np.zeros_like(b) for b in model.biases]
        if self.kind == cons.CLUSTER:
            self.assignments = [a.copy() for a in constraint.cluster_assignments]
            self.centroids = [c.astype(float).copy() for c in constraint.cluster_centroids]
            self.vel = [np.zeros_like(c) for c in self.centroids]
            self.shapes = [w.shape for w in model.weights]
        else:
            self.latent = [w.copy() for w in model.weights]
            self.vel = [np.zeros_like(w) for w in model.weights]
            if self.kind == cons.PRUNE:
                self.masks = constraint.prune_masks
                for w, m in zip(self.latent, self.masks):
                    w[~m] = 0.0

    def effective_weights(self) -> list[np.ndarray]:
        if self.kind == cons.CLUSTER:
            return [
                c[a].reshape(shape)
                for c, a, shape in zip(self.centroids, self.assignments, self.shapes)
            ]
        if self.kind == cons.QUANT:
            return [cons.fake_quantize(w)[0] for w in self.latent]
        return self.latent

    def apply_update(self, dWs, dbs, lr: float, momentum: float):
        for l, (db, b) in enumerate(zip(dbs, self.biases)):
            self.vel_b[l] = momentum * self.vel_b[l] - lr * db
            b += self.vel_b[l]
        if self.kind == cons.CLUSTER:
            for l, dW in enumerate(dWs):
                # centroid gradient = sum of member-weight gradients
                g = np.bincount(
                    self.assignments[l], weights=dW.ravel(), minlength=self.centroids[l].shape[0]
                )
                self.vel[l] = momentum * self.vel[l] - lr * g
                self.centroids[l] += self.vel[l]
            return
        for l, dW in enumerate(dWs):
            if self.kind == cons.PRUNE:
                dW = dW * self.masks[l]
            self.vel[l] = momentum * self.vel[l] - lr * dW
            self.latent[l] += self.vel[l]
            if self.kind == cons.PRUNE:
                self.latent[l][~self.masks[l]] = 0.0

    def snapshot(self, template: FcnModel) -> FcnModel:
        return FcnModel(
            list(template.layer_sizes),
            [w.copy() for w in self.effective_weights()],
            [b.copy() for b in self.biases],
            list(template.dropout_rates),
        )


def _as_xy(dataset) -> tuple[np.ndarray, np.ndarray]:
    X, y = dataset
    return np.asarray(X, dtype=float), np.asarray(y, dtype=np.int64)


def train(
    model: FcnModel,
    train_set,
    valid_set,
    config: TrainConfig,
    constraint: cons.CompressionConstraint | None = None,
) -> FcnModel:
    """SGD training; returns the best-validation snapshot.

    ``train_set``/``valid_set`` are (X, y) pairs; ``valid_set`` may be
    None, in which case the final parameters are returned and early
    stopping is inactive. With ``early_stop_patience`` > 0, training stops
    after that many epochs without a validation-accuracy improvement.

    A supplied constraint is honored after every update: pruned positions
    stay exactly zero, clustered layers keep their shared values (each
    centroid moves by the summed gradient of its members), and fake-quant
    layers stay on the int8 grid of their latent weights.
    """
    X, y = _as_xy(train_set)
    X = _validate_inputs(model, X)
    if X.shape[0] == 0:
        raise InputError("training set is empty")
    if np.any(y < 0) or np.any(y >= model.output_dim):
        raise InputError("training labels out of range")
    rng = np.random.default_rng(_norm_seed(config.seed))
    state = _TrainState(model, constraint)
    n = X.shape[0]
    best: FcnModel | None = None
    best_acc = -np.inf
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            eff = state.effective_weights()
            hs, zs, masks, logits = _forward_pass(eff, state.biases, model.dropout_rates, X[idx], rng)
            P = softmax(logits)
            loss = float(np.mean(cross_entropy_losses(P, y[idx])))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            delta = (P - one_hot(y[idx], model.output_dim)) / idx.shape[0]
            dWs, dbs = _backward_mean(eff, hs, zs, masks, delta)
            if config.l2_lambda > 0:
                dWs = [dW + config.l2_lambda * w for dW, w in zip(dWs, eff)]
            state.apply_update(dWs, dbs, config.learning_rate, config.momentum)
        if valid_set is not None:
            snap = state.snapshot(model)
            Xv, yv = _as_xy(valid_set)
            acc = evaluate_accuracy(snap, Xv, yv)
            if acc > best_acc:
                best_acc, best, stale = acc, snap, 0
            else:
                stale += 1
                if config.early_stop_patience > 0 and stale >= config.early_stop_patience:
                    break
    out = best if best is not None else state.snapshot(model)
    out.check_finite()
    return out


def train_dpsgd(
    model: FcnModel,
    train_set,
    config: TrainConfig,
    dp: DpConfig,
    constraint: cons.CompressionConstraint | None = None,
) -> FcnModel:
    """DP-SGD: per-sample gradients clipped to ``dp.clip_norm``, then
    Gaussian noise with std sigma * C / batch_size added to the averaged
    gradient.

    Noise comes from a generator independent of the data/dropout stream,
    so sigma = 0 with a very large clip norm reproduces plain ``train``
    steps up to floating-point accumulation order.
    """
    X, y = _as_xy(train_set)
    X = _validate_inputs(model, X)
    if X.shape[0] == 0:
        raise InputError("training set is empty")
    rng = np.random.default_rng(_norm_seed(config.seed))
    rng_noise = np.random.default_rng(np.random.SeedSequence([_norm_seed(config.seed), 0x6E01]))
    state = _TrainState(model, constraint)
    n = X.shape[0]
    n_layers = model.n_layers
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            eff = state.effective_weights()
            hs, zs, masks, logits = _forward_pass(eff, state.biases, model.dropout_rates, X[idx], rng)
            P = softmax(logits)
            loss = float(np.mean(cross_entropy_losses(P, y[idx])))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            B = idx.shape[0]
            delta = P - one_hot(y[idx], model.output_dim)
            pWs = [None] * n_layers
            pbs = [None] * n_layers
            sq = np.zeros(B)
            for l in range(n_layers - 1, -1, -1):
                pWs[l] = np.einsum("bo,bi->boi", delta, hs[l])
                pbs[l] = delta
                sq += np.sum(pWs[l] ** 2, axis=(1, 2)) + np.sum(pbs[l] ** 2, axis=1)
                if l > 0:
                    delta = delta @ eff[l]
                    if masks[l - 1] is not None:
                        delta = delta * masks[l - 1]
                    delta = delta * (zs[l - 1] > 0.0)
            norms = np.sqrt(sq)
            factors = np.ones(B)
            nz = norms > 0
            factors[nz] = np.minimum(1.0, dp.clip_norm / norms[nz])
            std = dp.noise_multiplier * dp.clip_norm / B
            dWs, dbs = [], []
            for l in range(n_layers):
                dW = np.einsum("b,boi->oi", factors, pWs[l]) / B
                db = factors @ pbs[l] / B
                dW = dW + std * rng_noise.standard_normal(dW.shape)
                db = db + std * rng_noise.standard_normal(db.shape)
                if config.l2_lambda > 0:
                    dW = dW + config.l2_lambda * eff[l]
                dWs.append(dW)
                dbs.append(db)
            state.apply_update(dWs, dbs, config.learning_rate, config.momentum)
    out = state.snapshot(model)
    out.check_finite()
    return out
