"""Dataset ingestion, synthetic generation, and split protocol.

Covers three needs of a membership audit: loading tabular CSV datasets
(numeric features plus an integer label column), generating Gaussian
class-cluster data with a controllable overfitting knob, and carving a
dataset into the four disjoint index sets the attacks rely on
(victim train/test, shadow train/test). Membership ground truth always
derives from the split plan, never from model behavior.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InputError, SchemaError, SizeError


@dataclass
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise InputError("labels length must match feature rows")
        if not np.all(np.isfinite(self.features)):
            raise InputError("features contain non-finite values")
        if self.class_count < 1:
            raise InputError("class_count must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise SchemaError("labels out of range for class_count")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def xy(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(features, labels) restricted to the given row indices."""
        idx = np.asarray(indices, dtype=np.int64)
        return self.features[idx], self.labels[idx]


@dataclass
class CsvSchema:
    """How to read a CSV file: feature columns plus one integer label column."""

    label_column: int = -1
    has_header: bool = False
    class_count: int | None = None
    delimiter: str = ","


def load_csv(path, schema: CsvSchema | None = None) -> TabularDataset:
    """Load a tabular dataset, preserving row order.

    Malformed rows raise a parse error naming the 1-based line number;
    labels outside the declared class range raise a schema error.
    """
    schema = schema or CsvSchema()
    rows, labels = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for lineno, row in enumerate(reader, start=1):
            if schema.has_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"line {lineno}: expected {width} columns, got {len(row)}")
            label_col = schema.label_column % len(row)
            feats = []
            for col, cell in enumerate(row):
                if col == label_col:
                    continue
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise DataError(f"line {lineno}: non-numeric feature value {cell!r}") from None
            try:
                label = int(float(row[label_col]))
                if float(row[label_col]) != label:
                    raise ValueError
            except ValueError:
                raise DataError(f"line {lineno}: non-integer label {row[label_col]!r}") from None
            if label < 0:
                raise SchemaError(f"line {lineno}: negative label {label}")
            if schema.class_count is not None and label >= schema.class_count:
                raise SchemaError(
                    f"line {lineno}: label {label} out of range [0, {schema.class_count})"
                )
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    class_count = schema.class_count if schema.class_count is not None else int(labels.max()) + 1
    return TabularDataset(features, labels, class_count, provenance=str(path))


def synth_generate(
    n: int,
    d: int,
    class_count: int,
    cluster_spread: float,
    seed: int = 0,
    label_noise: float = 0.0,
) -> TabularDataset:
    """Gaussian class clusters with controllable difficulty.

    Class means are standard-normal draws; samples scatter around their
    class mean with standard deviation ``cluster_spread``. Small spreads
    give a separable problem, large spreads (with few samples) raise the
    train-test gap of a fitted model. ``label_noise`` relabels that
    fraction of rows to a uniformly random other class, which caps how
    fast a model can memorize and fattens the loss tail of hard examples.
    Deterministic per seed.
    """
    if n < class_count:
        raise InputError("need at least one sample per class")
    if d < 1:
        raise InputError("need at least one feature")
    if cluster_spread < 0:
        raise InputError("cluster_spread must be non-negative")
    if not 0.0 <= label_noise < 1.0:
        raise InputError("label_noise must be in [0, 1)")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    means = rng.normal(0.0, 1.0, size=(class_count, d))
    labels = np.arange(n, dtype=np.int64) % class_count
    features = means[labels] + cluster_spread * rng.normal(0.0, 1.0, size=(n, d))
    if label_noise > 0.0 and class_count > 1:
        flips = rng.random(n) < label_noise
        offsets = rng.integers(1, class_count, size=n)
        labels = labels.copy()
        labels[flips] = (labels[flips] + offsets[flips]) % class_count
    return TabularDataset(features, labels, class_count, provenance="synth")


@dataclass
class SplitSizes:
    victim_train: int
    victim_test: int
    shadow_train: int
    shadow_test: int

    def total(self) -> int:
        return self.victim_train + self.victim_test + self.shadow_train + self.shadow_test


@dataclass
class SplitPlan:
    """Disjoint index sets for the victim and shadow worlds.

    ``victim_train`` rows are the members whose leakage the audit
    measures; ``victim_test`` rows are the non-members. The shadow pair
    plays the same roles on the attacker's side.
    """

    victim_train: np.ndarray
    victim_test: np.ndarray
    shadow_train: np.ndarray
    shadow_test: np.ndarray
    seed: int = 0

    def components(self) -> dict[str, np.ndarray]:
        return {
            "victim_train": self.victim_train,
            "victim_test": self.victim_test,
            "shadow_train": self.shadow_train,
            "shadow_test": self.shadow_test,
        }

    def check_disjoint(self):
        """Brute-force pairwise disjointness check; runs on every split."""
        items = list(self.components().items())
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                overlap = set(items[i][1].tolist()) & set(items[j][1].tolist())
                if overlap:
                    raise SizeError(
                        f"split components {items[i][0]} and {items[j][0]} overlap: {sorted(overlap)[:5]}"
                    )


def make_split(dataset: TabularDataset, sizes: SplitSizes, seed: int = 0) -> SplitPlan:
    """Randomly assign disjoint victim/shadow train/test index sets."""
    if sizes.total() > dataset.n_samples:
        raise SizeError(
            f"requested {sizes.total()} samples, dataset has {dataset.n_samples}"
        )
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    perm = rng.permutation(dataset.n_samples)
    bounds = np.cumsum(
        [0, sizes.victim_train, sizes.victim_test, sizes.shadow_train, sizes.shadow_test]
    )
    parts = [np.sort(perm[bounds[i] : bounds[i + 1]]) for i in range(4)]
    plan = SplitPlan(*parts, seed=seed)
    plan.check_disjoint()
    return plan


@dataclass
class FinetunePlan:
    """Partition of the victim train set into fine-tuned and held-out rows."""

    fraction: float
    fine_indices: np.ndarray
    held_indices: np.ndarray
    seed: int = 0


def make_finetune_split(victim_train: np.ndarray, fraction: float, seed: int = 0) -> FinetunePlan:
    """Select a fraction of the victim train rows for fine-tuning.

    The union of the two returned index sets is exactly ``victim_train``.
    """
    if not 0.0 < fraction <= 1.0:
        raise InputError("fraction must be in (0, 1]")
    victim_train = np.asarray(victim_train, dtype=np.int64)
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    perm = rng.permutation(victim_train.shape[0])
    k = int(round(fraction * victim_train.shape[0]))
    k = max(1, k)
    fine = np.sort(victim_train[perm[:k]])
    held = np.sort(victim_train[perm[k:]])
    return FinetunePlan(fraction, fine, held, seed)
