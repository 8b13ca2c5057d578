"""Trainable correspondence classifiers with calibrated probability outputs.

Step 1 uses an L2-regularized logistic regression over z-standardized
features; step 2 uses a random forest averaging per-leaf positive fractions.
Both train deterministically from a seed and serialize to versioned JSON
documents whose round trip preserves predictions bit for bit.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ModelFormatError, TrainingError

FORMAT_VERSION = 1


@dataclass(frozen=True, slots=True)
class LabeledSample:
    """One training pair: feature vector plus same-animal label."""

    features: tuple[float, ...]
    label: bool


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise TrainingError("no training samples")
    X = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([bool(s.label) for s in samples], dtype=np.float64)
    if X.ndim != 2:
        raise TrainingError("samples have inconsistent feature lengths")
    return X, y


def stratified_subsample(samples, max_samples: int | None, seed: int = 0):
    """Cap a sample list while keeping the positive fraction, seeded.

    Exhaustive pairing of labeled tracks can produce far more negatives than
    a desk-scale forest needs; this keeps training tractable without touching
    the sample construction itself.
    """
    if max_samples is None or len(samples) <= max_samples:
        return list(samples)
    if max_samples < 1:
        raise InvalidInputError(f"max_samples must be >= 1, got {max_samples}")
    rng = np.random.default_rng(seed)
    pos = [i for i, s in enumerate(samples) if s.label]
    neg = [i for i, s in enumerate(samples) if not s.label]
    k_pos = min(len(pos), max(1, round(max_samples * len(pos) / len(samples))))
    k_neg = min(len(neg), max_samples - k_pos)
    keep = sorted(
        list(rng.choice(pos, size=k_pos, replace=False))
        + list(rng.choice(neg, size=k_neg, replace=False))
    )
    return [samples[i] for i in keep]


def _check_two_classes(y: np.ndarray):
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise TrainingError(
            f"training needs both classes, got {n_pos} positives of {len(y)} samples"
        )


def _class_weights(y: np.ndarray, class_weight: str | None) -> np.ndarray:
    if class_weight is None:
        return np.ones_like(y)
    if class_weight != "balanced":
        raise InvalidInputError(f"unknown class_weight {class_weight!r}")
    n = len(y)
    n_pos = y.sum()
    w = np.where(y > 0.5, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))
    return w


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(weights, bias, X, y, l2=0.0, sample_weight=None) -> float:
    """Weighted mean cross-entropy plus 0.5 * l2 * ||w||^2 (bias unpenalized)."""
    w = np.asarray(weights, dtype=np.float64)
    z = X @ w + bias
    per = np.logaddexp(0.0, z) - y * z
    if sample_weight is None:
        loss = per.mean()
    else:
        sw = np.asarray(sample_weight, dtype=np.float64)
        loss = float((per * sw).sum() / sw.sum())
    return float(loss + 0.5 * l2 * (w @ w))


def logistic_gradient(weights, bias, X, y, l2=0.0, sample_weight=None):
    """Analytic gradient of logistic_loss w.r.t. (weights, bias)."""
    w = np.asarray(weights, dtype=np.float64)
    z = X @ w + bias
    err = sigmoid(z) - y
    if sample_weight is None:
        err = err / len(y)
    else:
        sw = np.asarray(sample_weight, dtype=np.float64)
        err = err * sw / sw.sum()
    return X.T @ err + l2 * w, float(err.sum())


@dataclass(frozen=True, slots=True)
class LinearTrainConfig:
    l2: float = 1e-4
    epochs: int = 500
    lr: float = 0.5
    seed: int = 0
    class_weight: str | None = None

    def __post_init__(self):
        if self.l2 <= 0:
            raise InvalidInputError(f"l2 must be > 0, got {self.l2}")
        if self.epochs < 1 or self.lr <= 0:
            raise InvalidInputError("epochs must be >= 1 and lr > 0")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Logistic scorer over z-standardized features."""

    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.feature_means, dtype=np.float64)
        s = np.asarray(self.feature_stds, dtype=np.float64)
        if not (w.shape == m.shape == s.shape) or w.ndim != 1:
            raise InvalidInputError("weights, means and stds must be 1-D and equally long")
        if (s <= 0).any():
            raise InvalidInputError("feature stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "feature_means", m)
        object.__setattr__(self, "feature_stds", s)

    @property
    def n_features(self) -> int:
        return len(self.weights)


def train_linear(samples, config: LinearTrainConfig | None = None) -> LinearModel:
    """Deterministic full-batch gradient descent on the regularized logistic loss.

    Features are z-standardized with the stored statistics; a zero-variance
    column gets its std clamped to 1 (with a warning) so it contributes a
    constant. The seed is accepted for interface uniformity; full-batch
    descent from a zero start is already deterministic.
    """
    cfg = config or LinearTrainConfig()
    X, y = samples_to_arrays(samples)
    _check_two_classes(y)

    means = X.mean(axis=0)
    stds = X.std(axis=0)
    zero_var = stds == 0.0
    if zero_var.any():
        warnings.warn(
            f"{int(zero_var.sum())} zero-variance feature(s); std clamped to 1",
            stacklevel=2,
        )
        stds = np.where(zero_var, 1.0, stds)
    Z = (X - means) / stds

    sw = _class_weights(y, cfg.class_weight)
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(cfg.epochs):
        gw, gb = logistic_gradient(w, b, Z, y, l2=cfg.l2, sample_weight=sw)
        w = w - cfg.lr * gw
        b = b - cfg.lr * gb
    return LinearModel(weights=w, bias=b, feature_means=means, feature_stds=stds)


def predict_linear_many(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"expected (n, {model.n_features}) features, got shape {X.shape}"
        )
    Z = (X - model.feature_means) / model.feature_stds
    p = sigmoid(Z @ model.weights + model.bias)
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def predict_linear(model: LinearModel, features) -> float:
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape != (model.n_features,):
        raise InvalidInputError(
            f"expected {model.n_features} features, got shape {feats.shape}"
        )
    return float(predict_linear_many(model, feats[None, :])[0])


@dataclass(frozen=True, slots=True)
class ForestTrainConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    features_per_split: str | int = "sqrt"
    seed: int = 0
    class_weight: str | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidInputError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf < 1:
            raise InvalidInputError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 1:
            raise InvalidInputError(f"max_depth must be >= 1 or None, got {self.max_depth}")


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Flat-array binary tree: feature[i] == -1 marks a leaf.

    Split rule is ``x[feature] <= threshold`` with thresholds placed on
    observed data values, so any strictly monotone per-feature transform
    applied at both train and predict time leaves predictions unchanged.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=np.int32))
        object.__setattr__(self, "threshold", np.asarray(self.threshold, dtype=np.float64))
        object.__setattr__(self, "left", np.asarray(self.left, dtype=np.int32))
        object.__setattr__(self, "right", np.asarray(self.right, dtype=np.int32))
        object.__setattr__(self, "value", np.asarray(self.value, dtype=np.float64))
        n = len(self.feature)
        if not all(len(a) == n for a in (self.threshold, self.left, self.right, self.value)):
            raise InvalidInputError("tree arrays must have equal length")


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[DecisionTree, ...]
    n_features: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _resolve_mtry(features_per_split, d: int) -> int:
    if features_per_split == "sqrt":
        return max(1, int(math.sqrt(d)))
    m = int(features_per_split)
    if not (1 <= m <= d):
        raise InvalidInputError(f"features_per_split {m} outside [1, {d}]")
    return m


def _build_tree(X, y, sample_weight, rng, max_depth, min_leaf, mtry) -> DecisionTree:
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def alloc() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root_idx = np.flatnonzero(sample_weight > 0)
    stack = [(root_idx, 0, alloc())]
    while stack:
        idx, depth, node = stack.pop()
        w = sample_weight[idx]
        yy = y[idx]
        total = w.sum()
        pos = float(w @ yy)
        frac = pos / total
        value[node] = frac
        pure = yy.size == 0 or yy[0] == yy[-1] and (yy == yy[0]).all()
        if pure or total < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            continue

        parent_gini = 2.0 * frac * (1.0 - frac)
        feats = np.sort(rng.choice(d, size=mtry, replace=False))
        best_dec = 0.0
        best = None
        for f in feats:
            v = X[idx, f]
            order = np.argsort(v, kind="stable")
            sv = v[order]
            cw = np.cumsum(w[order])
            cp = np.cumsum(w[order] * yy[order])
            bounds = np.flatnonzero(sv[:-1] < sv[1:])
            if bounds.size == 0:
                continue
            wl = cw[bounds]
            pl = cp[bounds]
            wr = total - wl
            pr = pos - pl
            valid = (wl >= min_leaf) & (wr >= min_leaf)
            if not valid.any():
                continue
            ql = pl / wl
            qr = pr / wr
            child = (wl * 2.0 * ql * (1.0 - ql) + wr * 2.0 * qr * (1.0 - qr)) / total
            dec = np.where(valid, parent_gini - child, -np.inf)
            k = int(np.argmax(dec))  # first max -> smallest threshold
            if dec[k] > best_dec:
                best_dec = float(dec[k])
                best = (int(f), float(sv[bounds[k]]))
        if best is None:
            continue

        f, thr = best
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        l_node = alloc()
        r_node = alloc()
        left[node] = l_node
        right[node] = r_node
        stack.append((idx[~go_left], depth + 1, r_node))
        stack.append((idx[go_left], depth + 1, l_node))

    return DecisionTree(feature, threshold, left, right, value)


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    # per-tree streams derived from the master seed by index, so results do
    # not depend on build scheduling
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tree_index,)))


def _train_forest_arrays(X, y, cfg: ForestTrainConfig):
    n, d = X.shape
    mtry = _resolve_mtry(cfg.features_per_split, d)
    base_w = _class_weights(y, cfg.class_weight)
    trees = []
    inbag_counts = []
    for t in range(cfg.n_trees):
        rng = _tree_rng(cfg.seed, t)
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        trees.append(
            _build_tree(X, y, counts * base_w, rng, cfg.max_depth, cfg.min_leaf, mtry)
        )
        inbag_counts.append(counts)
    return trees, inbag_counts


def train_forest(samples, config: ForestTrainConfig | None = None) -> ForestModel:
    """Random forest over seeded bootstrap resamples with Gini-impurity splits.

    ``min_leaf`` counts bootstrap multiplicity (a sample drawn twice weighs 2).
    """
    cfg = config or ForestTrainConfig()
    X, y = samples_to_arrays(samples)
    _check_two_classes(y)
    trees, _ = _train_forest_arrays(X, y, cfg)
    return ForestModel(trees=tuple(trees), n_features=X.shape[1], seed=cfg.seed)


def train_forest_with_oob(samples, config: ForestTrainConfig | None = None):
    """Train a forest and report its out-of-bag accuracy at threshold 0.5."""
    cfg = config or ForestTrainConfig()
    X, y = samples_to_arrays(samples)
    _check_two_classes(y)
    trees, inbag = _train_forest_arrays(X, y, cfg)
    votes = np.zeros(len(y))
    counts = np.zeros(len(y))
    for tree, bag in zip(trees, inbag):
        oob = bag == 0
        if oob.any():
            votes[oob] += _tree_predict_many(tree, X[oob])
            counts[oob] += 1
    scored = counts > 0
    pred = votes[scored] / counts[scored] >= 0.5
    acc = float((pred == (y[scored] > 0.5)).mean()) if scored.any() else float("nan")
    model = ForestModel(trees=tuple(trees), n_features=X.shape[1], seed=cfg.seed)
    return model, acc


def _tree_predict_many(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=np.int32)
    while True:
        f = tree.feature[node]
        active = np.flatnonzero(f >= 0)
        if active.size == 0:
            break
        cur = node[active]
        go_left = X[active, f[active]] <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
    return tree.value[node]


def predict_forest_many(model: ForestModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"expected (n, {model.n_features}) features, got shape {X.shape}"
        )
    if len(X) == 0:
        return np.zeros(0)
    acc = np.zeros(len(X))
    for tree in model.trees:
        acc += _tree_predict_many(tree, X)
    return acc / model.n_trees


def predict_forest(model: ForestModel, features) -> float:
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape != (model.n_features,):
        raise InvalidInputError(
            f"expected {model.n_features} features, got shape {feats.shape}"
        )
    return float(predict_forest_many(model, feats[None, :])[0])


def model_to_doc(model) -> dict:
    """Versioned plain-JSON document for a trained model."""
    if isinstance(model, LinearModel):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "linear",
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "feature_means": model.feature_means.tolist(),
            "feature_stds": model.feature_stds.tolist(),
        }
    if isinstance(model, ForestModel):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "forest",
            "n_features": model.n_features,
            "seed": model.seed,
            "n_trees": model.n_trees,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in model.trees
            ],
        }
    raise InvalidInputError(f"cannot serialize model of type {type(model).__name__}")


def model_from_doc(doc) -> LinearModel | ForestModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format_version {version!r} (this build reads version {FORMAT_VERSION})"
        )
    kind = doc.get("kind")
    try:
        if kind == "linear":
            return LinearModel(
                weights=np.array(doc["weights"], dtype=np.float64),
                bias=float(doc["bias"]),
                feature_means=np.array(doc["feature_means"], dtype=np.float64),
                feature_stds=np.array(doc["feature_stds"], dtype=np.float64),
            )
        if kind == "forest":
            n_features = int(doc["n_features"])
            trees = []
            for td in doc["trees"]:
                tree = DecisionTree(
                    td["feature"], td["threshold"], td["left"], td["right"], td["value"]
                )
                internal = tree.feature >= 0
                if internal.any() and int(tree.feature[internal].max()) >= n_features:
                    raise ModelFormatError("tree references a feature index out of range")
                if tree.value.size and (tree.value.min() < 0 or tree.value.max() > 1):
                    raise ModelFormatError("leaf fractions must lie in [0, 1]")
                trees.append(tree)
            if len(trees) != int(doc["n_trees"]):
                raise ModelFormatError("n_trees does not match the tree list")
            return ForestModel(trees=tuple(trees), n_features=n_features, seed=int(doc["seed"]))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    doc = model_to_doc(model)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def load_model(path) -> LinearModel | ForestModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"{path}: cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        return model_from_doc(doc)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
