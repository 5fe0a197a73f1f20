"""Window-averaged prefix features and a gradient-boosted probabilistic classifier."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mmq import CHANNEL_NAMES, N_CHANNELS

WINDOW_SIZES = (10, 40, 120, 400, None)  # None = everything so far
MISSING_SENTINEL = -11.0
HORIZON = 1200
TRAIN_STRIDE = 20


class SchemaError(ValueError):
    pass


class TrainingError(ValueError):
    pass


def feature_names(window_sizes: Sequence = WINDOW_SIZES) -> list:
    names = []
    for ch in CHANNEL_NAMES:
        for w in window_sizes:
            names.append(f"{ch}_mean_{'all' if w is None else w}")
    names += [f"{ch}_missing_fraction" for ch in CHANNEL_NAMES]
    names.append("prefix_length")
    return names


def schema_hash(names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(names).encode()).hexdigest()[:16]


FEATURE_NAMES = feature_names()
N_FEATURES = len(FEATURE_NAMES)
SCHEMA = schema_hash(FEATURE_NAMES)


def feature_matrix(series: np.ndarray, window_sizes: Sequence = WINDOW_SIZES,
                   horizon: int = HORIZON) -> np.ndarray:
    """Features for every prefix ``series[:t]``, ``t = 1..len(series)``.

    Row ``t - 1`` only depends on the first ``t`` frames.
    """
    series = np.asarray(series, dtype=float)
    L = len(series)
    present = ~np.isnan(series)
    csum = np.vstack([np.zeros((1, N_CHANNELS)), np.cumsum(np.where(present, series, 0.0), axis=0)])
    ccnt = np.vstack([np.zeros((1, N_CHANNELS)), np.cumsum(present, axis=0)])
    t = np.arange(1, L + 1)
    out = np.empty((L, len(window_sizes) * N_CHANNELS + N_CHANNELS + 1))
    cols = []
    for w in window_sizes:
        start = np.zeros(L, dtype=int) if w is None else np.maximum(t - w, 0)
        s = csum[t] - csum[start]
        n = ccnt[t] - ccnt[start]
        with np.errstate(invalid="ignore", divide="ignore"):
            cols.append(np.where(n > 0, s / np.maximum(n, 1), MISSING_SENTINEL))
    # channel-major layout: channel 0 windows, channel 1 windows, ...
    stacked = np.stack(cols, axis=2)  # (L, channel, window)
    nw = len(window_sizes)
    out[:, :nw * N_CHANNELS] = stacked.reshape(L, N_CHANNELS * nw)
    out[:, nw * N_CHANNELS:nw * N_CHANNELS + N_CHANNELS] = 1.0 - ccnt[1:] / t[:, None]
    out[:, -1] = np.minimum(t / horizon, 1.0)
    return out


def extract_features(prefix: np.ndarray, window_sizes: Sequence = WINDOW_SIZES,
                     horizon: int = HORIZON) -> np.ndarray:
    """The 49-feature vector of one MMQ prefix (shape ``(t, 8)``, NaN = missing)."""
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim != 2 or len(prefix) == 0:
        raise ValueError("extract_features needs a non-empty (t, 8) prefix")
    t = len(prefix)
    feats = []
    for c in range(N_CHANNELS):
        for w in window_sizes:
            window = prefix[-w:, c] if w is not None else prefix[:, c]
            vals = window[~np.isnan(window)]
            feats.append(float(vals.mean()) if len(vals) else MISSING_SENTINEL)
    feats += [float(np.isnan(prefix[:, c]).mean()) for c in range(N_CHANNELS)]
    feats.append(min(t / horizon, 1.0))
    return np.array(feats)


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    schema: str = SCHEMA

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise SchemaError("X must be (n, f) with one label per row")


def sample_training_rows(series: np.ndarray, label: bool, stride: int = TRAIN_STRIDE):
    """Prefix features at ``t = 1, 1 + stride, ...`` with the hypothesis label."""
    feats = feature_matrix(series)
    rows = feats[::stride]
    return rows, np.full(len(rows), int(label))


# -- trees -------------------------------------------------------------------

@dataclass
class Tree:
    """Flat regression tree: node ``i`` splits on ``feature[i] <= threshold[i]``; leaves have feature -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            idx = np.flatnonzero(inner)
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_record(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_record(int(self.left[i])),
            "right": self.to_record(int(self.right[i])),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def visit(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "leaf" in node:
                value[i] = float(node["leaf"])
                return i
            feature[i] = int(node["feature"])
            threshold[i] = float(node["threshold"])
            left[i] = visit(node["left"])
            right[i] = visit(node["right"])
            return i

        visit(record)
        return cls(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


@dataclass
class BoostedModel:
    base_score: float
    trees: list
    learning_rate: float
    metadata: dict = field(default_factory=dict)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n_expected = self.metadata.get("n_features")
        if n_expected is not None and X.shape[1] != n_expected:
            raise SchemaError(f"expected {n_expected} features, got {X.shape[1]}")
        raw = np.full(len(X), self.base_score)
        for tree in self.trees:
            raw += self.learning_rate * tree.predict(X)
        return raw

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        # clipping keeps the output strictly inside (0, 1) in double precision
        return _sigmoid(np.clip(self.decision_function(X), -30.0, 30.0))

    def to_json(self) -> dict:
        return {
            "format": "egolane-boosted-model/1",
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "metadata": self.metadata,
            "trees": [t.to_record() for t in self.trees],
        }

    @classmethod
    def from_json(cls, data: dict) -> "BoostedModel":
        return cls(float(data["base_score"]), [Tree.from_record(t) for t in data["trees"]],
                   float(data["learning_rate"]), dict(data.get("metadata", {})))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "BoostedModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def predict_proba(model: BoostedModel, fv, schema: str = SCHEMA) -> float:
    """Probability that the hypothesis behind feature vector ``fv`` is the true lane."""
    if model.metadata.get("schema", schema) != schema:
        raise SchemaError(f"model schema {model.metadata.get('schema')} != feature schema {schema}")
    return float(model.predict_proba(np.asarray(fv, dtype=float).reshape(1, -1))[0])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def log_loss(y: np.ndarray, raw: np.ndarray) -> float:
    # log(1 + e^z) - y z, stable
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def _bin_edges(column: np.ndarray, max_bins: int) -> np.ndarray:
    values = np.unique(column)
    if len(values) > max_bins:
        values = np.unique(np.quantile(values, np.linspace(0.0, 1.0, max_bins), method="nearest"))
    return 0.5 * (values[:-1] + values[1:])


def _build_tree(codes: np.ndarray, edges: list, g: np.ndarray, h: np.ndarray, depth: int,
                min_samples_leaf: int) -> Tree:
    n, f = codes.shape
    nb = max((len(e) for e in edges), default=0) + 1
    offsets = np.arange(f) * nb
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def leaf_value(idx):
        hs = h[idx].sum()
        return float(g[idx].sum() / hs) if hs > 1e-12 else 0.0

    def grow(node, idx, d):
        value[node] = leaf_value(idx)
        if d >= depth or len(idx) < 2 * min_samples_leaf:
            return
        flat = (codes[idx] + offsets).ravel()
        gsum = np.bincount(flat, weights=np.repeat(g[idx], f), minlength=f * nb).reshape(f, nb)
        cnt = np.bincount(flat, minlength=f * nb).reshape(f, nb)
        gl = np.cumsum(gsum, axis=1)[:, :-1]
        nl = np.cumsum(cnt, axis=1)[:, :-1]
        G, N = g[idx].sum(), len(idx)
        gr, nr = G - gl, N - nl
        valid = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = np.where(valid, gl ** 2 / np.maximum(nl, 1) + gr ** 2 / np.maximum(nr, 1) - G ** 2 / N, -np.inf)
        for j, e in enumerate(edges):
            gain[j, len(e):] = -np.inf
        best = int(np.argmax(gain))
        j, b = divmod(best, nb - 1)
        if not gain[j, b] > 1e-12:
            return
        mask = codes[idx, j] <= b
        feature[node] = j
        threshold[node] = float(edges[j][b])
        left[node], right[node] = new_node(), new_node()
        grow(left[node], idx[mask], d + 1)
        grow(right[node], idx[~mask], d + 1)

    grow(new_node(), np.arange(n), 0)
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


def fit(data: TrainingSet, rounds: int = 100, depth: int = 3, learning_rate: float = 0.1,
        max_bins: int = 255, min_samples_leaf: int = 1, history: list | None = None) -> BoostedModel:
    """Stagewise log-loss gradient boosting.

    Each round fits a depth-limited regression tree to the residuals ``y - p``
    and sets leaf values by one Newton step. A round that would raise the
    training loss has its leaves halved until it does not. ``history``
    collects the training loss after every round when given.
    """
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    X, y = data.X, data.y
    n_pos, n_neg = int((y == 1).sum()), int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("training data must contain both classes")
    base = math.log(n_pos / n_neg)
    # canonical row order so sums, and therefore split choices, ignore input order
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[order], y[order]
    edges = [_bin_edges(X[:, j], max_bins) for j in range(X.shape[1])]
    codes = np.column_stack([np.searchsorted(edges[j], X[:, j], side="left") for j in range(X.shape[1])])

    raw = np.full(len(y), base)
    loss = log_loss(y, raw)
    if history is not None:
        history.append(loss)
    trees = []
    for _ in range(rounds):
        p = _sigmoid(raw)
        tree = _build_tree(codes, edges, y - p, p * (1.0 - p), depth, min_samples_leaf)
        leaves = tree.apply(X)
        for _ in range(60):
            candidate = raw + learning_rate * tree.value[leaves]
            new_loss = log_loss(y, candidate)
            if new_loss <= loss:
                break
            tree.value = 0.5 * tree.value
        else:
            tree.value = np.zeros_like(tree.value)
            candidate, new_loss = raw, loss
        raw, loss = candidate, new_loss
        trees.append(tree)
        if history is not None:
            history.append(loss)

    metadata = {
        "rounds": rounds, "depth": depth, "max_bins": max_bins, "min_samples_leaf": min_samples_leaf,
        "n_pos": n_pos, "n_neg": n_neg, "n_features": int(X.shape[1]), "schema": data.schema,
    }
    return BoostedModel(base, trees, learning_rate, metadata)
