"""From-scratch regressors mapping soil features to per-plant ratings.

Five model kinds share one lifecycle: standardize features with the
training-set scaling, fit one independent regressor per plant column,
predict continuous scores, then round and clamp to ratings in 1..5.
All randomized kinds draw per-tree substreams from the master seed, and
the substream for tree t does not depend on the plant column, so
permuting label columns permutes predictions and nothing else.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ratings import (
    FEATURE_NAMES,
    RATING_MAX,
    RATING_MIN,
    FullRatingMatrix,
    SoilProfile,
    round_half_up,
)

MODEL_KINDS = ("KNN", "Linear", "DecisionTree", "RandomForest", "GradientBoost")

DEFAULT_HYPERPARAMS = {
    "KNN": {"k": 5},
    "Linear": {"ridge_lambda": 1e-6},
    "DecisionTree": {"max_depth": 12, "min_leaf": 2},
    "RandomForest": {"trees": 100, "max_depth": 12, "feature_subsample": 2, "bootstrap": True},
    "GradientBoost": {"rounds": 100, "learning_rate": 0.1, "tree_depth": 3},
}

# Tree splits are searched over per-feature quantile bins, so resolution
# follows data density instead of the raw feature span.
HISTOGRAM_BINS = 256

MODEL_FORMAT = "microfarm-model/1"


class DataError(ValueError):
    """Raised when a dataset cannot support the requested operation."""


class ModelError(ValueError):
    """Raised for unknown kinds, bad hyperparameters, or bad arguments."""


# ---------------------------------------------------------------------------
# dataset


class Dataset:
    """Aligned soil features (m x 5) and per-plant numeric labels (m x n).

    Feature scaling parameters (per-column mean and stddev) are computed at
    construction; fitting standardizes with the training set's values.
    """

    def __init__(self, features, labels) -> None:
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != len(FEATURE_NAMES):
            raise DataError(f"features must be m x {len(FEATURE_NAMES)}, got {features.shape}")
        if labels.ndim != 2 or labels.shape[0] != features.shape[0]:
            raise DataError("labels must be 2-D with one row per feature row")
        if not np.all(np.isfinite(features)) or not np.all(np.isfinite(labels)):
            raise DataError("features and labels must be finite")
        self.features = features
        self.labels = labels
        if features.shape[0]:
            self.mean = features.mean(axis=0)
            self.std = features.std(axis=0)
        else:  # legal empty set; identity scaling instead of NaN warnings
            self.mean = np.zeros(features.shape[1])
            self.std = np.ones(features.shape[1])

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n_plants(self) -> int:
        return self.labels.shape[1]


def dataset_from_soils(soils, ratings: FullRatingMatrix) -> Dataset:
    features = np.array([s.as_array() for s in soils], dtype=np.float64)
    return Dataset(features, ratings.values)


def split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded uniform shuffle, then round(test_fraction*m) rows for test."""
    if not 0.0 < test_fraction < 1.0:
        raise ModelError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if dataset.m < 5:
        raise DataError(f"need at least 5 rows to split, got {dataset.m}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perm = rng.permutation(dataset.m)
    n_test = int(round_half_up(test_fraction * dataset.m))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    return (
        Dataset(dataset.features[train_idx], dataset.labels[train_idx]),
        Dataset(dataset.features[test_idx], dataset.labels[test_idx]),
    )


# ---------------------------------------------------------------------------
# regression trees on pre-binned features


def _quantile_edges(x: np.ndarray, bins: int = HISTOGRAM_BINS) -> list[np.ndarray]:
    """Per-feature candidate split thresholds at evenly spaced quantiles."""
    qs = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    return [np.unique(np.quantile(x[:, f], qs)) for f in range(x.shape[1])]


def _bin_columns(x: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    # bin(v) <= b exactly when v <= edges[b], matching the x <= thr predicate
    out = np.empty(x.shape, dtype=np.int64)
    for f, e in enumerate(edges):
        out[:, f] = np.searchsorted(e, x[:, f], side="left")
    return out


def _grow_tree(
    bins: np.ndarray,
    y: np.ndarray,
    edges: list[np.ndarray],
    max_depth: int,
    min_leaf: int,
    rng: np.random.Generator | None = None,
    n_sub: int | None = None,
    train_out: np.ndarray | None = None,
) -> dict:
    """Greedy variance-reduction regression tree over binned features.

    Returns parallel node arrays; internal nodes hold a feature index and a
    threshold (go left when x <= threshold), leaves hold feature -1.  When
    train_out is given, leaf values are scattered back to the training rows.
    """
    n_features = bins.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        sub = y[idx]
        count = idx.size
        total = float(sub.sum())
        value[node] = total / count
        if depth >= max_depth or count < 2 * min_leaf:
            if train_out is not None:
                train_out[idx] = value[node]
            continue
        if rng is not None and n_sub is not None and n_sub < n_features:
            cand = np.sort(rng.choice(n_features, size=n_sub, replace=False))
        else:
            cand = range(n_features)
        parent_score = total * total / count
        best = None  # (score, feature, split bin)
        for f in cand:
            e = edges[f]
            if e.size == 0:
                continue
            b = bins[idx, f]
            cnt = np.bincount(b, minlength=e.size + 1)
            sums = np.bincount(b, weights=sub, minlength=e.size + 1)
            nl = np.cumsum(cnt)[:-1]
            sl = np.cumsum(sums)[:-1]
            nr = count - nl
            sr = total - sl
            ok = (nl >= min_leaf) & (nr >= min_leaf)
            if not ok.any():
                continue
            score = np.where(
                ok,
                sl * sl / np.maximum(nl, 1) + sr * sr / np.maximum(nr, 1),
                -np.inf,
            )
            pos = int(np.argmax(score))
            if score[pos] > parent_score + 1e-12 and (best is None or score[pos] > best[0]):
                best = (float(score[pos]), int(f), pos)
        if best is None:
            if train_out is not None:
                train_out[idx] = value[node]
            continue
        _, f, split_bin = best
        go_left = bins[idx, f] <= split_bin
        feature[node] = f
        threshold[node] = float(edges[f][split_bin])
        lid, rid = new_node(), new_node()
        left[node], right[node] = lid, rid
        stack.append((rid, idx[~go_left], depth + 1))
        stack.append((lid, idx[go_left], depth + 1))
    return {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "value": np.array(value, dtype=np.float64),
    }


def _tree_predict(tree: dict, x: np.ndarray) -> np.ndarray:
    feature, threshold = tree["feature"], tree["threshold"]
    left, right = tree["left"], tree["right"]
    node = np.zeros(x.shape[0], dtype=np.int64)
    rows = np.flatnonzero(feature[node] >= 0)
    while rows.size:
        at = node[rows]
        go_left = x[rows, feature[at]] <= threshold[at]
        node[rows] = np.where(go_left, left[at], right[at])
        rows = rows[feature[node[rows]] >= 0]
    return tree["value"][node]


# ---------------------------------------------------------------------------
# model lifecycle


@dataclass
class TrainedModel:
    kind: str
    hyperparams: dict
    mean: np.ndarray
    std: np.ndarray
    params: dict
    seed: int
    train_rows: int
    train_ms: float
    train_losses: np.ndarray | None = None  # GradientBoost only, not persisted

    @property
    def n_plants(self) -> int:
        if self.kind == "KNN":
            return self.params["labels"].shape[1]
        if self.kind == "Linear":
            return self.params["weights"].shape[1]
        return len(self.params["plants"])


def _check_hyperparams(kind: str, hp: dict) -> dict:
    merged = dict(DEFAULT_HYPERPARAMS[kind])
    for key, val in hp.items():
        if key not in merged:
            raise ModelError(f"unknown hyperparameter {key!r} for kind {kind}")
        merged[key] = val
    positive = {k: v for k, v in merged.items() if k != "bootstrap"}
    for key, val in positive.items():
        if not val > 0:
            raise ModelError(f"hyperparameter {key} must be positive, got {val}")
    return merged


def _standardize(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (features - mean) / std


def _tree_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def fit(kind: str, train: Dataset, seed: int = 0, hyperparams: dict | None = None) -> TrainedModel:
    """Fit one regressor per plant column on standardized features."""
    if kind not in MODEL_KINDS:
        raise ModelError(f"unknown model kind {kind!r}, expected one of {', '.join(MODEL_KINDS)}")
    if train.m == 0:
        raise DataError("training set is empty")
    bad = np.flatnonzero(train.std == 0.0)
    if bad.size:
        raise DataError(f"feature column {FEATURE_NAMES[bad[0]]!r} has zero variance")
    hp = _check_hyperparams(kind, hyperparams or {})
    start = time.perf_counter()
    xs = _standardize(train.features, train.mean, train.std)
    y = train.labels
    losses = None
    if kind == "KNN":
        params = {"points": xs.copy(), "labels": y.copy()}
    elif kind == "Linear":
        params = _fit_linear(xs, y, hp["ridge_lambda"])
    elif kind == "DecisionTree":
        params = _fit_decision_tree(xs, y, hp)
    elif kind == "RandomForest":
        params = _fit_forest(xs, y, hp, seed)
    else:
        params, losses = _fit_gradient_boost(xs, y, hp)
    train_ms = (time.perf_counter() - start) * 1000.0
    return TrainedModel(
        kind=kind,
        hyperparams=hp,
        mean=train.mean.copy(),
        std=train.std.copy(),
        params=params,
        seed=seed,
        train_rows=train.m,
        train_ms=train_ms,
        train_losses=losses,
    )


def _fit_linear(xs: np.ndarray, y: np.ndarray, lam: float) -> dict:
    # ridge on the weights only, intercept unregularized, via normal equations
    m, f = xs.shape
    a = np.hstack([xs, np.ones((m, 1))])
    gram = a.T @ a
    gram[np.arange(f), np.arange(f)] += lam
    coef = np.linalg.solve(gram, a.T @ y)
    return {"weights": coef[:f], "intercept": coef[f]}


def _fit_decision_tree(xs: np.ndarray, y: np.ndarray, hp: dict) -> dict:
    edges = _quantile_edges(xs)
    bins = _bin_columns(xs, edges)
    plants = [
        _grow_tree(bins, y[:, j], edges, hp["max_depth"], hp["min_leaf"])
        for j in range(y.shape[1])
    ]
    return {"plants": plants}


def _fit_forest(xs: np.ndarray, y: np.ndarray, hp: dict, seed: int) -> dict:
    edges = _quantile_edges(xs)
    bins = _bin_columns(xs, edges)
    m = xs.shape[0]
    seeds = _tree_seeds(seed, hp["trees"])
    plants = []
    for j in range(y.shape[1]):
        col = y[:, j]
        trees = []
        for t in range(hp["trees"]):
            # identical substream per tree index across plant columns
            rng = np.random.default_rng(seeds[t])
            rows = rng.integers(0, m, size=m) if hp["bootstrap"] else np.arange(m)
            trees.append(
                _grow_tree(
                    bins[rows],
                    col[rows],
                    edges,
                    hp["max_depth"],
                    1,
                    rng=rng,
                    n_sub=hp["feature_subsample"],
                )
            )
        plants.append(trees)
    return {"plants": plants}


def _fit_gradient_boost(xs: np.ndarray, y: np.ndarray, hp: dict) -> tuple[dict, np.ndarray]:
    edges = _quantile_edges(xs)
    bins = _bin_columns(xs, edges)
    lr = hp["learning_rate"]
    n_plants = y.shape[1]
    init = np.empty(n_plants, dtype=np.float64)
    losses = np.empty((n_plants, hp["rounds"]), dtype=np.float64)
    plants = []
    step = np.empty(xs.shape[0], dtype=np.float64)
    for j in range(n_plants):
        # contiguous copy keeps the fit bit-identical under column permutation
        col = np.ascontiguousarray(y[:, j])
        init[j] = col.mean()
        residual = col - init[j]
        trees = []
        for r in range(hp["rounds"]):
            trees.append(
                _grow_tree(bins, residual, edges, hp["tree_depth"], 1, train_out=step)
            )
            residual = residual - lr * step
            losses[j, r] = float(np.mean(residual * residual))
        plants.append(trees)
    return {"init": init, "plants": plants}, losses


# ---------------------------------------------------------------------------
# prediction


def predict_matrix(model: TrainedModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Continuous scores and rounded ratings for a raw feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != len(FEATURE_NAMES):
        raise DataError(f"features must be q x {len(FEATURE_NAMES)}, got {features.shape}")
    xs = _standardize(features, model.mean, model.std)
    kind, params = model.kind, model.params
    if kind == "KNN":
        scores = _knn_scores(xs, params, model.hyperparams["k"])
    elif kind == "Linear":
        scores = xs @ params["weights"] + params["intercept"]
    elif kind == "DecisionTree":
        scores = np.column_stack([_tree_predict(t, xs) for t in params["plants"]])
    elif kind == "RandomForest":
        scores = np.column_stack(
            [
                np.mean([_tree_predict(t, xs) for t in trees], axis=0)
                for trees in params["plants"]
            ]
        )
    else:
        lr = model.hyperparams["learning_rate"]
        cols = []
        for j, trees in enumerate(params["plants"]):
            acc = np.full(xs.shape[0], params["init"][j])
            for t in trees:
                acc += lr * _tree_predict(t, xs)
            cols.append(acc)
        scores = np.column_stack(cols)
    rounded = np.clip(np.floor(scores + 0.5), RATING_MIN, RATING_MAX).astype(np.int64)
    return scores, rounded


def _knn_scores(xs: np.ndarray, params: dict, k: int) -> np.ndarray:
    points, labels = params["points"], params["labels"]
    k = min(k, points.shape[0])
    d2 = (
        np.sum(xs * xs, axis=1)[:, None]
        - 2.0 * xs @ points.T
        + np.sum(points * points, axis=1)[None, :]
    )
    nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
    return labels[nearest].mean(axis=1)


def predict(model: TrainedModel, soil: SoilProfile) -> tuple[np.ndarray, np.ndarray]:
    """Scores and rounded ratings (each length n_plants) for one soil."""
    scores, rounded = predict_matrix(model, soil.as_array()[None, :])
    return scores[0], rounded[0]


def evaluate(model: TrainedModel, test: Dataset) -> tuple[float, float]:
    """Cell-wise exact-match accuracy of rounded ratings, and MSE of scores."""
    if test.m == 0:
        raise DataError("test set is empty")
    scores, rounded = predict_matrix(model, test.features)
    accuracy = float(np.mean(rounded == test.labels))
    mse = float(np.mean((scores - test.labels) ** 2))
    return accuracy, mse


def recommend_top_n(model: TrainedModel, soil: SoilProfile, n: int) -> list[tuple[int, float]]:
    """Top-n plants by continuous score, ties broken by lower plant index."""
    plants = model.n_plants
    if not 1 <= n <= plants:
        raise ModelError(f"n must be in 1..{plants}, got {n}")
    scores, _ = predict(model, soil)
    order = np.lexsort((np.arange(plants), -scores))
    return [(int(j), float(scores[j])) for j in order[:n]]


# ---------------------------------------------------------------------------
# persistence


def _tree_to_json(tree: dict) -> dict:
    return {key: tree[key].tolist() for key in ("feature", "threshold", "left", "right", "value")}


def _tree_from_json(obj: dict) -> dict:
    return {
        "feature": np.asarray(obj["feature"], dtype=np.int64),
        "threshold": np.asarray(obj["threshold"], dtype=np.float64),
        "left": np.asarray(obj["left"], dtype=np.int64),
        "right": np.asarray(obj["right"], dtype=np.int64),
        "value": np.asarray(obj["value"], dtype=np.float64),
    }


def save_model(model: TrainedModel, path: str | Path) -> None:
    """Versioned JSON document; load_model(save_model(m)) predicts identically."""
    kind, params = model.kind, model.params
    if kind == "KNN":
        body = {"points": params["points"].tolist(), "labels": params["labels"].tolist()}
    elif kind == "Linear":
        body = {"weights": params["weights"].tolist(), "intercept": params["intercept"].tolist()}
    elif kind == "GradientBoost":
        body = {
            "init": params["init"].tolist(),
            "plants": [[_tree_to_json(t) for t in trees] for trees in params["plants"]],
        }
    elif kind == "RandomForest":
        body = {"plants": [[_tree_to_json(t) for t in trees] for trees in params["plants"]]}
    else:
        body = {"plants": [_tree_to_json(t) for t in params["plants"]]}
    doc = {
        "format": MODEL_FORMAT,
        "kind": kind,
        "hyperparams": model.hyperparams,
        "scaling": {"mean": model.mean.tolist(), "std": model.std.tolist()},
        "seed": model.seed,
        "train_rows": model.train_rows,
        "params": body,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path: str | Path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ModelError(f"unsupported model format {doc.get('format')!r}")
    kind = doc["kind"]
    if kind not in MODEL_KINDS:
        raise ModelError(f"unknown model kind {kind!r} in file")
    body = doc["params"]
    if kind == "KNN":
        params = {
            "points": np.asarray(body["points"], dtype=np.float64),
            "labels": np.asarray(body["labels"], dtype=np.float64),
        }
    elif kind == "Linear":
        params = {
            "weights": np.asarray(body["weights"], dtype=np.float64),
            "intercept": np.asarray(body["intercept"], dtype=np.float64),
        }
    elif kind == "GradientBoost":
        params = {
            "init": np.asarray(body["init"], dtype=np.float64),
            "plants": [[_tree_from_json(t) for t in trees] for trees in body["plants"]],
        }
    elif kind == "RandomForest":
        params = {"plants": [[_tree_from_json(t) for t in trees] for trees in body["plants"]]}
    else:
        params = {"plants": [_tree_from_json(t) for t in body["plants"]]}
    return TrainedModel(
        kind=kind,
        hyperparams=doc["hyperparams"],
        mean=np.asarray(doc["scaling"]["mean"], dtype=np.float64),
        std=np.asarray(doc["scaling"]["std"], dtype=np.float64),
        params=params,
        seed=doc["seed"],
        train_rows=doc["train_rows"],
        train_ms=0.0,
    )
