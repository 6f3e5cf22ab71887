"""In-sample random forest: the per-question predictability ceiling.

The forest is trained on the same rows it predicts, so its accuracy acts
as an upper bound that normalizes every model metric.  Categorical
attributes are one-hot encoded; splits minimize Gini impurity over a
random feature subset; all randomness flows from an integer seed stream so
runs are bit-reproducible, serial or parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, SocioProfile, SurveyCase
from .errors import SchemaMismatch
from .gateway import Prediction
from .metrics import MetricReport, compute_report

SERIAL_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    features_per_split: Optional[int] = None  # default: ceil(sqrt(d))
    min_samples_leaf: int = 1
    max_depth: Optional[int] = None


@dataclass
class _Node:
    # leaf: feature == -1 and counts holds the class tally
    feature: int = -1
    left: int = -1
    right: int = -1
    counts: Optional[np.ndarray] = None


@dataclass
class _Tree:
    nodes: list[_Node]

    def predict_one(self, x: np.ndarray) -> int:
        i = 0
        while True:
            node = self.nodes[i]
            if node.feature < 0:
                counts = node.counts
                return int(np.flatnonzero(counts == counts.max())[0])
            i = node.left if x[node.feature] == 0 else node.right


@dataclass
class ForestModel:
    trees: list[_Tree]
    feature_names: tuple[str, ...]
    attribute_order: tuple[str, ...]
    category_maps: dict[str, dict[str, int]]
    n_classes: int
    params: ForestParams
    seed: int
    degenerate: bool = False  # single answer class in the training data


def encode_profiles(dataset: Dataset) -> tuple[np.ndarray, tuple[str, ...]]:
    """One-hot encode every profile; column order follows the schema."""
    names: list[str] = []
    blocks = []
    for attr in dataset.schema.attributes:
        index = {c: i for i, c in enumerate(attr.categories)}
        col = np.array(
            [index[p.values[attr.name]] for p in dataset.profiles], dtype=np.int64
        )
        block = np.zeros((len(dataset.profiles), len(attr.categories)), dtype=np.uint8)
        block[np.arange(len(col)), col] = 1
        blocks.append(block)
        names.extend(f"{attr.name}={c}" for c in attr.categories)
    return np.hstack(blocks), tuple(names)


def _encode_one(model: ForestModel, profile: SocioProfile) -> np.ndarray:
    x = np.zeros(len(model.feature_names), dtype=np.uint8)
    offset = 0
    for attr in model.attribute_order:
        cats = model.category_maps[attr]
        if attr not in profile.values or profile.values[attr] not in cats:
            raise SchemaMismatch(
                f"profile {profile.respondent_id!r} does not match the "
                f"training schema at attribute {attr!r}"
            )
        x[offset + cats[profile.values[attr]]] = 1
        offset += len(cats)
    return x


def _gini_gain(y: np.ndarray, mask: np.ndarray, n_classes: int) -> float:
    n = len(y)
    left = y[~mask]
    right = y[mask]
    if len(left) == 0 or len(right) == 0:
        return -1.0

    def gini(part):
        counts = np.bincount(part, minlength=n_classes)
        p = counts / len(part)
        return 1.0 - float(np.sum(p * p))

    parent = gini(y)
    weighted = (len(left) / n) * gini(left) + (len(right) / n) * gini(right)
    return parent - weighted


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    params: ForestParams,
    rng: np.random.Generator,
) -> _Tree:
    n, d = X.shape
    k = params.features_per_split or int(np.ceil(np.sqrt(d)))
    nodes: list[_Node] = []

    def leaf(idx: np.ndarray) -> int:
        nodes.append(_Node(counts=np.bincount(y[idx], minlength=n_classes)))
        return len(nodes) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        labels = y[idx]
        if (
            len(idx) < 2 * params.min_samples_leaf
            or len(np.unique(labels)) == 1
            or (params.max_depth is not None and depth >= params.max_depth)
        ):
            return leaf(idx)
        # random candidate subset first; fall back to the remaining features
        # so a pure split is never missed when one exists
        order = rng.permutation(d)
        candidates = list(order[:k]) + list(order[k:])
        best_feature = -1
        best_gain = 0.0
        tried = 0
        for f in candidates:
            tried += 1
            mask = X[idx, f] == 1
            gain = _gini_gain(labels, mask, n_classes)
            if gain > best_gain + 1e-12:
                best_gain = gain
                best_feature = f
            if tried >= k and best_feature >= 0:
                break
        if best_feature < 0:
            return leaf(idx)
        mask = X[idx, best_feature] == 1
        left_idx = idx[~mask]
        right_idx = idx[mask]
        if (
            len(left_idx) < params.min_samples_leaf
            or len(right_idx) < params.min_samples_leaf
        ):
            return leaf(idx)
        node_pos = len(nodes)
        nodes.append(_Node(feature=int(best_feature)))
        left = build(left_idx, depth + 1)
        right = build(right_idx, depth + 1)
        nodes[node_pos].left = left
        nodes[node_pos].right = right
        return node_pos

    bootstrap = rng.integers(0, n, n)
    build(bootstrap, 0)
    return _Tree(nodes=nodes)


def fit_in_sample(
    dataset: Dataset,
    case: SurveyCase,
    params: ForestParams = ForestParams(),
    seed: int = 0,
) -> ForestModel:
    """Fit a forest on every respondent with an answer for the case.

    Deterministic for a fixed seed: each tree draws from its own generator
    keyed by (seed, tree index), so serial and parallel fits agree.
    """
    answered = [p for p in dataset.profiles if p.respondent_id in case.answers]
    if len(answered) < 2:
        raise ValueError("need at least 2 answered respondents to fit")
    sub = Dataset(
        schema=dataset.schema, profiles=tuple(answered), cases=(case,)
    )
    X, names = encode_profiles(sub)
    y = np.array(
        [case.answers[p.respondent_id] for p in answered], dtype=np.int64
    )
    n_classes = len(case.options)
    degenerate = len(np.unique(y)) == 1

    trees = [
        _grow_tree(X, y, n_classes, params,
                   np.random.default_rng((seed, tree_idx)))
        for tree_idx in range(params.n_trees)
    ]
    return ForestModel(
        trees=trees,
        feature_names=names,
        attribute_order=dataset.schema.names,
        category_maps={
            a.name: {c: i for i, c in enumerate(a.categories)}
            for a in dataset.schema.attributes
        },
        n_classes=n_classes,
        params=params,
        seed=seed,
        degenerate=degenerate,
    )


def predict(model: ForestModel, profile: SocioProfile) -> int:
    """Majority vote over trees; ties break to the lowest option index."""
    x = _encode_one(model, profile)
    votes = np.zeros(model.n_classes, dtype=np.int64)
    for tree in model.trees:
        votes[tree.predict_one(x)] += 1
    return int(np.flatnonzero(votes == votes.max())[0])


def baseline_metrics(
    dataset: Dataset,
    case: SurveyCase,
    params: ForestParams = ForestParams(),
    seed: int = 0,
) -> tuple[MetricReport, ForestModel]:
    """Fit in-sample, predict every training row, and run the same metric
    battery applied to model predictions."""
    model = fit_in_sample(dataset, case, params, seed)
    predictions = [
        Prediction(
            respondent_id=p.respondent_id,
            question_id=case.question_id,
            backend="in_sample_forest",
            raw_text="",
            parsed=predict(model, p),
        )
        for p in dataset.profiles
        if p.respondent_id in case.answers
    ]
    report = compute_report(dataset, predictions, case, backend="in_sample_forest")
    return report, model


def save_model(model: ForestModel, path: str | Path) -> None:
    doc = {
        "version": SERIAL_VERSION,
        "feature_names": list(model.feature_names),
        "attribute_order": list(model.attribute_order),
        "category_maps": model.category_maps,
        "n_classes": model.n_classes,
        "seed": model.seed,
        "degenerate": model.degenerate,
        "params": {
            "n_trees": model.params.n_trees,
            "features_per_split": model.params.features_per_split,
            "min_samples_leaf": model.params.min_samples_leaf,
            "max_depth": model.params.max_depth,
        },
        "trees": [
            [
                {
                    "f": n.feature,
                    "l": n.left,
                    "r": n.right,
                    "c": None if n.counts is None else n.counts.tolist(),
                }
                for n in tree.nodes
            ]
            for tree in model.trees
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str | Path) -> ForestModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    trees = [
        _Tree(nodes=[
            _Node(
                feature=n["f"],
                left=n["l"],
                right=n["r"],
                counts=None if n["c"] is None else np.array(n["c"], dtype=np.int64),
            )
            for n in tree
        ])
        for tree in doc["trees"]
    ]
    params = ForestParams(**doc["params"])
    return ForestModel(
        trees=trees,
        feature_names=tuple(doc["feature_names"]),
        attribute_order=tuple(doc["attribute_order"]),
        category_maps={
            a: {c: int(i) for c, i in m.items()}
            for a, m in doc["category_maps"].items()
        },
        n_classes=doc["n_classes"],
        params=params,
        seed=doc["seed"],
        degenerate=doc["degenerate"],
    )
