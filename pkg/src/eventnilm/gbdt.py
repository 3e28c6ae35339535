"""Multi-class second-order gradient boosting over exact-greedy regression trees.

Softmax objective, one tree per class per round, L1 soft-thresholded leaf
weights and an L2 term in both split gain and leaf weight.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import DataError, check_finite_matrix, check_labels
from .features import FEATURE_NAMES

MODEL_VERSION = 1


class TrainingError(ValueError):
    pass


class ModelLoadError(ValueError):
    pass


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    # training statistics, absent on loaded models
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    gain: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_nodes(self) -> list[dict]:
        nodes = []
        for f, t, l, r, v in zip(self.feature, self.threshold, self.left, self.right, self.value):
            if f < 0:
                nodes.append({"leaf": float(v)})
            else:
                nodes.append({"f": int(f), "t": float(t), "l": int(l), "r": int(r)})
        return nodes

    @classmethod
    def from_nodes(cls, nodes: list[dict]) -> "Tree":
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        for k, node in enumerate(nodes):
            if "leaf" in node:
                value[k] = float(node["leaf"])
            else:
                feature[k], threshold[k] = int(node["f"]), float(node["t"])
                left[k], right[k] = int(node["l"]), int(node["r"])
                if not (k < left[k] < n and k < right[k] < n):
                    raise ModelLoadError(f"node {k} has invalid child ids")
        return cls(feature, threshold, left, right, value)


def leaf_weight(G: float, H: float, alpha: float, lam: float) -> float:
    """L1 soft-thresholded Newton step ``-sign(G) max(0, |G| - alpha) / (H + lambda)``."""
    return -np.sign(G) * max(0.0, abs(G) - alpha) / (H + lam)


def split_gain(GL, HL, GR, HR, lam):
    G, H = GL + GR, HL + HR
    return 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam))


def _best_split(X, g, h, lam, min_child_weight):
    """Exact greedy search. Returns (gain, feature, threshold, left_mask) or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    m, d = X.shape
    if m < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    GR, HR = G - GL, H - HL
    valid = (xs[1:] > xs[:-1]) & (HL >= min_child_weight) & (HR >= min_child_weight)
    if not valid.any():
        return None
    gain = np.where(valid, 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)), -np.inf)
    # feature-major flattening makes argmax honour the tie-breaking rule
    flat = int(np.argmax(gain.T))
    f, pos = divmod(flat, m - 1)
    best = float(gain[pos, f])
    if not best > 0:
        return None
    lo, hi = xs[pos, f], xs[pos + 1, f]
    t = lo + (hi - lo) / 2
    if not lo < t:
        t = hi
    return best, f, float(t), X[:, f] < t


def build_tree(X, g, h, max_depth, alpha, lam, min_child_weight, eta) -> Tree:
    feature, threshold, left, right, value, grad, hess, gains = [], [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        grad.append(float(g[idx].sum()))
        hess.append(float(h[idx].sum()))
        gains.append(0.0)
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        split = None
        if depth < max_depth:
            split = _best_split(X[idx], g[idx], h[idx], lam, min_child_weight)
        if split is None:
            value[node] = eta * leaf_weight(grad[node], hess[node], alpha, lam)
            continue
        gain, f, t, go_left = split
        feature[node], threshold[node], gains[node] = f, t, gain
        li, ri = idx[go_left], idx[~go_left]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
        np.array(grad),
        np.array(hess),
        np.array(gains),
    )


@njit(cache=True)
def _ensemble_scores(X, feature, threshold, left, right, value, roots, tree_class, n_classes, base, class_filter):
    n = X.shape[0]
    out = np.full((n, n_classes), base)
    for r in range(n):
        for t in range(roots.shape[0]):
            c = tree_class[t]
            if class_filter >= 0 and c != class_filter:
                continue
            node = roots[t]
            while feature[node] >= 0:
                if X[r, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r, c] += value[node]
    return out


@dataclass
class _Packed:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    tree_class: np.ndarray


def _pack(trees: list[list[Tree]]) -> _Packed:
    parts = {k: [] for k in ("feature", "threshold", "left", "right", "value")}
    roots, tree_class = [], []
    offset = 0
    for round_trees in trees:
        for c, tree in enumerate(round_trees):
            roots.append(offset)
            tree_class.append(c)
            parts["feature"].append(tree.feature)
            parts["threshold"].append(tree.threshold)
            parts["left"].append(np.where(tree.left >= 0, tree.left + offset, -1))
            parts["right"].append(np.where(tree.right >= 0, tree.right + offset, -1))
            parts["value"].append(tree.value)
            offset += tree.n_nodes
    cat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in parts.items()}
    return _Packed(
        cat["feature"].astype(np.int64),
        cat["threshold"].astype(np.float64),
        cat["left"].astype(np.int64),
        cat["right"].astype(np.int64),
        cat["value"].astype(np.float64),
        np.array(roots, dtype=np.int64),
        np.array(tree_class, dtype=np.int64),
    )


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_loss(proba: np.ndarray, y_idx: np.ndarray) -> float:
    p = proba[np.arange(y_idx.shape[0]), y_idx]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


class GBDTClassifier(ClassifierMixin, BaseEstimator):
    """Gradient-boosted tree classifier with a softmax objective.

    Defaults are the 150-round, depth-8, eta 0.046, alpha 10 configuration.

    Parameters
    ----------
    n_estimators : int
        Boosting rounds; each round adds one tree per class.
    max_depth : int
        Maximum split depth of each tree.
    learning_rate : float
        Shrinkage applied to every leaf weight.
    reg_alpha : float
        L1 penalty on leaf weights (soft threshold on the gradient sum).
    reg_lambda : float
        L2 penalty on leaf weights.
    min_child_weight : float
        Minimum hessian mass in each child of a split.
    base_score : float
        Initial raw score for every class.
    feature_names : sequence of str or None
        Names stored in the model file; ``None`` generates ``f0, f1, ...``.
    random_state : int
        Recorded for provenance. Training has no random component.
    n_jobs : int
        Threads used to grow the per-class trees of one round.
    """

    def __init__(
        self,
        n_estimators=150,
        max_depth=8,
        learning_rate=0.046,
        reg_alpha=10.0,
        reg_lambda=1.0,
        min_child_weight=1.0,
        base_score=0.0,
        feature_names=FEATURE_NAMES,
        random_state=42,
        n_jobs=1,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_alpha = reg_alpha
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.base_score = base_score
        self.feature_names = feature_names
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, sample_weight=None):
        try:
            X = check_finite_matrix(X)
        except DataError as exc:
            raise DataError(f"training data: {exc}") from None
        y = check_labels(y, X.shape[0])
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise DataError(f"{len(self.feature_names)} feature names for {X.shape[1]} columns")
        if X.shape[0] < 10:
            raise TrainingError(f"need at least 10 rows, got {X.shape[0]}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise TrainingError(f"need at least 2 classes, got {self.classes_.tolist()}")
        w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = (
            tuple(self.feature_names) if self.feature_names is not None else tuple(f"f{j}" for j in range(X.shape[1]))
        )
        K = self.classes_.shape[0]
        Y = np.eye(K)[y_idx]
        scores = np.full((X.shape[0], K), float(self.base_score))
        self.trees_: list[list[Tree]] = []
        proba = softmax(scores)
        self.loss_curve_ = [log_loss(proba, y_idx)]

        def grow(c, g, h):
            return build_tree(
                X, g[:, c], h[:, c], self.max_depth, self.reg_alpha, self.reg_lambda,
                self.min_child_weight, self.learning_rate,
            )

        pool = ThreadPoolExecutor(self.n_jobs) if self.n_jobs and self.n_jobs > 1 else None
        try:
            for _ in range(self.n_estimators):
                # gradients fixed for the whole round, so per-class trees are independent
                g = (proba - Y) * w[:, None]
                h = proba * (1.0 - proba) * w[:, None]
                if pool is not None:
                    round_trees = list(pool.map(lambda c: grow(c, g, h), range(K)))
                else:
                    round_trees = [grow(c, g, h) for c in range(K)]
                self.trees_.append(round_trees)
                for c, tree in enumerate(round_trees):
                    scores[:, c] += _apply_tree(tree, X)
                proba = softmax(scores)
                self.loss_curve_.append(log_loss(proba, y_idx))
        finally:
            if pool is not None:
                pool.shutdown()
        self._packed = _pack(self.trees_)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        return check_finite_matrix(X, self.n_features_in_)

    def decision_function(self, X, class_index: int = -1):
        """Raw per-class scores ``base_score + sum of tree outputs``."""
        X = np.ascontiguousarray(self._check_X(X))
        p = self._packed
        return _ensemble_scores(
            X, p.feature, p.threshold, p.left, p.right, p.value, p.roots, p.tree_class,
            self.classes_.shape[0], float(self.base_score), class_index,
        )

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    @property
    def n_rounds_(self) -> int:
        return len(self.trees_)

    def used_features(self) -> set[int]:
        return set().union(*(t.used_features() for r in self.trees_ for t in r)) if self.trees_ else set()

    def submodel(self, rounds) -> "GBDTClassifier":
        """Copy holding only the given rounds (base_score kept)."""
        sub = GBDTClassifier(**self.get_params())
        sub.classes_, sub.n_features_in_, sub.feature_names_ = self.classes_, self.n_features_in_, self.feature_names_
        sub.trees_ = [self.trees_[r] for r in rounds]
        sub._packed = _pack(sub.trees_)
        return sub

    # persistence

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        return {
            "version": MODEL_VERSION,
            "classes": [c.item() if hasattr(c, "item") else c for c in self.classes_],
            "feature_names": list(self.feature_names_),
            "eta": float(self.learning_rate),
            "max_depth": int(self.max_depth),
            "alpha": float(self.reg_alpha),
            "lambda": float(self.reg_lambda),
            "min_child_weight": float(self.min_child_weight),
            "base_score": float(self.base_score),
            "seed": self.random_state,
            "trees": [
                {"round": r, "class": c, "nodes": tree.to_nodes()}
                for r, round_trees in enumerate(self.trees_)
                for c, tree in enumerate(round_trees)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict, expected_feature_names=FEATURE_NAMES) -> "GBDTClassifier":
        try:
            version = doc["version"]
            if version != MODEL_VERSION:
                raise ModelLoadError(f"unknown model version {version!r}")
            names = tuple(doc["feature_names"])
            if expected_feature_names is not None and names != tuple(expected_feature_names):
                raise ModelLoadError(
                    f"model feature names {list(names)} do not match expected {list(expected_feature_names)}"
                )
            classes = np.array(doc["classes"])
            K = classes.shape[0]
            entries = doc["trees"]
            if len(entries) % K:
                raise ModelLoadError(f"{len(entries)} trees is not a multiple of {K} classes")
            trees: list[list[Tree]] = []
            for n, entry in enumerate(entries):
                r, c = divmod(n, K)
                if entry["round"] != r or entry["class"] != c:
                    raise ModelLoadError(f"tree {n} out of order (round {entry['round']}, class {entry['class']})")
                tree = Tree.from_nodes(entry["nodes"])
                if (tree.feature >= len(names)).any():
                    raise ModelLoadError(f"tree {n} splits on a feature index >= {len(names)}")
                if c == 0:
                    trees.append([])
                trees[-1].append(tree)
            model = cls(
                n_estimators=len(trees),
                max_depth=int(doc["max_depth"]),
                learning_rate=float(doc["eta"]),
                reg_alpha=float(doc["alpha"]),
                reg_lambda=float(doc["lambda"]),
                min_child_weight=float(doc.get("min_child_weight", 1.0)),
                base_score=float(doc["base_score"]),
                feature_names=names,
                random_state=doc.get("seed", 42),
            )
        except KeyError as exc:
            raise ModelLoadError(f"model file missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ModelLoadError):
                raise
            raise ModelLoadError(f"malformed model: {exc}") from None
        model.classes_ = classes
        model.n_features_in_ = len(names)
        model.feature_names_ = names
        model.trees_ = trees
        model._packed = _pack(trees)
        return model


def _apply_tree(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Vectorised single-tree evaluation used during training."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = tree.feature[node] >= 0
    while active.any():
        f = tree.feature[node[active]]
        go_left = X[np.flatnonzero(active), f] < tree.threshold[node[active]]
        node[active] = np.where(go_left, tree.left[node[active]], tree.right[node[active]])
        active = tree.feature[node] >= 0
    return tree.value[node]


def train(X, y, **params) -> GBDTClassifier:
    return GBDTClassifier(**params).fit(X, y)


def save_model(model: GBDTClassifier, path, extra: dict | None = None) -> None:
    doc = model.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_model(path, expected_feature_names=FEATURE_NAMES) -> GBDTClassifier:
    model, _ = load_model_document(path, expected_feature_names)
    return model


def load_model_document(path, expected_feature_names=FEATURE_NAMES) -> tuple[GBDTClassifier, dict]:
    """Load a model plus the raw document (for optional extras such as a background set)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"{path}: not a valid model file ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ModelLoadError(f"{path}: not a valid model file")
    return GBDTClassifier.from_dict(doc, expected_feature_names), doc
