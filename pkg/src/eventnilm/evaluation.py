"""Train/test construction, classification metrics, baselines and the N_a sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.tree import DecisionTreeClassifier

from . import detector as det
from .features import extract_features_batch
from .fitps import DEFAULT_CYCLE_SAMPLES, fitps
from .gbdt import GBDTClassifier
from .signature import DEFAULT_CYCLES_AFTER, DEFAULT_GUARD_CYCLES, estimate_signature, window_from_cycles

logger = logging.getLogger(__name__)

STEADY_SIGMAS = 3.0
RMS_RTOL = 1e-9


# training set


def steady_cycles(cycles, n_sigma: float = STEADY_SIGMAS) -> list:
    """Cycles whose current RMS lies within ``n_sigma`` standard deviations of the recording median."""
    if not cycles:
        return []
    rms = np.array([np.sqrt(np.mean(c.i**2)) for c in cycles])
    spread = rms.std()
    # rounding-level spread is a constant recording, not a transient
    if spread <= RMS_RTOL * np.median(rms):
        return list(cycles)
    keep = np.abs(rms - np.median(rms)) <= n_sigma * spread
    return [c for c, k in zip(cycles, keep) if k]


def build_train_set(recordings, T: int = DEFAULT_CYCLE_SAMPLES, n_sigma: float = STEADY_SIGMAS):
    """One feature row per steady cycle of each single-appliance recording.

    ``recordings`` is an iterable of ``(RawStream, label)``.
    """
    rows, labels = [], []
    for stream, label in recordings:
        try:
            cycles = steady_cycles(fitps(stream, T), n_sigma)
        except ValueError as exc:
            logger.warning("skipping %s: %s", stream.source_id, exc)
            continue
        if not cycles:
            logger.warning("skipping %s: no valid cycles", stream.source_id)
            continue
        rows.append(extract_features_batch(np.stack([c.i for c in cycles])))
        labels.extend([label] * len(cycles))
    if not rows:
        return np.zeros((0, 8)), np.array(labels, dtype=object)
    return np.vstack(rows), np.array(labels)


# test set


@dataclass
class TestSet:
    X: np.ndarray
    labels: np.ndarray
    events: list
    n_annotations: int = 0
    missed: int = 0
    spurious: int = 0
    skipped: int = 0
    partial: int = 0
    match_cycles: list = field(default_factory=list)

    @property
    def matched(self) -> int:
        return self.X.shape[0]


def _cycle_of_sample(cycles, sample_index: int) -> int:
    starts = np.array([c.start_sample for c in cycles])
    return int(np.searchsorted(starts, sample_index, side="right")) - 1


def match_events(detected_cycles, annotated_cycles, tolerance: int):
    """Greedy one-to-one matching, closest pairs first, within ``tolerance`` cycles.

    Returns a list of (detected_idx, annotated_idx) pairs.
    """
    pairs = sorted(
        (abs(d - a), i, j)
        for i, d in enumerate(detected_cycles)
        for j, a in enumerate(annotated_cycles)
        if abs(d - a) <= tolerance
    )
    used_d, used_a, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_d or j in used_a:
            continue
        used_d.add(i)
        used_a.add(j)
        out.append((i, j))
    return sorted(out)


def build_test_set(
    scenarios,
    T: int = DEFAULT_CYCLE_SAMPLES,
    w: int = det.DEFAULT_WINDOW,
    Z: float = det.DEFAULT_Z,
    sigma_floor: float = det.DEFAULT_SIGMA_FLOOR,
    n_a: int = DEFAULT_CYCLES_AFTER,
    strict: bool = False,
    guard: int = DEFAULT_GUARD_CYCLES,
) -> TestSet:
    """Detect events in annotated aggregate streams and label each matched signature.

    ``scenarios`` is an iterable of ``(RawStream, [LabeledEvent])``. With
    ``strict`` set, events lacking ``n_a`` post-event cycles are skipped and
    counted instead of being estimated from fewer cycles.
    """
    rows, labels, events, match_cycles = [], [], [], []
    n_ann = missed = spurious = skipped = partial = 0
    for stream, annotations in scenarios:
        cycles = fitps(stream, T)
        powers = [det.active_power(c) for c in cycles]
        detected = det.detect(powers, w, Z, sigma_floor)
        ann = [a for a in annotations if a.sample_index < len(stream)]
        ann_cycles = [_cycle_of_sample(cycles, a.sample_index) for a in ann]
        pairs = match_events([e.cycle_index for e in detected], ann_cycles, w)
        n_ann += len(ann)
        missed += len(ann) - len(pairs)
        spurious += len(detected) - len(pairs)
        for i, j in pairs:
            ev = detected[i]
            win = window_from_cycles(cycles, ev.cycle_index, n_a, guard)
            if win is None or (strict and win.n_a < n_a):
                skipped += 1
                continue
            first = ev.cycle_index + guard
            ev = det.settle(ev, powers[first:first + win.n_a])
            sig = estimate_signature(win, ev.direction, ev, n_a)
            partial += sig.partial
            rows.append(sig.i_est)
            labels.append(ann[j].appliance_label)
            events.append(ev)
            match_cycles.append((ev.cycle_index, ann_cycles[j]))
    X = extract_features_batch(np.stack(rows)) if rows else np.zeros((0, 8))
    return TestSet(X, np.array(labels), events, n_ann, missed, spurious, skipped, partial, match_cycles)


def detection_scores(test: TestSet) -> tuple[float, float]:
    """(precision, recall) of event detection against the annotations."""
    tp = len(test.match_cycles)
    n_detected = tp + test.spurious
    precision = tp / n_detected if n_detected else 0.0
    recall = tp / test.n_annotations if test.n_annotations else 0.0
    return precision, recall


# metrics


@dataclass
class MetricsReport:
    labels: list
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    zero_division: list
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    n_test: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "n_test": self.n_test,
            "labels": [str(c) for c in self.labels],
            "confusion": self.confusion.tolist(),
            "per_class": {
                str(c): {"precision": float(p), "recall": float(r), "f1": float(f)}
                for c, p, r, f in zip(self.labels, self.precision, self.recall, self.f1)
            },
            "zero_division": [str(c) for c in self.zero_division],
        }


def classification_metrics(y_true, y_pred, labels=None) -> MetricsReport:
    """Accuracy and macro (unweighted class mean) precision/recall/F1.

    A class whose precision or recall denominator is zero scores 0 there and
    is listed in ``zero_division``.
    """
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape[0] == 0:
        raise ValueError("empty test set")
    if labels is None:
        labels = np.unique(np.concatenate([y_true, y_pred]))
    labels = list(labels)
    index = {c: n for n, c in enumerate(labels)}
    K = len(labels)
    cm = np.zeros((K, K), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[index[t], index[p]] += 1
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0).astype(float)
    true_tot = cm.sum(axis=1).astype(float)
    flagged = [labels[k] for k in range(K) if pred_tot[k] == 0 or true_tot[k] == 0]
    precision = np.divide(tp, pred_tot, out=np.zeros(K), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros(K), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(K), where=denom > 0)
    return MetricsReport(
        labels, cm, precision, recall, f1, flagged,
        float(tp.sum() / cm.sum()), float(precision.mean()), float(recall.mean()), float(f1.mean()),
        int(cm.sum()),
    )


def evaluate(model, test: TestSet, labels=None) -> MetricsReport:
    if test.matched == 0:
        raise ValueError("empty test set")
    if labels is None:
        labels = np.unique(np.concatenate([np.asarray(model.classes_), test.labels]))
    return classification_metrics(test.labels, model.predict(test.X), labels)


def write_confusion_csv(report: MetricsReport, path) -> None:
    names = [str(c) for c in report.labels]
    with open(path, "w") as fh:
        fh.write("true\\pred," + ",".join(f'"{n}"' for n in names) + "\n")
        for name, row in zip(names, report.confusion):
            fh.write(f'"{name}",' + ",".join(str(int(v)) for v in row) + "\n")


# baselines


class SoftmaxRegression(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression by full-batch gradient descent on standardized features."""

    def __init__(self, n_iter=500, step_size=0.1):
        self.n_iter = n_iter
        self.step_size = step_size

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Xs = (X - self.mean_) / self.scale_
        n, d = Xs.shape
        K = self.classes_.shape[0]
        Y = np.eye(K)[y_idx]
        self.coef_ = np.zeros((d, K))
        self.intercept_ = np.zeros(K)
        for _ in range(self.n_iter):
            P = _softmax(Xs @ self.coef_ + self.intercept_)
            R = (P - Y) / n
            self.coef_ -= self.step_size * (Xs.T @ R)
            self.intercept_ -= self.step_size * R.sum(axis=0)
        return self

    def decision_function(self, X):
        Xs = (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_
        return Xs @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _softmax(S):
    S = S - S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def baseline_models(seed: int = 42, gbdt_params: dict | None = None) -> dict:
    return {
        "gbdt": GBDTClassifier(random_state=seed, **(gbdt_params or {})),
        "decision_tree": DecisionTreeClassifier(criterion="gini", max_depth=12, min_samples_leaf=5, random_state=seed),
        "logistic_regression": SoftmaxRegression(n_iter=500, step_size=0.1),
    }


def baselines(X_train, y_train, X_test, y_test, seed: int = 42, gbdt_params: dict | None = None, models=None) -> dict:
    """Accuracy of every baseline trained on the same rows, in fixed order."""
    models = models or baseline_models(seed, gbdt_params)
    out = {}
    for name, model in models.items():
        if name != "gbdt" or not hasattr(model, "trees_"):
            model.fit(X_train, y_train)
        out[name] = float(np.mean(model.predict(X_test) == np.asarray(y_test)))
    return out


# N_a sweep


def sweep_na(model, scenarios, candidates, **detector_kwargs) -> list[dict]:
    """Accuracy per post-event cycle count; events without enough cycles are skipped and counted."""
    scenarios = list(scenarios)
    out = []
    for n_a in candidates:
        test = build_test_set(scenarios, n_a=n_a, strict=True, **detector_kwargs)
        acc = float(np.mean(model.predict(test.X) == test.labels)) if test.matched else float("nan")
        out.append({"na": int(n_a), "accuracy": acc, "n_events": test.matched, "skipped": test.skipped})
    return out


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write("na,accuracy\n")
        fh.writelines(f"{r['na']},{r['accuracy']!r}\n" for r in rows)
