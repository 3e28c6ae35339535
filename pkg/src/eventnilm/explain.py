"""Exact interventional Shapley values by enumerating every feature coalition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_BACKGROUND_SIZE = 100
OUTPUT_MODES = ("class_score", "class_probability")


class ExplainError(ValueError):
    pass


@dataclass
class Explanation:
    target_class: object
    phi: np.ndarray
    base_value: float
    output_value: float
    output_mode: str = "class_score"

    def as_dict(self, feature_names) -> dict[str, float]:
        return dict(zip(feature_names, map(float, self.phi)))


def sample_background(X, size: int = DEFAULT_BACKGROUND_SIZE, seed: int = 42) -> np.ndarray:
    """Rows drawn without replacement (all rows when fewer than ``size``), original order kept."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] <= size:
        return X.copy()
    idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=size, replace=False))
    return X[idx]


def _class_index(model, target_class) -> int:
    hits = np.flatnonzero(model.classes_ == target_class)
    if hits.shape[0] != 1:
        raise ExplainError(f"unknown class {target_class!r}")
    return int(hits[0])


def _output(model, Z, c: int, output_mode: str) -> np.ndarray:
    if output_mode == "class_score":
        return model.decision_function(Z, class_index=c)[:, c]
    if output_mode == "class_probability":
        return model.predict_proba(Z)[:, c]
    raise ExplainError(f"unknown output_mode {output_mode!r}")


def _hybrids(x, background, masks: np.ndarray) -> np.ndarray:
    """Stack of background rows with the features in each mask replaced by ``x``."""
    d = x.shape[0]
    bits = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)  # (n_masks, d)
    Z = np.where(bits[:, None, :], x[None, None, :], background[None, :, :])
    return Z.reshape(-1, d)


def _anchored_mean(out: np.ndarray) -> np.ndarray:
    """Row means, exact when a row holds one repeated value (e.g. the full coalition)."""
    ref = out[:, :1]
    return ref[:, 0] + (out - ref).mean(axis=1)


def coalition_value(model, x, background, S, target_class, output_mode: str = "class_score") -> float:
    """Mean model output over the background with the features in ``S`` taken from ``x``."""
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ExplainError("empty background set")
    x = np.asarray(x, dtype=np.float64)
    Z = _hybrids(x, background, np.array([sum(1 << int(j) for j in set(S))]))
    out = _output(model, Z, _class_index(model, target_class), output_mode)
    return float(_anchored_mean(out[None, :])[0])


def coalition_values(model, x, background, target_class, output_mode: str = "class_score") -> np.ndarray:
    """``v(S)`` for every subset, indexed by bitmask (bit j set means feature j in S)."""
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ExplainError("empty background set")
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    masks = np.arange(1 << d)
    c = _class_index(model, target_class)
    out = _output(model, _hybrids(x, background, masks), c, output_mode)
    return _anchored_mean(out.reshape(1 << d, background.shape[0]))


def shapley_from_values(v: np.ndarray, d: int) -> np.ndarray:
    """Shapley values from a full table of coalition values."""
    masks = np.arange(1 << d)
    sizes = np.array([bin(m).count("1") for m in masks])
    weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])
    phi = np.zeros(d)
    for j in range(d):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = np.sum(weight[sizes[without]] * (v[without | bit] - v[without]))
    return phi


def shapley(model, x, background, target_class, output_mode: str = "class_score") -> Explanation:
    x = np.asarray(x, dtype=np.float64)
    v = coalition_values(model, x, background, target_class, output_mode)
    d = x.shape[0]
    return Explanation(target_class, shapley_from_values(v, d), float(v[0]), float(v[-1]), output_mode)


def summary_table(model, instances, background, target_class, output_mode: str = "class_score") -> list[dict]:
    """Long-format ``(instance_id, feature_name, feature_value, phi)`` records."""
    rows = []
    for n, x in enumerate(np.atleast_2d(np.asarray(instances, dtype=np.float64))):
        exp = shapley(model, x, background, target_class, output_mode)
        for name, value, phi in zip(model.feature_names_, x, exp.phi):
            rows.append({"instance_id": n, "feature_name": name, "feature_value": float(value), "phi": float(phi)})
    return rows


def write_summary_csv(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write("instance_id,feature_name,feature_value,phi\n")
        for r in rows:
            fh.write(f"{r['instance_id']},{r['feature_name']},{r['feature_value']!r},{r['phi']!r}\n")
