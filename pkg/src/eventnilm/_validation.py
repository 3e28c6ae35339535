"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np


class DataError(ValueError):
    pass


def check_finite_matrix(X, n_features: int | None = None, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"{name} has {X.shape[1]} features, expected {n_features}")
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        raise DataError(f"{name} row {int(np.flatnonzero(bad)[0])} has a non-finite value")
    return X


def check_signatures(X, min_length: int) -> np.ndarray:
    X = check_finite_matrix(X, name="signatures")
    if X.shape[1] < min_length:
        raise DataError(f"signatures have {X.shape[1]} samples per cycle, need >= {min_length}")
    return X


def check_labels(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_rows:
        raise DataError(f"expected {n_rows} labels, got shape {y.shape}")
    return y
