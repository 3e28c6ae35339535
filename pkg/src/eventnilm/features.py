"""Eight Fourier features of a single-cycle current signature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_signatures

PHASE_HARMONICS = (1, 2, 3, 4, 5, 7, 9)
FEATURE_NAMES = ("a1",) + tuple(f"cos_phi{n}" for n in PHASE_HARMONICS)
N_FEATURES = len(FEATURE_NAMES)
# harmonics weaker than this have no meaningful phase
AMPLITUDE_EPS = 1e-9


class DomainError(ValueError):
    pass


@dataclass
class FeatureVector:
    values: np.ndarray
    degenerate: bool = False

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, map(float, self.values)))


def harmonics(i_est, max_order: int) -> list[tuple[int, float, float]]:
    """``(n, a_n, phi_n)`` for n = 1..max_order with ``i_est ~ sum a_n cos(2 pi n t / T + phi_n)``."""
    x = np.asarray(getattr(i_est, "i_est", i_est), dtype=np.float64)
    T = x.shape[0]
    if T < 2 * max_order + 2:
        raise DomainError(f"T={T} too short for harmonic {max_order} (need T >= {2 * max_order + 2})")
    X = np.fft.rfft(x)[1:max_order + 1]
    amp = 2.0 * np.abs(X) / T
    phase = np.angle(X)
    return [(n, float(a), float(p)) for n, a, p in zip(range(1, max_order + 1), amp, phase)]


def _features_from_spectrum(X: np.ndarray, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of features from rfft rows; also returns the degenerate mask."""
    amp = 2.0 * np.abs(X) / T
    idx = np.array(PHASE_HARMONICS)
    sel = X[:, idx]
    cos_phi = np.where(amp[:, idx] < AMPLITUDE_EPS, 0.0, sel.real / np.maximum(np.abs(sel), np.finfo(float).tiny))
    out = np.column_stack([amp[:, 1], np.clip(cos_phi, -1.0, 1.0)])
    return out, amp[:, 1] < AMPLITUDE_EPS


def extract_features(signature) -> FeatureVector:
    """``{a1, cos phi_1..5, cos phi_7, cos phi_9}``; an all-zero signature maps to zeros, flagged degenerate."""
    x = np.asarray(getattr(signature, "i_est", signature), dtype=np.float64)
    if x.shape[0] < 2 * max(PHASE_HARMONICS) + 2:
        raise DomainError(f"signature of length {x.shape[0]} too short")
    row, degenerate = _features_from_spectrum(np.fft.rfft(x)[None, :], x.shape[0])
    return FeatureVector(row[0], bool(degenerate[0]))


def extract_features_batch(signatures) -> np.ndarray:
    X = check_signatures(signatures, min_length=2 * max(PHASE_HARMONICS) + 2)
    rows, _ = _features_from_spectrum(np.fft.rfft(X, axis=1), X.shape[1])
    return rows


class FourierFeatures(TransformerMixin, BaseEstimator):
    """Stateless transformer: ``(n_signatures, T)`` currents to ``(n_signatures, 8)`` features."""

    def fit(self, X, y=None):
        X = check_signatures(X, min_length=2 * max(PHASE_HARMONICS) + 2)
        self.n_samples_per_cycle_ = X.shape[1]
        return self

    def transform(self, X):
        return extract_features_batch(X)

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)


class InsufficientDataError(ValueError):
    pass


def correlation_report(features) -> np.ndarray:
    """Pearson correlation matrix; constant columns correlate 0 with everything else."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 3:
        raise InsufficientDataError(f"need at least 3 feature vectors, got {F.shape[0] if F.ndim else 0}")
    centered = F - F.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    constant = norms == 0
    safe = np.where(constant, 1.0, norms)
    corr = (centered.T @ centered) / np.outer(safe, safe)
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    corr = np.clip((corr + corr.T) / 2, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def write_correlation_csv(corr: np.ndarray, path, names=FEATURE_NAMES) -> None:
    with open(path, "w") as fh:
        fh.write("," + ",".join(names) + "\n")
        for name, row in zip(names, corr):
            fh.write(name + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
