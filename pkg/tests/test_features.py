import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventnilm import ingest
from eventnilm.detector import detect, active_power
from eventnilm.features import (
    FEATURE_NAMES,
    DomainError,
    FourierFeatures,
    InsufficientDataError,
    correlation_report,
    extract_features,
    extract_features_batch,
    harmonics,
    write_correlation_csv,
)
from eventnilm.fitps import fitps
from eventnilm.signature import estimate_signature, window_from_cycles

T = 500
t = np.arange(T)


def direct_dft(x, n):
    """Direct summation of bin n."""
    T = x.shape[0]
    re = np.sum(x * np.cos(2 * np.pi * n * np.arange(T) / T))
    im = -np.sum(x * np.sin(2 * np.pi * n * np.arange(T) / T))
    return 2 * math.hypot(re, im) / T, math.atan2(im, re)


def test_pure_cosine():
    (n, a, phi), = harmonics(2 * np.cos(2 * np.pi * t / T), 1)
    assert n == 1 and abs(a - 2) < 1e-9 and abs(phi) < 1e-9 and abs(math.cos(phi) - 1) < 1e-9


def test_pure_sine_is_quadrature():
    (_, a, phi), = harmonics(2 * np.sin(2 * np.pi * t / T), 1)
    assert abs(a - 2) < 1e-9
    assert abs(phi + math.pi / 2) < 1e-9
    assert abs(math.cos(phi)) < 1e-9


def test_matches_direct_dft():
    rng = np.random.default_rng(11)
    x = sum(rng.uniform(0, 2) * np.cos(2 * np.pi * n * t / T + rng.uniform(-3, 3)) for n in range(1, 16))
    for n, a, phi in harmonics(x, 15):
        a_ref, phi_ref = direct_dft(x, n)
        assert abs(a - a_ref) <= 1e-9 * a_ref
        assert abs(math.remainder(phi - phi_ref, 2 * math.pi)) <= 1e-9


def test_short_signature_is_domain_error():
    with pytest.raises(DomainError):
        harmonics(np.ones(20), 15)
    with pytest.raises(DomainError):
        extract_features(np.ones(10))


def test_fundamental_features():
    fv = extract_features(2 * np.cos(2 * np.pi * t / T))
    np.testing.assert_allclose(fv.values, [2, 1, 0, 0, 0, 0, 0, 0], atol=1e-9)
    assert not fv.degenerate
    assert list(fv.as_dict()) == list(FEATURE_NAMES)


def test_zero_signature_degenerate():
    fv = extract_features(np.zeros(T))
    assert np.array_equal(fv.values, np.zeros(8))
    assert fv.degenerate


def test_rectifier_archetype_round_trip():
    spec_h = [(1, 1.5, -1.2), (3, 0.9, 0.7), (5, 0.5, 2.1), (7, 0.3, -2.6), (9, 0.2, 0.9)]
    arch = ingest.ApplianceArchetype("Laptop", spec_h)
    # 25 kHz at 50 Hz keeps one raw period at exactly T samples
    scen = ingest.ScenarioSpec([arch], [(0.5, "Laptop", "on")], 1.5, sample_rate_hz=25000.0)
    stream, _ = ingest.synthesize(scen)
    cycles = fitps(stream, T)
    (ev,) = detect([active_power(c) for c in cycles])
    sig = estimate_signature(window_from_cycles(cycles, ev.cycle_index), ev.direction)
    expected = dict.fromkeys(FEATURE_NAMES, 0.0)
    expected["a1"] = 1.5
    for n, _, phi in spec_h:
        expected[f"cos_phi{n}"] = math.cos(phi)
    np.testing.assert_allclose(extract_features(sig).values, [expected[k] for k in FEATURE_NAMES], atol=1e-6)


def test_batch_equals_single_and_transformer():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, T))
    batch = extract_features_batch(X)
    for row, x in zip(batch, X):
        assert np.array_equal(row, extract_features(x).values)
    ff = FourierFeatures().fit(X)
    assert np.array_equal(ff.transform(X), batch)
    assert list(ff.get_feature_names_out()) == list(FEATURE_NAMES)


def test_duplicated_column_correlates_one():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(50, 8))
    F[:, 3] = F[:, 1]
    corr = correlation_report(F)
    assert abs(corr[1, 3] - 1.0) < 1e-12
    assert corr.shape == (8, 8)
    np.testing.assert_allclose(np.diag(corr), 1.0)


def test_independent_features_uncorrelated():
    rng = np.random.default_rng(42)
    corr = correlation_report(rng.uniform(size=(10000, 2)))
    assert abs(corr[0, 1]) < 0.05


def test_constant_column_and_too_few_rows(tmp_path):
    F = np.random.default_rng(0).normal(size=(10, 8))
    F[:, 2] = 5.0
    corr = correlation_report(F)
    assert corr[2, 0] == 0.0 and corr[2, 2] == 1.0
    with pytest.raises(InsufficientDataError):
        correlation_report(F[:2])
    write_correlation_csv(corr, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 9 and lines[0].split(",")[1:] == list(FEATURE_NAMES)


coefs = st.lists(st.tuples(st.floats(0.01, 5.0), st.floats(-3.1, 3.1)), min_size=15, max_size=15)


@settings(max_examples=40, deadline=None)
@given(coefs, st.floats(-2, 2))
def test_amplitude_phase_round_trip(c, dc):
    x = dc + sum(a * np.cos(2 * np.pi * (n + 1) * t / T + p) for n, (a, p) in enumerate(c))
    h = harmonics(x, 15)
    rebuilt = np.mean(x) + sum(a * np.cos(2 * np.pi * n * t / T + p) for n, a, p in h)
    np.testing.assert_allclose(rebuilt, x, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(coefs, st.floats(0.01, 100.0))
def test_scale_covariance(c, scale):
    x = sum(a * np.cos(2 * np.pi * (n + 1) * t / T + p) for n, (a, p) in enumerate(c))
    f, g = extract_features(x).values, extract_features(scale * x).values
    assert abs(g[0] - scale * f[0]) <= 1e-9 * scale * f[0]
    np.testing.assert_allclose(g[1:], f[1:], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(coefs)
def test_time_reversal_negates_phase(c):
    x = sum(a * np.cos(2 * np.pi * (n + 1) * t / T + p) for n, (a, p) in enumerate(c))
    rev = x[(-t) % T]
    for (n, a, p), (_, a2, p2) in zip(harmonics(x, 15), harmonics(rev, 15)):
        assert abs(a - a2) < 1e-9
        assert abs(math.remainder(p + p2, 2 * math.pi)) < 1e-8
    np.testing.assert_allclose(extract_features(rev).values, extract_features(x).values, atol=1e-9)
