import time

import numpy as np
import pytest

from eventnilm import ingest
from eventnilm.evaluation import build_test_set, build_train_set
from eventnilm.gbdt import GBDTClassifier

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def make_cycle(v, i):
    from eventnilm.fitps import Cycle

    return Cycle(np.asarray(v, dtype=float), np.asarray(i, dtype=float), 0.0, float(len(v)))


@pytest.fixture(scope="session")
def synthetic_corpus():
    """8 archetypes, 200 events, 40 dB SNR, 0.5 Hz drift: train on submetered cycles, test on detections."""
    t0 = time.perf_counter()
    scenario = ingest.default_scenario(n_events=200, seed=42, noise_snr_db=40.0, frequency_drift_hz=0.5)
    stream, events = ingest.synthesize(scenario)
    sigma = ingest.estimate_noise_sigma(stream, scenario.noise_snr_db)
    recordings = []
    for arch in scenario.archetypes:
        sub, _ = ingest.synthesize(ingest.submetered_scenario(scenario, arch.archetype_id, 10.0, noise_sigma_a=sigma))
        recordings.append((sub, arch.archetype_id))
    X_train, y_train = build_train_set(recordings)
    model = GBDTClassifier(random_state=42).fit(X_train, y_train)
    test = build_test_set([(stream, events)])
    predictions = model.predict(test.X)
    elapsed = time.perf_counter() - t0
    return {
        "scenario": scenario,
        "stream": stream,
        "events": events,
        "X_train": X_train,
        "y_train": y_train,
        "model": model,
        "test": test,
        "predictions": predictions,
        "elapsed_s": elapsed,
    }


@pytest.fixture(scope="session")
def small_model():
    """A quick 3-class model on separable random clusters."""
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(3, 8)) * 3
    y = np.repeat(np.array(["a", "b", "c"]), 40)
    X = centers[np.repeat(np.arange(3), 40)] + rng.normal(size=(120, 8))
    model = GBDTClassifier(n_estimators=10, max_depth=3, reg_alpha=0.0).fit(X, y)
    return model, X, y
