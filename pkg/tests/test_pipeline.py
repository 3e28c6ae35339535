import json
import math

import numpy as np
import pytest

from eventnilm import ingest
from eventnilm.evaluation import build_test_set, build_train_set
from eventnilm.explain import sample_background
from eventnilm.gbdt import GBDTClassifier
from eventnilm.pipeline import EventPipeline, PipelineConfig, bench, format_bench, run_stream, signature_scaling


@pytest.fixture(scope="module")
def trained():
    archs = ingest.default_archetypes()
    base = ingest.ScenarioSpec(archs, [], 1.0)
    recordings = [
        (ingest.synthesize(ingest.submetered_scenario(base, a.archetype_id, 1.0))[0], a.archetype_id) for a in archs
    ]
    X, y = build_train_set(recordings)
    model = GBDTClassifier(n_estimators=15, max_depth=4).fit(X, y)
    return model, sample_background(X, 100, 42)


def single_event(label="Fridge", t_on=0.6, seconds=1.5, **kw):
    archs = ingest.default_archetypes()
    return ingest.synthesize(ingest.ScenarioSpec(archs, [(t_on, label, "on")], seconds, **kw))


def test_single_turn_on(trained):
    model, bg = trained
    stream, truth = single_event("Fridge")
    events, _ = run_stream(stream, model, PipelineConfig(explain=True), bg, chunk_samples=1000)
    assert len(events) == 1
    ev = events[0]
    assert ev.label == "Fridge"
    assert ev.event.direction == "on"
    assert abs(ev.time_s - truth[0].sample_index / 30000) < 0.04
    assert not ev.partial and ev.n_a_used == 18
    phi = ev.explanation.phi
    assert abs(phi.sum() + ev.explanation.base_value - ev.explanation.output_value) < 1e-6


def test_constant_load_no_events(trained):
    model, _ = trained
    stream, _ = single_event("Heater", t_on=0.0, seconds=2.0)
    events, pipe = run_stream(stream, model, chunk_samples=4096)
    assert events == [] and pipe.n_cycles > 90


def test_latency_decomposition(trained):
    model, _ = trained
    stream, _ = single_event()
    config = PipelineConfig(f0_hz=50.0)
    assert math.isclose(config.record_latency_s, 0.38)
    (ev,), _ = run_stream(stream, model, config)
    assert ev.tau_s > 0
    assert ev.delta_t_s == pytest.approx(0.38 + ev.tau_s, abs=1e-12)
    assert math.isclose(PipelineConfig(f0_hz=60.0).record_latency_s, 19 / 60)


def test_no_timing_gives_nulls_and_determinism(trained):
    model, bg = trained
    stream, _ = single_event()
    config = PipelineConfig(explain=True, timing=False)
    a, _ = run_stream(stream, model, config, bg, 3000)
    b, _ = run_stream(stream, model, config, bg, 777)
    ja = [json.dumps(e.to_json()) for e in a]
    jb = [json.dumps(e.to_json()) for e in b]
    assert ja == jb
    assert a[0].to_json()["tau_s"] is None


def test_jsonl_record_fields(trained):
    model, bg = trained
    stream, _ = single_event()
    (ev,), _ = run_stream(stream, model, PipelineConfig(explain=True), bg)
    rec = ev.to_json()
    assert set(rec) == {
        "cycle", "time_s", "direction", "z", "delta_p_w", "label", "proba", "features", "shap", "tau_s",
        "delta_t_s", "partial",
    }
    assert abs(sum(rec["proba"].values()) - 1) < 1e-12
    assert list(rec["features"]) == list(rec["shap"])


def test_emission_waits_for_full_window(trained):
    model, _ = trained
    scen = ingest.default_scenario(n_events=6, seed=5, noise_snr_db=None, frequency_drift_hz=0.0)
    stream, _ = ingest.synthesize(scen)
    pipe = EventPipeline(model, PipelineConfig())
    seen = []
    for lo in range(0, len(stream), 600):
        for ev in pipe.push(stream.voltage[lo:lo + 600], stream.current[lo:lo + 600]):
            assert pipe.n_cycles >= ev.event.cycle_index + 18
            seen.append(ev.event.cycle_index)
    seen += [e.event.cycle_index for e in pipe.finish()]
    assert seen == sorted(seen) and len(seen) == 6
    assert pipe.max_buffered_cycles <= 18 + 10 + 2


def test_partial_event_at_stream_end(trained):
    model, _ = trained
    stream, _ = single_event(t_on=1.0, seconds=1.2)
    events, _ = run_stream(stream, model)
    assert len(events) == 1
    assert events[0].partial and events[0].n_a_used < 18


def test_streaming_matches_batch_features(trained):
    model, _ = trained
    scen = ingest.default_scenario(n_events=8, seed=9)
    stream, truth = ingest.synthesize(scen)
    events, _ = run_stream(stream, model, PipelineConfig(timing=False), chunk_samples=2345)
    test = build_test_set([(stream, truth)])
    assert [e.event.cycle_index for e in events] == [e.cycle_index for e in test.events]
    np.testing.assert_array_equal(np.stack([e.features for e in events]), test.X)


def test_explain_requires_background(trained):
    model, _ = trained
    with pytest.raises(ValueError, match="background"):
        EventPipeline(model, PipelineConfig(explain=True))


def test_bench_report(trained):
    model, bg = trained
    stream, _ = single_event()
    report = bench(stream, model, PipelineConfig(explain=True), repetitions=10, background=bg, scaling=False)
    assert report["tau_samples"] == 10
    assert report["tau_median_s"] > 0
    assert report["delta_t_median_s"] == pytest.approx(0.38 + report["tau_median_s"])
    assert "tau median" in format_bench(report)


def test_bench_without_events_raises(trained):
    model, _ = trained
    stream, _ = single_event("Heater", t_on=0.0, seconds=0.5)
    with pytest.raises(ValueError, match="no events"):
        bench(stream, model, PipelineConfig(), repetitions=2, scaling=False)


def test_signature_stage_scales_near_linearly():
    rows = signature_scaling(18, sizes=(500, 1000), repeats=300)
    assert rows[1]["median_s"] <= 2.2 * rows[0]["median_s"]
