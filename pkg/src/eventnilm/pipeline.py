"""Streaming orchestration: raw samples in, classified and explained events out."""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import detector as det
from .explain import DEFAULT_BACKGROUND_SIZE, Explanation, shapley
from .features import FEATURE_NAMES, extract_features
from .fitps import DEFAULT_CYCLE_SAMPLES, CycleResampler
from .signature import (
    CYCLES_BEFORE,
    DEFAULT_CYCLES_AFTER,
    DEFAULT_GUARD_CYCLES,
    ActivationWindow,
    estimate_signature,
)

STAGES = ("fitps", "detect", "signature", "features", "predict", "explain")


@dataclass
class PipelineConfig:
    T: int = DEFAULT_CYCLE_SAMPLES
    w: int = det.DEFAULT_WINDOW
    Z: float = det.DEFAULT_Z
    sigma_floor: float = det.DEFAULT_SIGMA_FLOOR
    n_a: int = DEFAULT_CYCLES_AFTER
    guard: int = DEFAULT_GUARD_CYCLES
    f0_hz: float = 50.0
    sample_rate_hz: float = 30000.0
    explain: bool = False
    background_size: int = DEFAULT_BACKGROUND_SIZE
    timing: bool = True

    def __post_init__(self):
        if self.f0_hz <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("f0_hz and sample_rate_hz must be positive")
        if self.n_a < 1:
            raise ValueError(f"n_a must be >= 1, got {self.n_a}")
        if self.guard < 0:
            raise ValueError(f"guard must be >= 0, got {self.guard}")

    @property
    def record_latency_s(self) -> float:
        """Time to record the pre-event cycle plus ``n_a`` post-event cycles."""
        return (CYCLES_BEFORE + self.n_a) / self.f0_hz


@dataclass
class ClassifiedEvent:
    event: det.Event
    time_s: float
    label: object
    proba: dict
    features: np.ndarray
    explanation: Explanation | None
    n_a_used: int
    partial: bool
    tau_s: float | None = None
    delta_t_s: float | None = None

    def to_json(self, feature_names=FEATURE_NAMES) -> dict:
        return {
            "cycle": self.event.cycle_index,
            "time_s": self.time_s,
            "direction": self.event.direction,
            "z": self.event.z_score,
            "delta_p_w": self.event.delta_p,
            "label": str(self.label),
            "proba": self.proba,
            "features": dict(zip(feature_names, map(float, self.features))),
            "shap": self.explanation.as_dict(feature_names) if self.explanation is not None else None,
            "tau_s": self.tau_s,
            "delta_t_s": self.delta_t_s,
            "partial": self.partial,
        }


@dataclass
class _Pending:
    event: det.Event
    time_s: float
    i_b: np.ndarray
    after: list = field(default_factory=list)
    powers: list = field(default_factory=list)


class EventPipeline:
    """Single-stream, single-consumer pipeline. Feed chunks with ``push``; call ``finish`` at end of stream."""

    def __init__(self, model, config: PipelineConfig | None = None, background=None):
        self.model = model
        self.config = config or PipelineConfig()
        if self.config.explain and background is None:
            raise ValueError("explain=True requires a background set")
        self.background = None if background is None else np.asarray(background, dtype=np.float64)
        c = self.config
        self._resampler = CycleResampler(c.T, c.sample_rate_hz, c.f0_hz)
        self._state = det.DetectorState(c.w, c.Z, c.sigma_floor)
        self._k = 0
        self._history = deque(maxlen=CYCLES_BEFORE + c.guard)
        self._pending: list[_Pending] = []
        self.stage_seconds = dict.fromkeys(STAGES, 0.0)
        self.max_buffered_cycles = 0
        self.n_cycles = 0

    def push(self, voltage, current) -> list[ClassifiedEvent]:
        out = []
        t0 = time.perf_counter()
        cycles = list(self._resampler.push(voltage, current))
        self.stage_seconds["fitps"] += time.perf_counter() - t0
        for cycle in cycles:
            out.extend(self._on_cycle(cycle))
        return out

    def finish(self) -> list[ClassifiedEvent]:
        """Emit events whose windows were cut short by the end of the stream."""
        out = [self._classify(p, partial=True) for p in self._pending if p.after]
        self._pending = []
        return out

    def _on_cycle(self, cycle) -> list[ClassifiedEvent]:
        k = self._k
        self._k += 1
        self.n_cycles += 1
        t0 = time.perf_counter()
        power = det.active_power(cycle)
        event = det.step(self._state, k, power)
        self.stage_seconds["detect"] += time.perf_counter() - t0
        if event is not None and len(self._history) == self._history.maxlen:
            self._pending.append(_Pending(event, cycle.start_sample / self.config.sample_rate_hz, self._history[0].i))
        out = []
        for p in self._pending:
            if k >= p.event.cycle_index + self.config.guard:
                p.after.append(cycle.i)
                p.powers.append(power)
        self._track_memory(cycle)
        while self._pending and len(self._pending[0].after) >= self.config.n_a:
            out.append(self._classify(self._pending.pop(0), partial=False))
        self._history.append(cycle)
        return out

    def _track_memory(self, cycle) -> None:
        held = {id(cycle.i)} | {id(c.i) for c in self._history}
        for p in self._pending:
            held.add(id(p.i_b))
            held.update(id(a) for a in p.after)
        self.max_buffered_cycles = max(self.max_buffered_cycles, len(held))

    def _classify(self, p: _Pending, partial: bool) -> ClassifiedEvent:
        t_start = time.perf_counter()
        stages = self.stage_seconds
        t0 = time.perf_counter()
        event = det.settle(p.event, p.powers)
        sig = estimate_signature(ActivationWindow(p.i_b, np.stack(p.after)), event.direction, event, self.config.n_a)
        t1 = time.perf_counter()
        feats = extract_features(sig).values
        t2 = time.perf_counter()
        proba = self.model.predict_proba(feats[None, :])[0]
        label = self.model.classes_[int(np.argmax(proba))]
        t3 = time.perf_counter()
        explanation = None
        if self.config.explain:
            explanation = shapley(self.model, feats, self.background, label)
        t4 = time.perf_counter()
        stages["signature"] += t1 - t0
        stages["features"] += t2 - t1
        stages["predict"] += t3 - t2
        stages["explain"] += t4 - t3
        tau = delta = None
        if self.config.timing:
            tau = time.perf_counter() - t_start
            delta = self.config.record_latency_s + tau
        return ClassifiedEvent(
            event,
            p.time_s,
            label,
            {str(c): float(v) for c, v in zip(self.model.classes_, proba)},
            feats,
            explanation,
            len(p.after),
            partial or sig.partial,
            tau,
            delta,
        )


def run_stream(stream, model, config: PipelineConfig | None = None, background=None, chunk_samples: int | None = None):
    """Classify every event of ``stream``; ``chunk_samples`` feeds it incrementally."""
    config = config or PipelineConfig(sample_rate_hz=stream.sample_rate_hz)
    pipe = EventPipeline(model, config, background)
    n = len(stream)
    step = chunk_samples or n
    events = []
    for lo in range(0, n, step):
        events.extend(pipe.push(stream.voltage[lo:lo + step], stream.current[lo:lo + step]))
    events.extend(pipe.finish())
    return events, pipe


def bench(stream, model, config: PipelineConfig, repetitions: int = 10, background=None, scaling: bool = True) -> dict:
    """Latency report: per-stage totals, tau quantiles, and empirical T/N_a scaling of the signature stage."""
    taus, stage_totals = [], dict.fromkeys(STAGES, 0.0)
    n_events = 0
    for _ in range(repetitions):
        events, pipe = run_stream(stream, model, config, background)
        n_events = len(events)
        taus.extend(e.tau_s for e in events if e.tau_s is not None)
        for s, v in pipe.stage_seconds.items():
            stage_totals[s] += v / repetitions
    if not taus:
        raise ValueError("no events in stream; nothing to time")
    tau = np.array(taus)
    report = {
        "repetitions": repetitions,
        "events_per_run": n_events,
        "tau_samples": len(taus),
        "tau_median_s": float(np.median(tau)),
        "tau_p95_s": float(np.percentile(tau, 95)),
        "record_latency_s": config.record_latency_s,
        "delta_t_median_s": config.record_latency_s + float(np.median(tau)),
        "delta_t_p95_s": config.record_latency_s + float(np.percentile(tau, 95)),
        "stage_seconds_per_run": stage_totals,
        "complexity": COMPLEXITY_TABLE,
    }
    if scaling:
        report["scaling"] = signature_scaling(config.n_a)
    return report


COMPLEXITY_TABLE = {
    "fitps": "O(T)",
    "detect": "O(w)",
    "signature": "O(T N_a log(T N_a))",
    "features": "O(T log T)",
    "predict": "O(E D)",
    "overall": "O(T N_a log(T N_a))",
}


def signature_scaling(n_a: int = DEFAULT_CYCLES_AFTER, sizes=(500, 1000, 2000), repeats: int = 200, seed: int = 0) -> list[dict]:
    """Median time of signature + feature extraction on random windows for several cycle lengths."""
    rng = np.random.default_rng(seed)
    rows = []
    for T in sizes:
        win = ActivationWindow(rng.normal(size=T), rng.normal(size=(n_a, T)))
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            extract_features(estimate_signature(win))
            samples.append(time.perf_counter() - t0)
        rows.append({"T": T, "n_a": n_a, "median_s": float(np.median(samples))})
    return rows


def format_bench(report: dict) -> str:
    lines = [
        f"events per run: {report['events_per_run']}, tau samples: {report['tau_samples']}",
        f"tau median {report['tau_median_s'] * 1e3:.2f} ms, p95 {report['tau_p95_s'] * 1e3:.2f} ms",
        f"delta_t = {report['record_latency_s']:.3f} s + tau = {report['delta_t_median_s']:.3f} s (median)",
        "stage            seconds/run   complexity",
    ]
    for s in STAGES:
        lines.append(f"{s:<16} {report['stage_seconds_per_run'][s]:>11.4f}   {report['complexity'].get(s, '')}")
    lines.append(f"overall complexity: {report['complexity']['overall']}")
    for row in report.get("scaling", []):
        lines.append(f"signature+features T={row['T']:>5} N_a={row['n_a']}: {row['median_s'] * 1e6:.1f} us")
    return "\n".join(lines)
