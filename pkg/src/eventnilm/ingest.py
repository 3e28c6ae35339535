"""Waveform/metadata readers and a deterministic synthetic scenario generator."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PLAID_SAMPLE_RATE_HZ = 30000.0

PLAID_LABELS = (
    "Air Conditioner",
    "Blender",
    "Coffee maker",
    "Compact Fluorescent Lamp",
    "Fan",
    "Fridge",
    "Hair Iron",
    "Hairdryer",
    "Heater",
    "Incandescent Light Bulb",
    "Laptop",
    "Microwave",
    "Soldering Iron",
    "Vacuum",
    "Washing Machine",
)


class IngestError(ValueError):
    """Raised for malformed waveform, metadata or scenario inputs."""


class EmptyInputError(IngestError):
    pass


class SchemaError(IngestError):
    pass


@dataclass
class RawStream:
    current: np.ndarray
    voltage: np.ndarray
    sample_rate_hz: float = PLAID_SAMPLE_RATE_HZ
    source_id: str = ""

    def __post_init__(self):
        self.current = np.asarray(self.current, dtype=np.float64)
        self.voltage = np.asarray(self.voltage, dtype=np.float64)
        if self.current.shape != self.voltage.shape or self.current.ndim != 1:
            raise IngestError("current and voltage must be 1-D sequences of equal length")
        if not self.sample_rate_hz > 0:
            raise IngestError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.current.shape[0]


@dataclass
class LabeledEvent:
    sample_index: int
    direction: str
    appliance_label: str
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.sample_index < 0:
            raise SchemaError(f"sample_index must be >= 0, got {self.sample_index}")
        if self.direction not in ("on", "off"):
            raise SchemaError(f"direction must be 'on' or 'off', got {self.direction!r}")


@dataclass
class ApplianceArchetype:
    """A synthetic appliance defined by its steady-state harmonic content.

    ``harmonics`` holds ``(order, amplitude_A, phase_rad)`` triples; the
    appliance draws ``sum(a * cos(n * theta + phi))`` where ``theta`` is the
    voltage phase measured from the rising zero-crossing.
    """

    archetype_id: str
    harmonics: list[tuple[int, float, float]]
    transient_cycles: int = 0
    transient_gain: float = 1.0

    def __post_init__(self):
        self.harmonics = [(int(n), float(a), float(p)) for n, a, p in self.harmonics]
        orders = [n for n, _, _ in self.harmonics]
        if len(set(orders)) != len(orders) or any(n < 1 for n in orders):
            raise SchemaError(f"{self.archetype_id}: harmonic orders must be distinct and >= 1")
        if any(a < 0 for _, a, _ in self.harmonics):
            raise SchemaError(f"{self.archetype_id}: harmonic amplitudes must be >= 0")
        if self.transient_cycles < 0 or self.transient_gain < 1:
            raise SchemaError(f"{self.archetype_id}: need transient_cycles >= 0 and transient_gain >= 1")

    def waveform(self, theta: np.ndarray) -> np.ndarray:
        out = np.zeros_like(theta)
        for n, a, phi in self.harmonics:
            out += a * np.cos(n * theta + phi)
        return out


@dataclass
class ScenarioSpec:
    archetypes: list[ApplianceArchetype]
    schedule: list[tuple[float, str, str]]
    duration_s: float
    noise_snr_db: float | None = None
    grid_frequency_hz: float = 50.0
    frequency_drift_hz: float = 0.0
    seed: int = 42
    sample_rate_hz: float = PLAID_SAMPLE_RATE_HZ
    voltage_peak_v: float = 170.0
    drift_period_s: float = 10.0
    source_id: str = "aggregate"
    # absolute current noise std (A); overrides noise_snr_db when set
    noise_sigma_a: float | None = None

    def __post_init__(self):
        ids = {a.archetype_id for a in self.archetypes}
        if len(ids) != len(self.archetypes):
            raise SchemaError("archetype ids must be unique")
        self.schedule = sorted(
            ((float(t), str(a), str(d)) for t, a, d in self.schedule), key=lambda e: e[0]
        )
        state: dict[str, tuple[float, str]] = {}
        for t, aid, direction in self.schedule:
            if aid not in ids:
                raise SchemaError(f"schedule references unknown archetype {aid!r}")
            if direction not in ("on", "off"):
                raise SchemaError(f"schedule direction must be on/off, got {direction!r}")
            if not 0 <= t < self.duration_s:
                raise SchemaError(f"schedule time {t} outside [0, {self.duration_s})")
            prev = state.get(aid)
            if prev is not None:
                if t <= prev[0]:
                    raise SchemaError(f"{aid}: schedule times must be strictly increasing")
                if prev[1] == direction:
                    raise SchemaError(
                        f"{aid}: overlapping intervals, consecutive {direction!r} events at t={prev[0]} and t={t}"
                    )
            elif direction == "off":
                raise SchemaError(f"{aid}: first event must be 'on'")
            state[aid] = (t, direction)

    def archetype(self, archetype_id: str) -> ApplianceArchetype:
        for a in self.archetypes:
            if a.archetype_id == archetype_id:
                return a
        raise KeyError(archetype_id)


def read_plaid_stream(
    path,
    column_order: str = "current_first",
    sample_rate_hz: float = PLAID_SAMPLE_RATE_HZ,
    source_id: str | None = None,
) -> RawStream:
    """Read a two-column waveform CSV (optional single header line)."""
    if column_order not in ("current_first", "voltage_first"):
        raise ValueError(f"unknown column_order {column_order!r}")
    path = Path(path)
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    rows: list[tuple[float, float]] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        try:
            if len(parts) != 2:
                raise ValueError
            a, b = float(parts[0]), float(parts[1])
        except ValueError:
            if lineno == 1 and not rows:
                continue  # header
            raise IngestError(f"{path}: line {lineno}: expected two numeric columns, got {line!r}") from None
        rows.append((a, b))
    if not rows:
        raise EmptyInputError(f"{path}: no samples")
    data = np.array(rows, dtype=np.float64)
    if column_order == "current_first":
        current, voltage = data[:, 0], data[:, 1]
    else:
        voltage, current = data[:, 0], data[:, 1]
    return RawStream(current, voltage, sample_rate_hz, source_id if source_id is not None else path.stem)


def write_stream_csv(stream: RawStream, path, column_order: str = "current_first") -> None:
    cols = (stream.current, stream.voltage) if column_order == "current_first" else (stream.voltage, stream.current)
    header = "current,voltage" if column_order == "current_first" else "voltage,current"
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        # repr round-trips float64 exactly
        fh.writelines(f"{a!r},{b!r}\n" for a, b in zip(cols[0].tolist(), cols[1].tolist()))


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing required key {key!r}")
    return obj[key]


def parse_metadata(doc: dict) -> dict[str, dict]:
    """Validate a metadata document; returns ``{id: stream_entry}`` with parsed events."""
    streams = _require(doc, "streams", "metadata")
    out = {}
    for n, entry in enumerate(streams):
        where = f"streams[{n}]"
        sid = str(_require(entry, "id", where))
        events = []
        for m, ev in enumerate(_require(entry, "events", where)):
            ew = f"{where}.events[{m}]"
            label = str(_require(ev, "label", ew))
            event = LabeledEvent(int(_require(ev, "sample_index", ew)), str(_require(ev, "direction", ew)), label)
            if label not in PLAID_LABELS:
                event.warnings.append(f"label {label!r} not in appliance vocabulary")
            events.append(event)
        out[sid] = {**entry, "events": events}
    return out


def read_metadata(path) -> dict[str, list[LabeledEvent]]:
    """Map stream id to its labeled events. Unknown labels are kept and logged."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    parsed = parse_metadata(doc)
    unknown = sorted({e.appliance_label for v in parsed.values() for e in v["events"] if e.warnings})
    if unknown:
        logger.info("labels outside the appliance vocabulary: %s", ", ".join(unknown))
    return {sid: v["events"] for sid, v in parsed.items()}


def check_events_against_stream(events: Iterable[LabeledEvent], n_samples: int) -> list[LabeledEvent]:
    """Attach a warning to every event that points past the end of its stream."""
    events = list(events)
    for ev in events:
        if ev.sample_index >= n_samples:
            ev.warnings.append(f"sample_index {ev.sample_index} beyond stream length {n_samples}")
    return events


def voltage_phase(spec: ScenarioSpec, t: np.ndarray) -> np.ndarray:
    """Voltage phase theta(t) under a sinusoidal frequency drift of peak ``frequency_drift_hz``."""
    theta = 2 * np.pi * spec.grid_frequency_hz * t
    if spec.frequency_drift_hz:
        # integral of 2*pi*d*sin(2*pi*t/P)
        p = spec.drift_period_s
        theta = theta + spec.frequency_drift_hz * p * (1.0 - np.cos(2 * np.pi * t / p))
    return theta


def _archetype_envelope(spec: ScenarioSpec, arch: ApplianceArchetype, t: np.ndarray) -> np.ndarray:
    """Per-sample gain for one archetype: 0 when off, 1 in steady state, ramped after turn-on."""
    env = np.zeros_like(t)
    fs = spec.sample_rate_hz
    on_at = None
    events = [(time, d) for time, a, d in spec.schedule if a == arch.archetype_id]
    events.append((spec.duration_s, "off"))
    for time, direction in events:
        if direction == "on":
            on_at = time
            continue
        if on_at is None:
            continue
        lo, hi = math.ceil(on_at * fs), min(math.ceil(time * fs), t.shape[0])
        env[lo:hi] = 1.0
        if arch.transient_cycles and arch.transient_gain > 1:
            span = arch.transient_cycles / spec.grid_frequency_hz
            seg = slice(lo, min(hi, math.ceil((on_at + span) * fs)))
            frac = (t[seg] - on_at) / span
            env[seg] = arch.transient_gain - (arch.transient_gain - 1.0) * frac
        on_at = None
    return env


def synthesize(spec: ScenarioSpec) -> tuple[RawStream, list[LabeledEvent]]:
    """Render a scenario to an aggregate stream plus its ground-truth events."""
    fs = spec.sample_rate_hz
    n = int(round(spec.duration_s * fs))
    t = np.arange(n, dtype=np.float64) / fs
    theta = voltage_phase(spec, t)
    voltage = spec.voltage_peak_v * np.sin(theta)
    current = np.zeros(n)
    for arch in spec.archetypes:
        env = _archetype_envelope(spec, arch, t)
        if env.any():
            current += env * arch.waveform(theta)
    sigma = spec.noise_sigma_a
    if sigma is None and spec.noise_snr_db is not None:
        rms = float(np.sqrt(np.mean(current**2))) if n else 0.0
        sigma = rms / 10 ** (spec.noise_snr_db / 20.0)
    if sigma is not None:
        rng = np.random.default_rng(spec.seed)
        current = current + rng.normal(0.0, sigma, size=n)
    events = [
        LabeledEvent(math.ceil(time * fs), direction, aid)
        for time, aid, direction in spec.schedule
    ]
    return RawStream(current, voltage, fs, spec.source_id), events


def scenario_from_dict(doc: dict) -> ScenarioSpec:
    archetypes = [
        ApplianceArchetype(
            str(_require(a, "archetype_id", "archetype")),
            [tuple(h) for h in _require(a, "harmonic_spec", "archetype")],
            int(a.get("transient_cycles", 0)),
            float(a.get("transient_gain", 1.0)),
        )
        for a in _require(doc, "archetypes", "scenario")
    ]
    kwargs = {
        k: doc[k]
        for k in (
            "noise_snr_db",
            "grid_frequency_hz",
            "frequency_drift_hz",
            "seed",
            "sample_rate_hz",
            "voltage_peak_v",
            "drift_period_s",
            "source_id",
            "noise_sigma_a",
        )
        if k in doc
    }
    return ScenarioSpec(
        archetypes,
        [tuple(e) for e in _require(doc, "schedule", "scenario")],
        float(_require(doc, "duration_s", "scenario")),
        **kwargs,
    )


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "archetypes": [
            {
                "archetype_id": a.archetype_id,
                "harmonic_spec": [list(h) for h in a.harmonics],
                "transient_cycles": a.transient_cycles,
                "transient_gain": a.transient_gain,
            }
            for a in spec.archetypes
        ],
        "schedule": [list(e) for e in spec.schedule],
        "duration_s": spec.duration_s,
        "noise_snr_db": spec.noise_snr_db,
        "grid_frequency_hz": spec.grid_frequency_hz,
        "frequency_drift_hz": spec.frequency_drift_hz,
        "seed": spec.seed,
        "sample_rate_hz": spec.sample_rate_hz,
        "voltage_peak_v": spec.voltage_peak_v,
        "drift_period_s": spec.drift_period_s,
        "source_id": spec.source_id,
        "noise_sigma_a": spec.noise_sigma_a,
    }


_HALF_PI = math.pi / 2


def default_archetypes() -> list[ApplianceArchetype]:
    """Eight appliance archetypes with distinct harmonic fingerprints.

    Phases are relative to a sine voltage, so ``-pi/2`` on the fundamental is
    a unity power factor load.
    """
    return [
        ApplianceArchetype(
            "Heater",
            [(1, 5.0, -_HALF_PI), (2, 0.06, 1.1), (3, 0.1, -1.79), (4, 0.05, -1.2), (5, 0.075, 1.88),
             (7, 0.05, 3.12), (9, 0.05, -2.25)],
        ),
        ApplianceArchetype(
            "Incandescent Light Bulb",
            [(1, 0.9, -_HALF_PI), (2, 0.054, -2.65), (3, 0.072, -2.01), (4, 0.054, -0.88), (5, 0.054, -2.08),
             (7, 0.054, 0.56), (9, 0.054, 0.73)],
            3,
            2.5,
        ),
        ApplianceArchetype(
            "Fridge",
            [(1, 1.6, -_HALF_PI + 0.65), (2, 0.064, -2.48), (3, 0.256, 0.41), (4, 0.064, -3.11), (5, 0.08, -0.22),
             (7, 0.064, 2.99), (9, 0.064, 1.88)],
            6,
            3.0,
        ),
        ApplianceArchetype(
            "Fan",
            [(1, 1.1, -_HALF_PI + 1.0), (2, 0.055, 0.61), (3, 0.121, -1.1), (4, 0.055, -1.85), (5, 0.055, -0.36),
             (7, 0.055, -1.39), (9, 0.055, 2.36)],
        ),
        ApplianceArchetype(
            "Laptop",
            [(1, 0.8, -_HALF_PI + 0.25), (2, 0.056, -1.8), (3, 0.648, -1.42), (4, 0.056, 1.93), (5, 0.48, -1.46),
             (7, 0.296, -1.46), (9, 0.16, -2.7)],
        ),
        ApplianceArchetype(
            "Compact Fluorescent Lamp",
            [(1, 0.7, -_HALF_PI - 0.45), (2, 0.056, -0.21), (3, 0.546, -1.48), (4, 0.056, 2.44), (5, 0.399, -1.34),
             (7, 0.28, 1.72), (9, 0.182, -0.08)],
        ),
        ApplianceArchetype(
            "Microwave",
            [(1, 6.5, -_HALF_PI + 0.3), (2, 0.65, -0.2), (3, 1.365, 2.92), (4, 0.26, 2.5), (5, 0.5525, -2.65),
             (7, 0.13, -1.6), (9, 0.0975, -1.98)],
            4,
            1.8,
        ),
        ApplianceArchetype(
            "Hairdryer",
            [(1, 4.0, -_HALF_PI + 0.05), (2, 0.96, 2.55), (3, 0.4, 0.34), (4, 0.16, -0.81), (5, 0.12, 2.1),
             (7, 0.06, -0.95), (9, 0.06, 1.14)],
        ),
    ]


def random_schedule(
    archetype_ids: Sequence[str],
    n_events: int,
    rng: np.random.Generator,
    start_s: float = 1.0,
    gap_s: tuple[float, float] = (0.9, 1.4),
) -> tuple[list[tuple[float, str, str]], float]:
    """Serial on/off schedule: one event at a time, random gaps, toggling a random archetype.

    Returns the schedule and a duration that leaves room after the last event.
    """
    on: set[str] = set()
    schedule = []
    t = start_s
    for _ in range(n_events):
        aid = archetype_ids[int(rng.integers(len(archetype_ids)))]
        direction = "off" if aid in on else "on"
        (on.discard if direction == "off" else on.add)(aid)
        schedule.append((round(t, 6), aid, direction))
        t += float(rng.uniform(*gap_s))
    return schedule, round(t + 1.0, 6)


def default_scenario(
    n_events: int = 200,
    seed: int = 42,
    noise_snr_db: float | None = 40.0,
    frequency_drift_hz: float = 0.5,
    grid_frequency_hz: float = 50.0,
) -> ScenarioSpec:
    archetypes = default_archetypes()
    rng = np.random.default_rng(seed)
    schedule, duration = random_schedule([a.archetype_id for a in archetypes], n_events, rng)
    return ScenarioSpec(
        archetypes,
        schedule,
        duration,
        noise_snr_db=noise_snr_db,
        grid_frequency_hz=grid_frequency_hz,
        frequency_drift_hz=frequency_drift_hz,
        seed=seed,
    )


def estimate_noise_sigma(stream: RawStream, noise_snr_db: float | None) -> float | None:
    """Current noise std implied by a stream synthesized at ``noise_snr_db``.

    Uses rms_noisy**2 = rms_clean**2 + sigma**2.
    """
    if noise_snr_db is None:
        return None
    rms = float(np.sqrt(np.mean(stream.current**2)))
    return rms / math.sqrt(10 ** (noise_snr_db / 10.0) + 1.0)


def submetered_scenario(
    scenario: ScenarioSpec, archetype_id: str, duration_s: float = 10.0, noise_sigma_a: float | None = None
) -> ScenarioSpec:
    """Single-appliance recording of one archetype, on from t=0.

    Pass the aggregate meter's noise level as ``noise_sigma_a`` so training
    cycles see the same absolute noise floor; otherwise the scenario SNR is
    applied to this appliance alone.
    """
    return ScenarioSpec(
        [scenario.archetype(archetype_id)],
        [(0.0, archetype_id, "on")],
        duration_s,
        noise_snr_db=scenario.noise_snr_db,
        noise_sigma_a=noise_sigma_a,
        grid_frequency_hz=scenario.grid_frequency_hz,
        frequency_drift_hz=scenario.frequency_drift_hz,
        seed=scenario.seed + 1 + [a.archetype_id for a in scenario.archetypes].index(archetype_id),
        sample_rate_hz=scenario.sample_rate_hz,
        voltage_peak_v=scenario.voltage_peak_v,
        drift_period_s=scenario.drift_period_s,
        source_id=f"submetered/{archetype_id}",
    )
