"""Frequency-invariant resampling of mains cycles.

Every period between two rising voltage zero-crossings is linearly resampled
to a fixed number of points, so downstream code can treat one row as exactly
one fundamental period regardless of the instantaneous grid frequency.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

DEFAULT_CYCLE_SAMPLES = 500
MIN_CYCLE_SAMPLES = 16
# cycles whose raw span deviates more than this from the nominal period are flagged
DURATION_TOLERANCE = 0.2


class InsufficientSignalError(ValueError):
    pass


@dataclass
class Cycle:
    v: np.ndarray
    i: np.ndarray
    start_sample: float
    duration_samples: float
    flagged: bool = False

    @property
    def T(self) -> int:
        return self.v.shape[0]


def _rising_crossings(voltage: np.ndarray, offset: float = 0.0) -> np.ndarray:
    v = voltage
    j = np.flatnonzero((v[:-1] < 0) & (v[1:] >= 0))
    frac = -v[j] / (v[j + 1] - v[j])
    return offset + j + frac


def find_zero_crossings(voltage) -> np.ndarray:
    """Fractional indices of rising (negative to non-negative) zero-crossings."""
    v = np.asarray(voltage, dtype=np.float64)
    if v.shape[0] < 2:
        raise InsufficientSignalError("need at least 2 samples")
    crossings = _rising_crossings(v)
    if v[0] == 0 and v[1] > 0:
        # signal starts exactly on a rising zero
        crossings = np.concatenate(([0.0], crossings))
    if crossings.shape[0] < 2:
        raise InsufficientSignalError(f"found {crossings.shape[0]} rising zero-crossing(s), need 2")
    return crossings


def resample_cycle(v, i, start: float, stop: float, T: int, origin: float = 0.0) -> Cycle:
    """Interpolate ``v`` and ``i`` at ``T`` evenly spaced points over ``[start, stop)``.

    ``start``/``stop`` are in the coordinates of the raw stream; ``origin`` is
    the stream index of ``v[0]``.
    """
    pos = start + (stop - start) * np.arange(T) / T - origin
    lo = max(int(np.floor(pos[0])), 0)
    hi = min(int(np.ceil(stop - origin)) + 1, v.shape[0])
    grid = np.arange(lo, hi, dtype=np.float64)
    return Cycle(np.interp(pos, grid, v[lo:hi]), np.interp(pos, grid, i[lo:hi]), start, stop - start)


def fitps(stream, T: int = DEFAULT_CYCLE_SAMPLES, f0_hz: float | None = None) -> list[Cycle]:
    """Resample every complete voltage period of ``stream`` to ``T`` points."""
    if T < MIN_CYCLE_SAMPLES:
        raise ValueError(f"T must be >= {MIN_CYCLE_SAMPLES}, got {T}")
    crossings = find_zero_crossings(stream.voltage)
    nominal = stream.sample_rate_hz / f0_hz if f0_hz else float(np.median(np.diff(crossings)))
    cycles = []
    for a, b in zip(crossings[:-1], crossings[1:]):
        cyc = resample_cycle(stream.voltage, stream.current, a, b, T)
        cyc.flagged = abs(cyc.duration_samples - nominal) > DURATION_TOLERANCE * nominal
        cycles.append(cyc)
    return cycles


class CycleResampler:
    """Incremental FITPS: push raw chunks, get completed cycles back.

    Only the samples since the last crossing (plus one for bracketing) are
    retained between calls.
    """

    def __init__(self, T: int = DEFAULT_CYCLE_SAMPLES, sample_rate_hz: float = 30000.0, f0_hz: float = 50.0):
        if T < MIN_CYCLE_SAMPLES:
            raise ValueError(f"T must be >= {MIN_CYCLE_SAMPLES}, got {T}")
        self.T = T
        self.nominal = sample_rate_hz / f0_hz
        self._v = np.empty(0)
        self._i = np.empty(0)
        self._origin = 0  # stream index of self._v[0]
        self._last_crossing: float | None = None

    def push(self, voltage, current) -> Iterator[Cycle]:
        v = np.concatenate((self._v, np.asarray(voltage, dtype=np.float64)))
        i = np.concatenate((self._i, np.asarray(current, dtype=np.float64)))
        if v.shape[0] < 2:
            self._v, self._i = v, i
            return
        crossings = _rising_crossings(v, self._origin)
        if self._last_crossing is None and self._origin == 0 and v[0] == 0 and v[1] > 0:
            crossings = np.concatenate(([0.0], crossings))
        if self._last_crossing is not None:
            crossings = crossings[crossings > self._last_crossing]
            crossings = np.concatenate(([self._last_crossing], crossings))
        for a, b in zip(crossings[:-1], crossings[1:]):
            cyc = resample_cycle(v, i, a, b, self.T, self._origin)
            cyc.flagged = abs(cyc.duration_samples - self.nominal) > DURATION_TOLERANCE * self.nominal
            yield cyc
        if crossings.shape[0]:
            self._last_crossing = float(crossings[-1])
            keep = max(int(np.floor(self._last_crossing)) - self._origin, 0)
        else:
            # no crossing yet: keep the tail only
            keep = max(v.shape[0] - 1, 0)
        self._v, self._i = v[keep:], i[keep:]
        self._origin += keep

    @property
    def buffered_samples(self) -> int:
        return self._v.shape[0]
