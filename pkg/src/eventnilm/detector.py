"""Per-cycle active power and the sliding-window z-score event detector."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_WINDOW = 10
DEFAULT_Z = 30.0
DEFAULT_SIGMA_FLOOR = 0.01


def active_power(cycle) -> float:
    """Mean of v*i over one resampled cycle, in watts."""
    return float(np.dot(cycle.v, cycle.i) / cycle.v.shape[0])


@dataclass
class Event:
    cycle_index: int
    direction: str
    z_score: float
    p_before: float
    p_after: float
    # median power of the post-event cycles, once known
    p_settled: float | None = None

    @property
    def delta_p(self) -> float:
        return (self.p_after if self.p_settled is None else self.p_settled) - self.p_before


def settle(event: Event, post_powers) -> Event:
    """Fix the direction from the median post-event power.

    The cycle that contains the switch can overshoot in the wrong direction
    (e.g. a low power-factor load switching off mid-cycle), so the sign of
    ``p_after - p_before`` alone is unreliable.
    """
    settled = float(np.median(np.asarray(post_powers, dtype=np.float64)))
    return replace(event, p_settled=settled, direction="on" if settled > event.p_before else "off")


@dataclass
class DetectorState:
    w: int = DEFAULT_WINDOW
    Z: float = DEFAULT_Z
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    window: deque = field(default=None)
    blind_remaining: int = 0

    def __post_init__(self):
        if self.w < 2:
            raise ValueError(f"window must hold at least 2 cycles, got {self.w}")
        if self.window is None:
            self.window = deque(maxlen=self.w)
        self.last_z: float | None = None

    def statistics(self) -> tuple[float, float]:
        """Window mean and population standard deviation."""
        # plain Python: w is small and this runs once per cycle
        n = len(self.window)
        mu = sum(self.window) / n
        return mu, math.sqrt(sum((x - mu) ** 2 for x in self.window) / n)


def step(state: DetectorState, k: int, p: float) -> Event | None:
    """Feed the power of cycle ``k``; returns an Event when its z-score exceeds Z."""
    state.last_z = None
    if state.blind_remaining > 0:
        state.blind_remaining -= 1
        state.window.append(p)
        return None
    if len(state.window) < state.w:
        state.window.append(p)
        return None
    mu, sigma = state.statistics()
    z = abs(p - mu) / max(sigma, state.sigma_floor)
    state.last_z = z
    if z > state.Z:
        state.window.clear()
        state.blind_remaining = state.w
        return Event(k, "on" if p > mu else "off", z, mu, p)
    state.window.append(p)
    return None


def detect(powers, w: int = DEFAULT_WINDOW, Z: float = DEFAULT_Z, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> list[Event]:
    """Run the detector over a whole power sequence."""
    state = DetectorState(w, Z, sigma_floor)
    events = []
    for k, p in enumerate(powers):
        ev = step(state, k, float(p))
        if ev is not None:
            events.append(ev)
    return events
