"""Appliance current signature from the cycles around a detected event."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CYCLES_AFTER = 18
CYCLES_BEFORE = 1
# cycles skipped on each side of the detection cycle
DEFAULT_GUARD_CYCLES = 1


@dataclass
class ActivationWindow:
    i_b: np.ndarray
    i_a: np.ndarray  # shape (N_a, T)

    def __post_init__(self):
        self.i_b = np.asarray(self.i_b, dtype=np.float64)
        self.i_a = np.atleast_2d(np.asarray(self.i_a, dtype=np.float64))
        if self.i_a.shape[0] < 1:
            raise ValueError("need at least one post-event cycle")
        if self.i_a.shape[1] != self.i_b.shape[0]:
            raise ValueError(f"cycle lengths differ: before {self.i_b.shape[0]}, after {self.i_a.shape[1]}")

    @property
    def n_a(self) -> int:
        return self.i_a.shape[0]


@dataclass
class Signature:
    i_est: np.ndarray
    n_a_used: int
    event: object = None
    partial: bool = False

    @property
    def T(self) -> int:
        return self.i_est.shape[0]


def activation_currents(win: ActivationWindow) -> np.ndarray:
    return win.i_a - win.i_b


def estimate_signature(
    win: ActivationWindow, direction: str = "on", event=None, expected_n_a: int | None = None
) -> Signature:
    """Elementwise median of the activation currents.

    Turn-off windows are negated so on and off events of the same appliance
    produce the same signature.
    """
    i_est = np.median(activation_currents(win), axis=0)
    if direction == "off":
        i_est = -i_est
    partial = expected_n_a is not None and win.n_a < expected_n_a
    return Signature(i_est, win.n_a, event, partial)


def window_from_cycles(
    cycles, event_index: int, n_a: int = DEFAULT_CYCLES_AFTER, guard: int = DEFAULT_GUARD_CYCLES
) -> ActivationWindow | None:
    """Pre-event cycle ``event_index - 1 - guard`` and up to ``n_a`` cycles from ``event_index + guard`` on.

    The switch can fall anywhere inside cycle ``k - 1`` or ``k``, so those
    cycles may mix the old and new load. The guard keeps the same number of
    cycles out of both sides of the window; ``guard=0`` uses the cycle just
    before detection and starts the post-event cycles at detection.

    Returns None when the pre-event cycle or every post-event cycle is missing.
    """
    before = event_index - CYCLES_BEFORE - guard
    first = event_index + guard
    if before < 0 or first >= len(cycles):
        return None
    after = cycles[first:first + n_a]
    return ActivationWindow(cycles[before].i, np.stack([c.i for c in after]))
