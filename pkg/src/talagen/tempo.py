"""Tap-tempo estimation and tempo state.

Tempo comes from one of four places: the 60 BPM default, typed text,
nudge buttons, or tapping.  A tap history needs at least three taps
before it yields a tempo; the estimate divides 60 by the delay between
the last two taps and clamps into the supported range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "BPM_MIN",
    "BPM_MAX",
    "DEFAULT_BPM",
    "MIN_TAPS",
    "clamp_bpm",
    "TapHistory",
    "register_tap",
    "estimate_bpm",
    "TempoState",
    "apply_adjustment",
    "ADJUSTMENT_ACTIONS",
]

BPM_MIN = 10.0
BPM_MAX = 350.0
DEFAULT_BPM = 60.0
MIN_TAPS = 3

TEMPO_SOURCES = ("default", "text", "buttons", "tap")

ADJUSTMENT_ACTIONS = ("+1", "-1", "+5", "-5", "double", "half", "set")


def clamp_bpm(x: float) -> float:
    return min(max(x, BPM_MIN), BPM_MAX)


@dataclass(frozen=True)
class TapHistory:
    """Strictly increasing tap timestamps, most recent last, bounded length."""

    timestamps: tuple[float, ...] = ()
    capacity: int = 16

    def __post_init__(self) -> None:
        if self.capacity < 2:
            raise ValueError("capacity must be at least 2")
        if len(self.timestamps) > self.capacity:
            raise ValueError("history longer than capacity")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b <= a:
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)


def register_tap(history: TapHistory, t: float) -> TapHistory:
    """Append a tap; a tap not after the last one is dropped unchanged.

    The oldest tap is evicted once the history is full.
    """
    if not math.isfinite(t):
        return history
    if history.timestamps and t <= history.timestamps[-1]:
        return history
    stamps = history.timestamps + (t,)
    if len(stamps) > history.capacity:
        stamps = stamps[-history.capacity:]
    return TapHistory(stamps, history.capacity)


def estimate_bpm(history: TapHistory, average: bool = False) -> float | None:
    """Tempo from a tap history, or None while fewer than three taps exist.

    Only the final inter-tap delay counts; ``average=True`` switches to
    the mean delay over the whole history instead.  Always clamped to
    [10, 350].
    """
    stamps = history.timestamps
    if len(stamps) < MIN_TAPS:
        return None
    if average:
        delay = (stamps[-1] - stamps[0]) / (len(stamps) - 1)
    else:
        delay = stamps[-1] - stamps[-2]
    return clamp_bpm(60.0 / delay)


@dataclass(frozen=True)
class TempoState:
    bpm: float = DEFAULT_BPM
    source: str = "default"

    def __post_init__(self) -> None:
        if not BPM_MIN <= self.bpm <= BPM_MAX:
            raise ValueError(f"bpm {self.bpm} outside [{BPM_MIN:g}, {BPM_MAX:g}]")
        if self.source not in TEMPO_SOURCES:
            raise ValueError(f"unknown tempo source {self.source!r}")


def apply_adjustment(state: TempoState, action: str, value: float | None = None) -> TempoState:
    """Apply a button action or a typed value, clamped into range.

    Actions: "+1", "-1", "+5", "-5", "double", "half", and "set" (which
    requires a finite ``value``).
    """
    if action == "set":
        if value is None or not math.isfinite(value):
            raise ValueError("set requires a finite bpm value")
        return TempoState(clamp_bpm(float(value)), "text")
    if action in ("+1", "-1", "+5", "-5"):
        return TempoState(clamp_bpm(state.bpm + int(action)), "buttons")
    if action == "double":
        return TempoState(clamp_bpm(state.bpm * 2.0), "buttons")
    if action == "half":
        return TempoState(clamp_bpm(state.bpm / 2.0), "buttons")
    raise ValueError(f"unknown adjustment {action!r}")
