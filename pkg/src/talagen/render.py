"""Stroke-to-audio rendering.

Every stroke of beat i, position j inside a beat of size B, lands at
sample

    n_k = n_0 + floor((i + j/B) * 60 * F_s / BPM)

and the output is the superposition of the bank waveforms shifted to
those onsets.  The grid arithmetic uses exact rationals so the floor
never wobbles with the tempo.  Two render paths share it: an offline
one that fills a whole buffer, and a streaming one that emits fixed
blocks and applies tempo changes at the next beat boundary, rebasing
n_0 there so the grid stays exact under the new tempo.  The two paths
accumulate in the same order, so their output is bit-identical.
"""

from __future__ import annotations

import json
import queue
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.io import wavfile

from .core import REST, StrokeLabel, TalaDefinition
from .fst import DEFAULT_FILLER_BEAT, StrokeEvent, call_cycle_fst, emit_stream
from .tempo import BPM_MAX, BPM_MIN

__all__ = [
    "SAMPLE_RATES",
    "PULSE_LABEL",
    "PULSE_FILL_BPM",
    "RenderState",
    "ScheduledStroke",
    "StrokeSampleBank",
    "onset_sample_index",
    "render",
    "schedule_events",
    "tala_events",
    "with_pulse_fill",
    "render_tala",
    "render_tala_to_wav",
    "render_with_tempo_map",
    "write_wav",
    "BlockStatus",
    "StreamingRenderer",
    "RenderResult",
]

SAMPLE_RATES = (44100, 48000)

#: Low-tempo subdivision tick: label, activation threshold, and gain.
PULSE_LABEL = StrokeLabel("_pulse")
PULSE_FILL_BPM = 40.0
PULSE_GAIN = 0.25


@dataclass(frozen=True)
class RenderState:
    """Grid origin and tempo for onset scheduling."""

    n0: int = 0
    bpm: float = 60.0
    sample_rate: int = 44100

    def __post_init__(self) -> None:
        if self.n0 < 0:
            raise ValueError("n0 must be non-negative")
        if not BPM_MIN <= self.bpm <= BPM_MAX:
            raise ValueError(f"bpm {self.bpm} outside [{BPM_MIN:g}, {BPM_MAX:g}]")
        if self.sample_rate not in SAMPLE_RATES:
            raise ValueError(f"sample rate {self.sample_rate} not in {SAMPLE_RATES}")


def onset_sample_index(state: RenderState, i: int, j: int, beat_size: int) -> int:
    """Exact onset sample for beat i, stroke j of a beat_size-stroke beat."""
    if beat_size < 1:
        raise ValueError("beat_size must be >= 1")
    if not 0 <= j < beat_size:
        raise ValueError(f"j={j} outside beat of size {beat_size}")
    if i < 0:
        raise ValueError("beat index must be non-negative")
    position = Fraction(i * beat_size + j, beat_size)
    samples = position * 60 * state.sample_rate / Fraction(state.bpm)
    return state.n0 + int(samples)  # Fraction.__int__ truncates = floor for >= 0


@dataclass(frozen=True)
class ScheduledStroke:
    sample_index: int
    label: StrokeLabel

    def __post_init__(self) -> None:
        if self.sample_index < 0:
            raise ValueError("sample index must be non-negative")


def _decay_tone(freq: float, sample_rate: int, duration: float, peak: float) -> np.ndarray:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    tone = np.sin(2 * np.pi * freq * t) + 0.35 * np.sin(2 * np.pi * 2.01 * freq * t)
    wave = peak * tone / np.max(np.abs(tone)) * np.exp(-t / 0.06)
    return wave.astype(np.float64)


@dataclass(frozen=True)
class StrokeSampleBank:
    """Per-stroke waveforms sharing one sample rate; rests map to silence."""

    sample_rate: int
    waves: dict[StrokeLabel, np.ndarray]

    def __post_init__(self) -> None:
        if self.sample_rate not in SAMPLE_RATES:
            raise ValueError(f"sample rate {self.sample_rate} not in {SAMPLE_RATES}")
        for label, wave in self.waves.items():
            if wave.size and float(np.max(np.abs(wave))) > 1.0:
                raise ValueError(f"waveform for {label} exceeds peak 1.0")

    def get(self, label: StrokeLabel) -> np.ndarray:
        if label.is_rest:
            return np.zeros(0)
        try:
            return self.waves[label]
        except KeyError:
            raise KeyError(f"sample bank has no waveform for stroke {label}") from None

    def labels(self) -> list[StrokeLabel]:
        return sorted(self.waves, key=lambda s: s.name)

    @classmethod
    def synthetic(
        cls,
        labels: Iterable[StrokeLabel],
        sample_rate: int = 44100,
        duration: float = 0.25,
    ) -> "StrokeSampleBank":
        """Deterministic fallback bank: one decaying two-partial tone per
        label, frequencies spread geometrically in name order so every
        stroke is spectrally distinct.
        """
        names = sorted({lab.name for lab in labels if lab.name != REST.name})
        waves: dict[StrokeLabel, np.ndarray] = {}
        for k, name in enumerate(names):
            freq = 170.0 * (1.31 ** k)
            waves[StrokeLabel(name)] = _decay_tone(freq, sample_rate, duration, 0.9)
        tick = _decay_tone(2200.0, sample_rate, 0.03, PULSE_GAIN)
        waves[PULSE_LABEL] = tick
        return cls(sample_rate, waves)

    @classmethod
    def for_tala(cls, tala: TalaDefinition, sample_rate: int = 44100) -> "StrokeSampleBank":
        labels = list(tala.vocabulary) + list(DEFAULT_FILLER_BEAT.events)
        return cls.synthetic(labels, sample_rate)

    @classmethod
    def from_directory(cls, path: str | Path, sample_rate: int | None = None) -> "StrokeSampleBank":
        """Load `<label>.wav` files, optionally renamed via manifest.json.

        All files must share one sample rate (no resampling here).
        """
        root = Path(path)
        if not root.is_dir():
            raise FileNotFoundError(f"sample bank directory not found: {root}")
        mapping: dict[str, str] = {}
        manifest = root / "manifest.json"
        if manifest.exists():
            doc = json.loads(manifest.read_text("utf-8"))
            if not isinstance(doc, dict):
                raise ValueError("manifest.json must map stroke labels to file names")
            mapping = {str(k): str(v) for k, v in doc.items()}
        files = {p.stem: p for p in sorted(root.glob("*.wav"))}
        for label, fname in mapping.items():
            files[label] = root / fname
        if not files:
            raise ValueError(f"no WAV files in sample bank directory {root}")
        waves: dict[StrokeLabel, np.ndarray] = {}
        rate = sample_rate
        for label, p in files.items():
            fs, data = wavfile.read(p)
            if rate is None:
                rate = int(fs)
            elif int(fs) != rate:
                raise ValueError(f"{p.name}: sample rate {fs} != bank rate {rate}")
            if data.ndim > 1:
                data = data.mean(axis=1)
            if np.issubdtype(data.dtype, np.integer):
                data = data / float(np.iinfo(data.dtype).max)
            wave = np.clip(data.astype(np.float64), -1.0, 1.0)
            waves[StrokeLabel(label)] = wave
        if PULSE_LABEL not in waves:
            waves[PULSE_LABEL] = _decay_tone(2200.0, rate, 0.03, PULSE_GAIN)
        return cls(rate, waves)


def render(
    schedule: Iterable[ScheduledStroke],
    bank: StrokeSampleBank,
    length_samples: int,
) -> np.ndarray:
    """Superpose bank waveforms at their scheduled onsets.

    Strokes are accumulated in schedule order; anything past the buffer
    end is truncated.
    """
    if length_samples < 0:
        raise ValueError("length must be non-negative")
    out = np.zeros(length_samples, dtype=np.float64)
    last = -1
    for stroke in schedule:
        if stroke.sample_index < last:
            raise ValueError("schedule must be sorted by sample index")
        last = stroke.sample_index
        wave = bank.get(stroke.label)
        if stroke.sample_index >= length_samples or wave.size == 0:
            continue
        span = min(wave.size, length_samples - stroke.sample_index)
        out[stroke.sample_index : stroke.sample_index + span] += wave[:span]
    return out


def schedule_events(
    events: Iterable[StrokeEvent],
    state: RenderState,
    length_samples: int | None = None,
) -> list[ScheduledStroke]:
    """Schedule a finite or bounded event stream on a fixed-tempo grid."""
    out: list[ScheduledStroke] = []
    for ev in events:
        n = onset_sample_index(state, ev.beat_index, ev.within_beat_index, ev.beat_size)
        if length_samples is not None and n >= length_samples:
            break
        out.append(ScheduledStroke(n, ev.label))
    return out


def tala_events(
    tala: TalaDefinition,
    filler: bool = False,
    cycles: int = 4,
    seed: int = 0,
) -> Iterator[StrokeEvent]:
    """Endless stroke events for a tala, with or without call-cycle fillers."""
    machine = call_cycle_fst(tala, cycles=cycles, filler=filler)
    return emit_stream(machine, seed=seed)


def with_pulse_fill(events: Iterable[StrokeEvent]) -> Iterator[StrokeEvent]:
    """Insert a subdivision tick halfway through every beat.

    The tick is a pseudo-stroke at coordinates (i, 1, 2); strokes at or
    before the half-beat point come first so the stream stays onset
    sorted.  Renderers mute the tick unless the tempo is low.
    """
    pending: list[StrokeEvent] = []

    def flush(beat: list[StrokeEvent]) -> Iterator[StrokeEvent]:
        i = beat[0].beat_index
        tick = StrokeEvent(i, 1, 2, PULSE_LABEL, False)
        emitted_tick = False
        for ev in beat:
            if not emitted_tick and Fraction(ev.within_beat_index, ev.beat_size) > Fraction(1, 2):
                yield tick
                emitted_tick = True
            yield ev
        if not emitted_tick:
            yield tick

    for ev in events:
        if pending and ev.beat_index != pending[0].beat_index:
            yield from flush(pending)
            pending = []
        pending.append(ev)
    if pending:
        yield from flush(pending)


def render_tala(
    tala: TalaDefinition,
    bpm: float,
    duration_sec: float,
    bank: StrokeSampleBank,
    filler: bool = False,
    pulse_fill: bool = False,
    seed: int = 0,
) -> tuple[np.ndarray, list[ScheduledStroke]]:
    """Offline waveform of a tala at fixed tempo, plus its stroke schedule."""
    if duration_sec <= 0:
        raise ValueError("duration must be positive")
    state = RenderState(0, bpm, bank.sample_rate)
    length = int(round(duration_sec * bank.sample_rate))
    events: Iterable[StrokeEvent] = tala_events(tala, filler=filler, seed=seed)
    if pulse_fill and bpm < PULSE_FILL_BPM:
        events = with_pulse_fill(events)
    schedule = schedule_events(events, state, length)
    return render(schedule, bank, length), schedule


@dataclass(frozen=True)
class RenderResult:
    path: Path
    sample_rate: int
    length_samples: int
    clipped: int
    schedule: tuple[ScheduledStroke, ...]


def write_wav(
    path: str | Path,
    wave: np.ndarray,
    sample_rate: int,
    encoding: str = "float32",
) -> int:
    """Write mono audio, hard-clamping into [-1, 1]; returns clip count."""
    clipped = int(np.count_nonzero((wave > 1.0) | (wave < -1.0)))
    safe = np.clip(wave, -1.0, 1.0)
    if encoding == "float32":
        data = safe.astype(np.float32)
    elif encoding == "pcm16":
        data = (safe * 32767.0).astype(np.int16)
    else:
        raise ValueError(f"unknown encoding {encoding!r} (use float32 or pcm16)")
    wavfile.write(str(path), sample_rate, data)
    return clipped


def render_tala_to_wav(
    tala: TalaDefinition,
    bpm: float,
    duration_sec: float,
    bank: StrokeSampleBank,
    out_path: str | Path,
    filler: bool = False,
    pulse_fill: bool = False,
    seed: int = 0,
    encoding: str = "float32",
) -> RenderResult:
    wave, schedule = render_tala(
        tala, bpm, duration_sec, bank, filler=filler, pulse_fill=pulse_fill, seed=seed
    )
    clipped = write_wav(out_path, wave, bank.sample_rate, encoding)
    return RenderResult(
        path=Path(out_path),
        sample_rate=bank.sample_rate,
        length_samples=wave.size,
        clipped=clipped,
        schedule=tuple(schedule),
    )


def render_with_tempo_map(
    events: Iterable[StrokeEvent],
    bank: StrokeSampleBank,
    state: RenderState,
    tempo_changes: Iterable[tuple[int, float]],
    length_samples: int,
    pulse_fill: bool = False,
) -> tuple[np.ndarray, list[ScheduledStroke]]:
    """Offline render with tempo switches at given beat boundaries.

    Each (beat_index, bpm) pair takes effect exactly at that beat's
    first stroke; the grid origin is rebased to that boundary's sample
    under the outgoing tempo, which is the streaming renderer's rule.
    Serves as the byte-exact oracle for the streaming path.
    """
    changes = sorted(tempo_changes)
    if pulse_fill:
        events = with_pulse_fill(events)
    schedule: list[ScheduledStroke] = []
    base_beat = 0
    ci = 0
    for ev in events:
        is_boundary = ev.within_beat_index == 0 and ev.label != PULSE_LABEL
        while is_boundary and ci < len(changes) and ev.beat_index >= changes[ci][0]:
            boundary = onset_sample_index(state, ev.beat_index - base_beat, 0, 1)
            state = RenderState(boundary, changes[ci][1], state.sample_rate)
            base_beat = ev.beat_index
            ci += 1
        n = onset_sample_index(
            state, ev.beat_index - base_beat, ev.within_beat_index, ev.beat_size
        )
        if n >= length_samples:
            break
        if ev.label == PULSE_LABEL and state.bpm >= PULSE_FILL_BPM:
            continue
        schedule.append(ScheduledStroke(n, ev.label))
    return render(schedule, bank, length_samples), schedule


@dataclass(frozen=True)
class BlockStatus:
    """What happened inside one rendered block."""

    beats: tuple[tuple[int, bool], ...]  # (global beat index, is_sam)
    bpm: float
    cursor: int  # first sample index after this block


class StreamingRenderer:
    """Block renderer with beat-boundary tempo changes.

    Control (tempo, stop) arrives on a queue drained at block starts.
    A pending tempo takes effect at the next beat's first stroke; the
    grid origin n0 is rebased to that boundary, computed under the old
    tempo.  After a stop no new strokes start and blocks keep flowing
    until every active waveform has decayed, so the stream ends at a
    block boundary with no truncation click.
    """

    def __init__(
        self,
        events: Iterable[StrokeEvent],
        bank: StrokeSampleBank,
        state: RenderState,
        block_size: int = 1024,
        pulse_fill: bool = False,
    ):
        if block_size < 64:
            raise ValueError("block size must be at least 64 samples")
        self._events = iter(with_pulse_fill(events) if pulse_fill else events)
        self._bank = bank
        self._state = state
        self._base_beat = 0
        self._block = block_size
        self._pulse_fill = pulse_fill
        self._controls: queue.SimpleQueue = queue.SimpleQueue()
        self._pending_bpm: float | None = None
        self._stopping = False
        self._exhausted = False
        self._lookahead: StrokeEvent | None = None
        self._active: list[tuple[int, np.ndarray]] = []
        self._cursor = 0

    # -- control (any thread) -------------------------------------------
    def set_bpm(self, bpm: float) -> None:
        if not BPM_MIN <= bpm <= BPM_MAX:
            raise ValueError(f"bpm {bpm} outside [{BPM_MIN:g}, {BPM_MAX:g}]")
        self._controls.put(("bpm", float(bpm)))

    def stop(self) -> None:
        self._controls.put(("stop", None))

    @property
    def bpm(self) -> float:
        return self._state.bpm

    # -- rendering (single consumer) -------------------------------------
    def _drain_controls(self) -> None:
        while True:
            try:
                kind, value = self._controls.get_nowait()
            except queue.Empty:
                return
            if kind == "bpm":
                self._pending_bpm = value
            elif kind == "stop":
                self._stopping = True

    def _next_event(self) -> StrokeEvent | None:
        if self._lookahead is None and not self._exhausted:
            self._lookahead = next(self._events, None)
            if self._lookahead is None:
                self._exhausted = True
        return self._lookahead

    def _onset(self, ev: StrokeEvent) -> int:
        return onset_sample_index(
            self._state, ev.beat_index - self._base_beat, ev.within_beat_index, ev.beat_size
        )

    def _consume_into(self, block_end: int, beats: list[tuple[int, bool]]) -> None:
        while True:
            ev = self._next_event()
            if ev is None:
                return
            if (
                ev.within_beat_index == 0
                and ev.label != PULSE_LABEL
                and self._pending_bpm is not None
            ):
                boundary = self._onset(ev)
                self._state = RenderState(
                    boundary, self._pending_bpm, self._state.sample_rate
                )
                self._base_beat = ev.beat_index
                self._pending_bpm = None
            n = self._onset(ev)
            if n >= block_end:
                return
            self._lookahead = None
            if ev.label == PULSE_LABEL and self._state.bpm >= PULSE_FILL_BPM:
                continue
            wave = self._bank.get(ev.label)
            if wave.size:
                self._active.append((n, wave))
            if ev.within_beat_index == 0 and ev.label != PULSE_LABEL:
                beats.append((ev.beat_index, ev.is_sam))

    def blocks(self) -> Iterator[tuple[np.ndarray, BlockStatus]]:
        """Yield (audio block, status) pairs until stopped and decayed."""
        while True:
            self._drain_controls()
            block_start = self._cursor
            block_end = block_start + self._block
            beats: list[tuple[int, bool]] = []
            if not self._stopping:
                self._consume_into(block_end, beats)
                if self._exhausted and not self._active and not beats:
                    return
            elif not self._active:
                return
            out = np.zeros(self._block, dtype=np.float64)
            still_active: list[tuple[int, np.ndarray]] = []
            for n, wave in self._active:
                lo = max(n, block_start)
                hi = min(n + wave.size, block_end)
                if hi > lo:
                    out[lo - block_start : hi - block_start] += wave[lo - n : hi - n]
                if n + wave.size > block_end:
                    still_active.append((n, wave))
            self._active = still_active
            self._cursor = block_end
            yield out, BlockStatus(tuple(beats), self._state.bpm, self._cursor)
