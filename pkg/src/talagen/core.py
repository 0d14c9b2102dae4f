"""Domain types for tabla rhythm cycles.

A tala is a fixed cycle of beats, each beat holding one or more strokes
(or an explicit rest), grouped into vibhag sections.  This module holds
the value types shared by the transcription, identification, sequencing
and rendering layers, the five built-in tala definitions, and the JSON
definition-file format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

__all__ = [
    "StrokeLabel",
    "REST",
    "CATEGORIES",
    "Beat",
    "BeatCycle",
    "TalaDefinition",
    "Transcription",
    "TalaFormatError",
    "builtin_talas",
    "builtin_tala",
    "flatten",
    "validate_tala",
    "load_tala",
    "save_tala",
    "load_tala_file",
    "save_tala_file",
]

# Stroke timbre families (damped vs. the three resonant kinds).
CATEGORIES = ("damped", "resonant-treble", "resonant-bass", "resonant-both")

REST_NAME = "-"


@dataclass(frozen=True)
class StrokeLabel:
    """A named tabla stroke. Equality and hashing use the name only."""

    name: str
    category: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("stroke name must be non-empty")
        if self.category is not None and self.category not in CATEGORIES:
            raise ValueError(f"unknown stroke category: {self.category!r}")

    @property
    def is_rest(self) -> bool:
        return self.name == REST_NAME

    def __str__(self) -> str:
        return self.name


#: Distinguished label for a beat position carrying no stroke.
REST = StrokeLabel(REST_NAME)


@dataclass(frozen=True)
class Beat:
    """One beat: an ordered, non-empty tuple of strokes. A silent beat is (REST,)."""

    events: tuple[StrokeLabel, ...]

    def __post_init__(self) -> None:
        if len(self.events) < 1:
            raise ValueError("a beat must contain at least one event (use REST)")

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def of(cls, *names: str) -> "Beat":
        return cls(tuple(REST if n == REST_NAME else StrokeLabel(n) for n in names))


@dataclass(frozen=True)
class BeatCycle:
    """A cycle of beats partitioned into vibhag sections."""

    beats: tuple[Beat, ...]
    vibhags: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.beats) < 1:
            raise ValueError("a cycle needs at least one beat")
        if any(v <= 0 for v in self.vibhags):
            raise ValueError("vibhag sizes must be positive")
        if sum(self.vibhags) != len(self.beats):
            raise ValueError(
                f"vibhag sum {sum(self.vibhags)} != beat count {len(self.beats)}"
            )

    def __len__(self) -> int:
        return len(self.beats)


def flatten(cycle: BeatCycle, keep_rests: bool = False) -> list[StrokeLabel]:
    """Concatenate all beat event lists in order, dropping rests unless kept."""
    out: list[StrokeLabel] = []
    for beat in cycle.beats:
        for ev in beat.events:
            if keep_rests or not ev.is_rest:
                out.append(ev)
    return out


@dataclass(frozen=True)
class TalaDefinition:
    """A named tala: its theka cycle, stroke vocabulary and stroke-ratio vector.

    ``ratio`` is proportional to the per-stroke counts in the flattened
    theka (the conventional reduced form, e.g. [3,3,1,1] for a 16-beat
    cycle whose counts are [6,6,2,2]).
    """

    name: str
    theka: BeatCycle
    vocabulary: tuple[StrokeLabel, ...]
    ratio: tuple[int, ...]

    @cached_property
    def x_ref(self) -> tuple[StrokeLabel, ...]:
        """Flattened non-rest reference stroke sequence."""
        return tuple(flatten(self.theka, keep_rests=False))

    @property
    def m(self) -> int:
        return len(self.x_ref)

    @property
    def d(self) -> int:
        return len(self.vocabulary)


def _stroke_counts(tala: TalaDefinition) -> list[int]:
    seq = tala.x_ref
    return [sum(1 for s in seq if s == v) for v in tala.vocabulary]


def _reduced(vec: list[int] | tuple[int, ...]) -> list[int]:
    g = math.gcd(*vec) if any(vec) else 1
    return [v // g for v in vec]


def validate_tala(tala: TalaDefinition) -> list[str]:
    """Check every definition invariant; returns violation messages (empty = ok)."""
    violations: list[str] = []
    if tala.m < 1:
        violations.append("theka has no strokes")
        return violations
    if any(v.is_rest for v in tala.vocabulary):
        violations.append("vocabulary must not contain the rest symbol")
    vocab = set(tala.vocabulary)
    for stroke in tala.x_ref:
        if stroke not in vocab:
            violations.append(f"theka stroke {stroke} missing from vocabulary")
            break
    if len(tala.ratio) != tala.d:
        violations.append(
            f"ratio length {len(tala.ratio)} != vocabulary size {tala.d}"
        )
        return violations
    if any(r < 0 for r in tala.ratio):
        violations.append("ratio entries must be non-negative")
        return violations
    counts = _stroke_counts(tala)
    if _reduced(counts) != _reduced(tala.ratio):
        red_c, red_r = _reduced(counts), _reduced(tala.ratio)
        for v, (c, r) in enumerate(zip(red_c, red_r)):
            if c != r:
                violations.append(f"ratio mismatch for {tala.vocabulary[v]}")
    return violations


class TalaFormatError(ValueError):
    """Raised for malformed tala definition documents."""

    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        loc = []
        if field is not None:
            loc.append(f"field {field!r}")
        if line is not None:
            loc.append(f"line {line}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.field = field
        self.line = line


def _require(doc: dict, key: str, kind: type) -> object:
    if key not in doc:
        raise TalaFormatError("missing required field", field=key)
    value = doc[key]
    if not isinstance(value, kind):
        raise TalaFormatError(f"expected {kind.__name__}", field=key)
    return value


def load_tala(text: str) -> TalaDefinition:
    """Parse a JSON tala definition. Unknown extra fields are ignored."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TalaFormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise TalaFormatError("definition document must be a JSON object")

    name = _require(doc, "name", str)
    beats_doc = _require(doc, "beats", list)
    vibhags_doc = _require(doc, "vibhags", list)
    vocab_doc = _require(doc, "vocabulary", list)
    ratio_doc = _require(doc, "ratio", list)

    beats = []
    for i, entry in enumerate(beats_doc):
        if not isinstance(entry, list) or not all(isinstance(s, str) for s in entry):
            raise TalaFormatError(f"beat {i} must be a list of stroke names", field="beats")
        if not entry:
            raise TalaFormatError(f"beat {i} is empty (use \"-\" for a rest)", field="beats")
        beats.append(Beat.of(*entry))
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in vibhags_doc):
        raise TalaFormatError("vibhags must be integers", field="vibhags")
    if not all(isinstance(s, str) and s and s != REST_NAME for s in vocab_doc):
        raise TalaFormatError("vocabulary entries must be non-rest stroke names", field="vocabulary")
    if not all(isinstance(r, int) and not isinstance(r, bool) and r >= 0 for r in ratio_doc):
        raise TalaFormatError("ratio entries must be non-negative integers", field="ratio")

    try:
        theka = BeatCycle(tuple(beats), tuple(vibhags_doc))
    except ValueError as exc:
        raise TalaFormatError(str(exc), field="vibhags") from exc

    tala = TalaDefinition(
        name=name,
        theka=theka,
        vocabulary=tuple(StrokeLabel(s) for s in vocab_doc),
        ratio=tuple(ratio_doc),
    )
    violations = validate_tala(tala)
    if violations:
        raise TalaFormatError("; ".join(violations))
    return tala


def save_tala(tala: TalaDefinition) -> str:
    """Serialize a definition to its canonical JSON document."""
    doc = {
        "name": tala.name,
        "beats": [[ev.name for ev in beat.events] for beat in tala.theka.beats],
        "vibhags": list(tala.theka.vibhags),
        "vocabulary": [v.name for v in tala.vocabulary],
        "ratio": list(tala.ratio),
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def load_tala_file(path) -> TalaDefinition:
    with open(path, "r", encoding="utf-8") as fh:
        return load_tala(fh.read())


def save_tala_file(tala: TalaDefinition, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(save_tala(tala))


BUILTIN_NAMES = ("tintal", "ektal", "jhaptal", "rupak", "deepchandi")


def builtin_talas() -> list[TalaDefinition]:
    """The five shipped tala definitions, loaded from the packaged files."""
    out = []
    for name in BUILTIN_NAMES:
        text = resources.files("talagen.data.talas").joinpath(f"{name}.json").read_text("utf-8")
        out.append(load_tala(text))
    return out


def builtin_tala(name: str) -> TalaDefinition:
    """Look up a built-in tala by name (case-insensitive)."""
    wanted = name.strip().lower()
    for tala in builtin_talas():
        if tala.name.lower() == wanted:
            return tala
    raise KeyError(f"unknown tala {name!r}; built-ins: {', '.join(BUILTIN_NAMES)}")


@dataclass(frozen=True)
class Transcription:
    """Time-ordered stroke events: (onset seconds, label) pairs, no rests."""

    events: tuple[tuple[float, StrokeLabel], ...]

    def __post_init__(self) -> None:
        last = -math.inf
        for t, label in self.events:
            if t < 0:
                raise ValueError(f"negative onset time {t}")
            if t < last:
                raise ValueError(f"onset times must be non-decreasing (at {t})")
            if label.is_rest:
                raise ValueError("transcriptions must not contain rest events")
            last = t

    def __len__(self) -> int:
        return len(self.events)

    @property
    def labels(self) -> list[StrokeLabel]:
        return [label for _, label in self.events]

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.events]

    @classmethod
    def from_labels(
        cls, labels, spacing: float = 0.25, start: float = 0.0
    ) -> "Transcription":
        """Build a transcription with evenly spaced onsets."""
        return cls(tuple((start + i * spacing, lab) for i, lab in enumerate(labels)))
