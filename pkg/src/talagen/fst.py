"""Weighted finite-state transducers for beat sequencing.

A tala cycle becomes a single-path transducer whose arcs emit one beat
each.  Concatenation chains cycles, closure makes the chain repeat
forever, and composition with a filler transducer swaps designated
beats (the classic use: replace the last beat of a four-cycle call
round with a flourish so the downbeat lands cleanly).  ``emit_stream``
walks a machine with a seeded generator and yields stroke events ready
for scheduling.
"""

from __future__ import annotations

import json
import random
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

from .core import Beat, BeatCycle, StrokeLabel, TalaDefinition

__all__ = [
    "Transition",
    "WFST",
    "StrokeEvent",
    "CompositionError",
    "validate_wfst",
    "beat_cycle_fst",
    "filler_fst",
    "concat",
    "closure",
    "compose",
    "call_cycle_fst",
    "DEFAULT_FILLER_BEAT",
    "emit_stream",
    "load_machine",
    "save_machine",
]

PROB_TOL = 1e-9

#: Editorial default: a one-beat four-stroke flourish.
DEFAULT_FILLER_BEAT = Beat.of("Ti", "Ra", "Ki", "Ta")


@dataclass(frozen=True)
class Transition:
    """One arc: (source, input beat or None, output beat or None, probability, dest)."""

    src: int
    inp: Beat | None
    out: Beat | None
    prob: float
    dst: int

    def __post_init__(self) -> None:
        if not 0.0 < self.prob <= 1.0:
            raise ValueError(f"transition probability {self.prob} outside (0, 1]")


@dataclass(frozen=True)
class WFST:
    """Immutable weighted transducer.

    ``beats_per_cycle`` is bookkeeping for downbeat flags on emitted
    streams: the underlying tala cycle length, carried through the
    combinators when both operands agree.
    """

    states: tuple[int, ...]
    transitions: tuple[Transition, ...]
    initial: int
    finals: frozenset[int]
    beats_per_cycle: int | None = None

    def outgoing(self) -> dict[int, list[Transition]]:
        table: dict[int, list[Transition]] = defaultdict(list)
        for t in self.transitions:
            table[t.src].append(t)
        return dict(table)


def validate_wfst(machine: WFST) -> list[str]:
    """Structural checks; returns violation messages (empty = valid)."""
    problems: list[str] = []
    states = set(machine.states)
    if machine.initial not in states:
        problems.append("initial state missing from state set")
    if not machine.finals <= states:
        problems.append("final state missing from state set")
    for t in machine.transitions:
        if t.src not in states or t.dst not in states:
            problems.append(f"transition {t.src}->{t.dst} references unknown state")
            break
    sums: dict[int, float] = defaultdict(float)
    for t in machine.transitions:
        sums[t.src] += t.prob
    for src, total in sums.items():
        if abs(total - 1.0) > PROB_TOL:
            problems.append(f"outgoing probabilities from state {src} sum to {total}")
    # Reachability of some final from the initial state.
    seen = {machine.initial}
    frontier = deque([machine.initial])
    out = machine.outgoing()
    while frontier:
        s = frontier.popleft()
        for t in out.get(s, ()):
            if t.dst not in seen:
                seen.add(t.dst)
                frontier.append(t.dst)
    if not seen & machine.finals:
        problems.append("no final state reachable from the initial state")
    return problems


def beat_cycle_fst(cycle: BeatCycle) -> WFST:
    """Single-path transducer emitting the cycle's beats once.

    N beats yield N+1 states and N arcs, each with probability 1; the
    extra last state is the sole final.
    """
    n = len(cycle)
    transitions = tuple(
        Transition(i, None, cycle.beats[i], 1.0, i + 1) for i in range(n)
    )
    return WFST(
        states=tuple(range(n + 1)),
        transitions=transitions,
        initial=0,
        finals=frozenset({n}),
        beats_per_cycle=n,
    )


def filler_fst(
    cycle: BeatCycle,
    filler_beat: Beat | None = None,
    replace_at: int | None = None,
) -> WFST:
    """Single-path transducer mapping the cycle to itself, optionally
    replacing the beat at ``replace_at`` (default: the last beat) with
    ``filler_beat``.  With ``filler_beat=None`` it is a pure identity.
    """
    n = len(cycle)
    if replace_at is None:
        replace_at = n - 1
    if not 0 <= replace_at < n:
        raise ValueError(f"replace_at {replace_at} outside cycle of {n} beats")
    transitions = []
    for i in range(n):
        out = cycle.beats[i]
        if filler_beat is not None and i == replace_at:
            out = filler_beat
        transitions.append(Transition(i, cycle.beats[i], out, 1.0, i + 1))
    return WFST(
        states=tuple(range(n + 1)),
        transitions=tuple(transitions),
        initial=0,
        finals=frozenset({n}),
        beats_per_cycle=n,
    )


def _relabeled(machine: WFST, offset: int) -> WFST:
    return WFST(
        states=tuple(s + offset for s in machine.states),
        transitions=tuple(
            replace(t, src=t.src + offset, dst=t.dst + offset)
            for t in machine.transitions
        ),
        initial=machine.initial + offset,
        finals=frozenset(s + offset for s in machine.finals),
        beats_per_cycle=machine.beats_per_cycle,
    )


def _carried_cycle(a: WFST, b: WFST) -> int | None:
    if a.beats_per_cycle == b.beats_per_cycle:
        return a.beats_per_cycle
    return None


def concat(a: WFST, b: WFST) -> WFST:
    """Chain two machines: a's finals are merged with b's initial state.

    a's finals must have no outgoing arcs (true for all chain-shaped
    machines built here); each inherits b's initial arcs instead.
    """
    out_a = a.outgoing()
    if any(out_a.get(f) for f in a.finals):
        raise ValueError("concat requires a's final states to have no outgoing arcs")
    offset = max(a.states) + 1 if a.states else 0
    b2 = _relabeled(b, offset)
    b_states = tuple(s for s in b2.states if s != b2.initial)
    glue: list[Transition] = []
    for t in b2.transitions:
        if t.dst == b2.initial and len(a.finals) > 1:
            raise ValueError("concat cannot merge a multi-final machine into a loop")
        src_states = a.finals if t.src == b2.initial else (t.src,)
        dst = next(iter(a.finals)) if t.dst == b2.initial else t.dst
        for src in src_states:
            glue.append(replace(t, src=src, dst=dst))
    finals = frozenset(b2.finals - {b2.initial})
    if b2.initial in b2.finals:
        finals |= a.finals
    return WFST(
        states=tuple(a.states) + b_states,
        transitions=tuple(a.transitions) + tuple(glue),
        initial=a.initial,
        finals=finals,
        beats_per_cycle=_carried_cycle(a, b),
    )


def closure(machine: WFST) -> WFST:
    """Loop every final state back to the initial state with a silent arc.

    The resulting machine never halts: emission repeats the original
    language indefinitely.
    """
    out = machine.outgoing()
    if any(out.get(f) for f in machine.finals):
        raise ValueError("closure requires final states without outgoing arcs")
    loops = tuple(
        Transition(f, None, None, 1.0, machine.initial) for f in machine.finals
    )
    return replace(machine, transitions=machine.transitions + loops)


class CompositionError(ValueError):
    """No path survives composition; names the first unmatched output beat."""

    def __init__(self, beat: Beat | None):
        self.unmatched = beat
        if beat is None:
            super().__init__("composition is empty")
        else:
            strokes = " ".join(ev.name for ev in beat.events)
            super().__init__(f"composition is empty: no filler arc accepts beat [{strokes}]")


def compose(a: WFST, f: WFST) -> WFST:
    """Relational composition: a's outputs feed f's inputs.

    Pairs of arcs with matching beat symbols combine with probability
    product; silent arcs on either side advance that side alone.  The
    result is trimmed to states that can reach a final pair.
    """
    out_a = a.outgoing()
    out_f = f.outgoing()

    pair_ids: dict[tuple[int, int], int] = {}
    transitions: list[Transition] = []
    first_unmatched: Beat | None = None

    def pid(pair: tuple[int, int]) -> int:
        return pair_ids.setdefault(pair, len(pair_ids))

    start = (a.initial, f.initial)
    pid(start)
    frontier = deque([start])
    visited = {start}
    while frontier:
        qa, qf = frontier.popleft()
        src = pid((qa, qf))
        arcs_a = out_a.get(qa, ())
        arcs_f = out_f.get(qf, ())
        matched_here = False
        for ta in arcs_a:
            if ta.out is None:
                dst = (ta.dst, qf)
                transitions.append(Transition(src, ta.inp, None, ta.prob, pid(dst)))
                matched_here = True
                if dst not in visited:
                    visited.add(dst)
                    frontier.append(dst)
                continue
            for tf in arcs_f:
                if tf.inp is not None and tf.inp == ta.out:
                    dst = (ta.dst, tf.dst)
                    transitions.append(
                        Transition(src, ta.inp, tf.out, ta.prob * tf.prob, pid(dst))
                    )
                    matched_here = True
                    if dst not in visited:
                        visited.add(dst)
                        frontier.append(dst)
        for tf in arcs_f:
            if tf.inp is None:
                dst = (qa, tf.dst)
                transitions.append(Transition(src, None, tf.out, tf.prob, pid(dst)))
                matched_here = True
                if dst not in visited:
                    visited.add(dst)
                    frontier.append(dst)
        if not matched_here and arcs_a and first_unmatched is None:
            first_unmatched = arcs_a[0].out

    finals = {
        pid(p) for p in visited if p[0] in a.finals and p[1] in f.finals
    }

    # Trim to states that can still reach a final pair.
    ids = set(pair_ids.values())
    rev: dict[int, list[int]] = defaultdict(list)
    for t in transitions:
        rev[t.dst].append(t.src)
    alive = set(finals)
    queue = deque(finals)
    while queue:
        s = queue.popleft()
        for p in rev.get(s, ()):
            if p not in alive:
                alive.add(p)
                queue.append(p)
    init_id = pid(start)
    if init_id not in alive:
        raise CompositionError(first_unmatched)
    kept = [t for t in transitions if t.src in alive and t.dst in alive]

    # Trimming may drop branches; rescale so outgoing mass is 1 again.
    totals: dict[int, float] = defaultdict(float)
    for t in kept:
        totals[t.src] += t.prob
    rescaled = tuple(
        t if abs(totals[t.src] - 1.0) <= PROB_TOL else replace(t, prob=t.prob / totals[t.src])
        for t in kept
    )
    order = sorted(alive)
    remap = {s: i for i, s in enumerate(order)}
    return WFST(
        states=tuple(range(len(order))),
        transitions=tuple(
            replace(t, src=remap[t.src], dst=remap[t.dst]) for t in rescaled
        ),
        initial=remap[init_id],
        finals=frozenset(remap[s] for s in finals if s in alive),
        beats_per_cycle=_carried_cycle(a, f),
    )


def call_cycle_fst(
    tala: TalaDefinition,
    cycles: int = 4,
    filler: bool = True,
    filler_beat: Beat | None = None,
) -> WFST:
    """The looping practice machine for a tala.

    With a filler, ``cycles`` theka repetitions form one call round and
    the round's very last beat is replaced by the filler flourish, so
    the following downbeat lands on time.  Without one, the theka
    simply repeats.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    base = beat_cycle_fst(tala.theka)
    if not filler:
        return closure(base)
    if filler_beat is None:
        filler_beat = DEFAULT_FILLER_BEAT
    last = compose(base, filler_fst(tala.theka, filler_beat))
    chain = base if cycles > 1 else last
    for _ in range(cycles - 2):
        chain = concat(chain, base)
    if cycles > 1:
        chain = concat(chain, last)
    return closure(chain)


@dataclass(frozen=True)
class StrokeEvent:
    """One emitted stroke with its grid coordinates."""

    beat_index: int
    within_beat_index: int
    beat_size: int
    label: StrokeLabel
    is_sam: bool

    def __post_init__(self) -> None:
        if not 0 <= self.within_beat_index < self.beat_size:
            raise ValueError("within_beat_index outside beat")


def emit_stream(
    machine: WFST,
    seed: int = 0,
    beats_per_cycle: int | None = None,
) -> Iterator[StrokeEvent]:
    """Walk the machine, sampling branches with the given seed.

    Yields one StrokeEvent per stroke (rests included, so the renderer
    keeps its grid).  The stream ends if a final state without arcs is
    reached; a closed machine streams forever.  A dead end anywhere
    else is a structural bug and raises.
    """
    n_cycle = beats_per_cycle or machine.beats_per_cycle
    out = machine.outgoing()
    rng = random.Random(seed)
    state = machine.initial
    beat_i = 0
    while True:
        arcs = out.get(state)
        if not arcs:
            if state in machine.finals:
                return
            raise RuntimeError(f"dead-end non-final state {state}")
        if len(arcs) == 1:
            arc = arcs[0]
        else:
            arc = rng.choices(arcs, weights=[t.prob for t in arcs])[0]
        if arc.out is not None:
            size = len(arc.out)
            sam = beat_i == 0 if n_cycle is None else beat_i % n_cycle == 0
            for j, label in enumerate(arc.out.events):
                yield StrokeEvent(beat_i, j, size, label, sam)
            beat_i += 1
        state = arc.dst


def save_machine(
    tala_name: str,
    cycles: int,
    filler: bool,
    filler_beat: Beat | None = None,
) -> str:
    """Serialize a call-cycle layout to its JSON description."""
    beat = filler_beat or DEFAULT_FILLER_BEAT
    doc = {
        "tala": tala_name,
        "cycles": cycles,
        "filler": filler,
        "filler_beat": [ev.name for ev in beat.events],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_machine(text: str, talas: Sequence[TalaDefinition]) -> WFST:
    """Build a call-cycle machine from its JSON description."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid machine file: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(doc, dict) or "tala" not in doc:
        raise ValueError("machine file must be a JSON object with a 'tala' field")
    by_name = {t.name: t for t in talas}
    name = doc["tala"]
    if name not in by_name:
        raise ValueError(f"machine file names unknown tala {name!r}")
    cycles = doc.get("cycles", 4)
    filler = doc.get("filler", True)
    if not isinstance(cycles, int) or cycles < 1:
        raise ValueError("machine file 'cycles' must be a positive integer")
    filler_beat = None
    if "filler_beat" in doc:
        names = doc["filler_beat"]
        if not isinstance(names, list) or not all(isinstance(s, str) for s in names) or not names:
            raise ValueError("machine file 'filler_beat' must be a list of stroke names")
        filler_beat = Beat.of(*names)
    return call_cycle_fst(by_name[name], cycles=cycles, filler=filler, filler_beat=filler_beat)
