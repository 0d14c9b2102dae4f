import itertools
from collections import Counter

import pytest

from talagen.core import Beat, BeatCycle, builtin_tala, builtin_talas
from talagen.fst import (
    DEFAULT_FILLER_BEAT,
    CompositionError,
    StrokeEvent,
    Transition,
    WFST,
    beat_cycle_fst,
    call_cycle_fst,
    closure,
    compose,
    concat,
    emit_stream,
    filler_fst,
    load_machine,
    save_machine,
    validate_wfst,
)


def emitted_beats(machine, count, seed=0, beats_per_cycle=None):
    """Collect the first `count` beats of a stream as tuples of stroke names."""
    beats = []
    current = []
    for ev in emit_stream(machine, seed, beats_per_cycle):
        current.append(ev.label.name)
        if ev.within_beat_index == ev.beat_size - 1:
            beats.append(tuple(current))
            current = []
            if len(beats) == count:
                return beats
    return beats


def cycle_beats(cycle):
    return [tuple(ev.name for ev in b.events) for b in cycle.beats]


# ------------------------------------------------------------ structure

def test_beat_cycle_machine_shape():
    tintal = builtin_tala("tintal")
    machine = beat_cycle_fst(tintal.theka)
    assert len(machine.states) == 17
    assert len(machine.transitions) == 16
    assert all(t.prob == 1.0 for t in machine.transitions)
    assert machine.finals == {16}
    assert validate_wfst(machine) == []


def test_one_beat_cycle():
    machine = beat_cycle_fst(BeatCycle((Beat.of("Dha"),), (1,)))
    assert len(machine.states) == 2
    assert len(machine.transitions) == 1


def test_single_path_property():
    # Every non-final state has exactly one outgoing arc.
    for tala in builtin_talas():
        machine = beat_cycle_fst(tala.theka)
        out = machine.outgoing()
        for s in machine.states:
            expected = 0 if s in machine.finals else 1
            assert len(out.get(s, [])) == expected


def test_emitted_output_equals_cycle():
    for tala in builtin_talas():
        machine = beat_cycle_fst(tala.theka)
        assert emitted_beats(machine, len(tala.theka)) == cycle_beats(tala.theka)


# ------------------------------------------------------------- combinators

def test_concat_chains_single_paths():
    a = beat_cycle_fst(builtin_tala("jhaptal").theka)
    b = beat_cycle_fst(builtin_tala("rupak").theka)
    chained = concat(a, b)
    assert validate_wfst(chained) == []
    assert len(chained.transitions) == 10 + 7
    expected = cycle_beats(builtin_tala("jhaptal").theka) + cycle_beats(builtin_tala("rupak").theka)
    assert emitted_beats(chained, 17) == expected


def test_concat_four_cycles_emits_four_repetitions():
    tala = builtin_tala("tintal")
    tb = beat_cycle_fst(tala.theka)
    machine = concat(concat(concat(tb, tb), tb), tb)
    beats = emitted_beats(machine, 64)
    assert beats == cycle_beats(tala.theka) * 4


def test_concat_with_identity_is_isomorphic():
    tala = builtin_tala("rupak")
    tb = beat_cycle_fst(tala.theka)
    empty = WFST(states=(0,), transitions=(), initial=0, finals=frozenset({0}))
    same = concat(tb, empty)
    assert len(same.transitions) == len(tb.transitions)
    assert emitted_beats(same, 7) == cycle_beats(tala.theka)


def test_closure_repeats_theka():
    for tala in builtin_talas():
        machine = closure(beat_cycle_fst(tala.theka))
        n = len(tala.theka)
        assert validate_wfst(machine) == []
        assert emitted_beats(machine, 2 * n) == cycle_beats(tala.theka) * 2


def test_closure_of_one_beat_machine_is_constant():
    machine = closure(beat_cycle_fst(BeatCycle((Beat.of("Na"),), (1,))))
    assert emitted_beats(machine, 5) == [("Na",)] * 5


def test_closure_concat_order_agrees_on_prefixes():
    tala = builtin_tala("jhaptal")
    tb = beat_cycle_fst(tala.theka)
    ten_cycles = 10 * len(tala.theka)
    a = closure(concat(tb, tb))
    b = closure(tb)
    assert emitted_beats(a, ten_cycles) == emitted_beats(b, ten_cycles)


def test_closure_rejects_final_with_arcs():
    machine = closure(beat_cycle_fst(builtin_tala("rupak").theka))
    with pytest.raises(ValueError):
        closure(machine)


# ------------------------------------------------------------- composition

def test_compose_with_identity_preserves_output():
    for tala in builtin_talas():
        tb = beat_cycle_fst(tala.theka)
        ident = filler_fst(tala.theka)
        composed = compose(tb, ident)
        assert validate_wfst(composed) == []
        n = len(tala.theka)
        assert emitted_beats(closure(composed), 100)[:100] == \
            emitted_beats(closure(tb), 100)[:100]
        assert len(composed.transitions) == n


def test_compose_replaces_final_beat():
    tala = builtin_tala("tintal")
    tb = beat_cycle_fst(tala.theka)
    composed = compose(tb, filler_fst(tala.theka, DEFAULT_FILLER_BEAT))
    beats = emitted_beats(composed, 16)
    assert beats[:15] == cycle_beats(tala.theka)[:15]
    assert beats[15] == ("Ti", "Ra", "Ki", "Ta")


def test_compose_mismatch_names_first_unmatched_beat():
    tala = builtin_tala("rupak")
    other = builtin_tala("jhaptal")
    tb = beat_cycle_fst(tala.theka)
    with pytest.raises(CompositionError, match=r"\[Tin\]"):
        compose(tb, filler_fst(other.theka))


def test_compose_preserves_probability_normalization():
    tala = builtin_tala("ektal")
    tb = beat_cycle_fst(tala.theka)
    composed = compose(tb, filler_fst(tala.theka, DEFAULT_FILLER_BEAT))
    assert validate_wfst(composed) == []


# ------------------------------------------------------------- call cycles

def test_call_cycle_places_filler_at_final_position():
    for tala in builtin_talas():
        n = len(tala.theka)
        machine = call_cycle_fst(tala, cycles=4, filler=True)
        assert validate_wfst(machine) == []
        beats = emitted_beats(machine, 12 * n)
        for pos, beat in enumerate(beats):
            if pos % (4 * n) == 4 * n - 1:
                assert beat == ("Ti", "Ra", "Ki", "Ta"), (tala.name, pos)
            else:
                assert beat == cycle_beats(tala.theka)[pos % n], (tala.name, pos)


def test_call_cycle_without_filler_is_plain_repetition():
    tala = builtin_tala("jhaptal")
    machine = call_cycle_fst(tala, filler=False)
    n = len(tala.theka)
    assert emitted_beats(machine, 3 * n) == cycle_beats(tala.theka) * 3


def test_call_cycle_single_cycle_filler():
    tala = builtin_tala("rupak")
    machine = call_cycle_fst(tala, cycles=1, filler=True)
    beats = emitted_beats(machine, 14)
    assert beats[6] == ("Ti", "Ra", "Ki", "Ta")
    assert beats[13] == ("Ti", "Ra", "Ki", "Ta")


# ------------------------------------------------------------- emission

def test_stream_sam_flags():
    tala = builtin_tala("tintal")
    machine = closure(beat_cycle_fst(tala.theka))
    events = list(itertools.islice(emit_stream(machine, seed=1), 17))
    assert [e.label.name for e in events[:16]] == [
        s.name for b in tala.theka.beats for s in b.events
    ]
    assert events[0].is_sam
    assert not any(e.is_sam for e in events[1:16])
    assert events[16].is_sam and events[16].label.name == "Dha"
    assert events[16].beat_index == 16


def test_single_path_stream_ignores_seed():
    tala = builtin_tala("ektal")
    machine = closure(beat_cycle_fst(tala.theka))
    a = list(itertools.islice(emit_stream(machine, seed=0), 60))
    b = list(itertools.islice(emit_stream(machine, seed=999), 60))
    assert a == b


def test_stream_period_matches_cycle_over_five_periods():
    for tala in builtin_talas():
        machine = closure(beat_cycle_fst(tala.theka))
        n = len(tala.theka)
        beats = emitted_beats(machine, 5 * n)
        assert beats == cycle_beats(tala.theka) * 5


def test_stream_ends_at_final_of_open_machine():
    tala = builtin_tala("rupak")
    events = list(emit_stream(beat_cycle_fst(tala.theka)))
    assert len(events) == 7
    assert events[-1].beat_index == 6


def test_stream_raises_on_dead_end():
    dha = Beat.of("Dha")
    machine = WFST(
        states=(0, 1),
        transitions=(Transition(0, None, dha, 1.0, 1),),
        initial=0,
        finals=frozenset(),
    )
    with pytest.raises(RuntimeError, match="dead-end"):
        list(emit_stream(machine))


def test_branch_frequencies_follow_probabilities():
    dha, tin = Beat.of("Dha"), Beat.of("Tin")
    machine = WFST(
        states=(0, 1),
        transitions=(
            Transition(0, None, dha, 0.5, 1),
            Transition(0, None, tin, 0.5, 1),
            Transition(1, None, None, 1.0, 0),
        ),
        initial=0,
        finals=frozenset({1}),
        beats_per_cycle=1,
    )
    for seed in (0, 7, 12345):
        events = itertools.islice(emit_stream(machine, seed=seed), 10_000)
        freq = Counter(e.label.name for e in events)
        assert abs(freq["Dha"] / 10_000 - 0.5) < 0.02, seed


def test_stroke_event_validates_position():
    from talagen.core import StrokeLabel
    with pytest.raises(ValueError):
        StrokeEvent(0, 4, 4, StrokeLabel("Dha"), False)


# ---------------------------------------------------------- machine files

def test_machine_file_round_trip():
    talas = builtin_talas()
    text = save_machine("jhaptal", 4, True)
    machine = load_machine(text, talas)
    n = len(builtin_tala("jhaptal").theka)
    beats = emitted_beats(machine, 4 * n)
    assert beats[4 * n - 1] == ("Ti", "Ra", "Ki", "Ta")


def test_machine_file_rejects_bad_documents():
    talas = builtin_talas()
    with pytest.raises(ValueError, match="line"):
        load_machine("{broken", talas)
    with pytest.raises(ValueError, match="unknown tala"):
        load_machine('{"tala": "wat"}', talas)
    with pytest.raises(ValueError, match="cycles"):
        load_machine('{"tala": "tintal", "cycles": 0}', talas)
    with pytest.raises(ValueError, match="filler_beat"):
        load_machine('{"tala": "tintal", "filler_beat": []}', talas)
