"""Biasing, best path and posteriors against path enumeration.

The composition is the piece most likely to be subtly wrong: a failure arc
that forgets to retry the token, or a partial match that gets credited, both
produce lattices that look plausible and decode to nearly the same words. So
most of this file generates small lattices and checks every path against an
oracle that never builds an automaton: it enumerates paths and scans each
word string directly.

Costs are multiples of 0.25 so sums are exact and ties are real ties.
"""

from __future__ import annotations

import math
import random

import pytest

from atc2.lattice import (
    Arc,
    EmptySequenceSet,
    Lattice,
    LatticeError,
    NoPath,
    PositiveDiscount,
    best_path,
    best_path_confidences,
    build_biasing_fst,
    compose_bias,
    format_lattices,
    parse_lattice,
    parse_lattices,
    word_posteriors,
)
from atc2.textnorm import DIGIT_WORDS

SEED = 20260302
CASES = 1000
VOCAB = ("alfa", "bravo", "seven", "nine", "china", "southern")


def _random_lattice(rng: random.Random) -> Lattice:
    n = rng.randint(2, 8)
    arcs = []
    for _ in range(rng.randint(1, 16)):
        src = rng.randrange(n - 1)
        dst = rng.randint(src + 1, n - 1)
        arcs.append(Arc(src, dst, rng.choice(VOCAB), rng.randint(0, 12) * 0.25))
    finals = {n - 1: rng.randint(0, 4) * 0.25}
    for s in range(1, n - 1):
        if rng.random() < 0.2:
            finals[s] = rng.randint(0, 4) * 0.25
    return Lattice(tuple(arcs), finals, 0)


def _random_sequences(rng: random.Random) -> list[tuple[str, ...]]:
    return [
        tuple(rng.choice(VOCAB) for _ in range(rng.randint(1, 3)))
        for _ in range(rng.randint(1, 4))
    ]


def _paths(lat: Lattice) -> list[tuple[tuple[int, ...], tuple[str, ...], float]]:
    """Every start -> final path as (arc indices, words, cost)."""
    out = []

    def walk(state, arcs, cost):
        if state in lat.finals:
            words = tuple(lat.arcs[i].word for i in arcs)
            out.append((tuple(arcs), words, cost + lat.finals[state]))
        for i, arc in enumerate(lat.arcs):
            if arc.src == state:
                walk(arc.dst, [*arcs, i], cost + arc.cost)

    walk(lat.start, [], 0.0)
    return out


def _scan_credit(words, sequences, discount) -> float:
    """Greedy left-to-right matcher over prefix sets, retrying a failed token once."""
    seqs = {tuple(s) for s in sequences}
    prefixes = {s[:k] for s in seqs for k in range(1, len(s) + 1)}

    def extendable(p):
        return any(len(q) > len(p) and q[: len(p)] == p for q in prefixes)

    total, cur = 0.0, ()
    for word in words:
        ext = (*cur, word)
        if ext in prefixes:
            cur = ext
        else:
            if cur in seqs:
                total += len(cur) * discount
            cur = (word,) if cur and (word,) in prefixes else ()
        if cur in seqs and not extendable(cur):
            total += len(cur) * discount
            cur = ()
    if cur in seqs:
        total += len(cur) * discount
    return total


def _cases():
    rng = random.Random(SEED)
    for _ in range(CASES):
        yield _random_lattice(rng), _random_sequences(rng), -rng.randint(1, 4) * 0.25


def _two_path():
    arcs = [
        Arc(0, 1, "china", 1.0), Arc(1, 2, "southern", 1.0), Arc(2, 3, "three", 1.0),
        Arc(3, 4, "two", 1.0), Arc(4, 5, "five", 1.0), Arc(4, 5, "nine", 0.5),
    ]
    return Lattice(tuple(arcs), {5: 0.0})


# --- biasing FST -------------------------------------------------------------


def test_unigram_credit_anywhere():
    fst = build_biasing_fst([("seven",)], -0.5)
    assert fst.match_cost(["descend", "seven"]) == -0.5
    assert fst.match_cost(["seven", "alfa", "seven"]) == -1.0
    assert fst.match_cost(["alfa"]) == 0.0


def test_full_match_credits_every_token_and_abandoned_prefix_credits_nothing():
    fst = build_biasing_fst([("china", "southern", "three", "two", "five")], -0.2)
    assert fst.match_cost("china southern three two five".split()) == pytest.approx(-1.0)
    assert fst.match_cost("china southern nine".split()) == 0.0


def test_failed_token_is_retried_at_root():
    fst = build_biasing_fst([("alfa", "bravo"), ("seven",)], -1.0)
    assert fst.match_cost(["alfa", "seven"]) == -1.0


def test_duplicate_sequences_build_the_same_fst():
    seq = ("lufthansa", "seven", "romeo")
    assert build_biasing_fst([seq, seq, seq]) == build_biasing_fst([seq])


@pytest.mark.parametrize(
    ("sequences", "discount", "error"),
    [
        ([], -0.5, EmptySequenceSet),
        ([()], -0.5, EmptySequenceSet),
        ([("seven",)], 0.1, PositiveDiscount),
        ([("Seven",)], -0.5, LatticeError),
    ],
)
def test_fst_rejects(sequences, discount, error):
    with pytest.raises(error):
        build_biasing_fst(sequences, discount)


def test_too_many_sequences():
    seqs = [tuple(DIGIT_WORDS[int(c)] for c in f"{k:05d}") for k in range(10_001)]
    with pytest.raises(LatticeError, match="limit"):
        build_biasing_fst(seqs)


def test_matcher_agrees_with_string_scan():
    rng = random.Random(SEED + 1)
    for _ in range(CASES):
        seqs = _random_sequences(rng)
        words = [rng.choice(VOCAB) for _ in range(rng.randint(0, 10))]
        fst = build_biasing_fst(seqs, -1.0)
        assert fst.match_cost(words) == _scan_credit(words, seqs, -1.0), (seqs, words)


def test_more_negative_discount_never_raises_a_cost():
    rng = random.Random(SEED + 2)
    for _ in range(200):
        seqs = _random_sequences(rng)
        words = [rng.choice(VOCAB) for _ in range(rng.randint(1, 8))]
        weak = build_biasing_fst(seqs, -0.25).match_cost(words)
        strong = build_biasing_fst(seqs, -1.0).match_cost(words)
        assert strong <= weak <= 0.0


# --- composition and decoding ------------------------------------------------


def test_two_path_example():
    lat = _two_path()
    assert best_path(lat) == ("china southern three two nine".split(), 4.5)
    fst = build_biasing_fst([tuple("china southern three two five".split())], -0.2)
    biased = compose_bias(lat, fst)
    words, cost = best_path(biased)
    assert words == "china southern three two five".split()
    assert cost == pytest.approx(4.0)
    costs = {w: c for _, w, c in _paths(biased)}
    assert costs[tuple("china southern three two nine".split())] == pytest.approx(4.5)


def test_zero_discount_is_identity():
    lat = _two_path()
    same = compose_bias(lat, build_biasing_fst([("five",)], 0.0))
    assert sorted((w, c) for _, w, c in _paths(same)) == sorted(
        (w, c) for _, w, c in _paths(lat)
    )


def test_composition_matches_enumeration():
    """Same word strings, each cost shifted by exactly the scanner's credit."""
    for lat, seqs, discount in _cases():
        expected = sorted(
            (words, cost + _scan_credit(words, seqs, discount)) for _, words, cost in _paths(lat)
        )
        if not expected:
            continue
        biased = compose_bias(lat, build_biasing_fst(seqs, discount))
        got = sorted((w, c) for _, w, c in _paths(biased))
        assert [w for w, _ in got] == [w for w, _ in expected]
        for (_, c_got), (_, c_exp) in zip(got, expected):
            assert c_got == pytest.approx(c_exp, abs=1e-9)


def test_best_path_matches_enumeration():
    for lat, seqs, discount in _cases():
        paths = _paths(lat)
        if not paths:
            with pytest.raises(NoPath):
                best_path(lat)
            continue
        cost, words = min((c, w) for _, w, c in paths)
        assert best_path(lat) == (list(words), cost)

        biased = compose_bias(lat, build_biasing_fst(seqs, discount))
        b_cost, b_words = min((c + _scan_credit(w, seqs, discount), w) for _, w, c in paths)
        assert best_path(biased) == (list(b_words), b_cost)
        # Rescoring the whole lattice is never worse than boosting the 1-best afterwards.
        assert b_cost <= cost + _scan_credit(words, seqs, discount)


def test_equal_cost_tie_breaks_lexicographically():
    lat = Lattice((Arc(0, 1, "bravo", 1.0), Arc(0, 1, "alfa", 1.0)), {1: 0.0})
    assert best_path(lat) == (["alfa"], 1.0)


# --- posteriors --------------------------------------------------------------


def test_single_path_posteriors_are_one():
    lat = Lattice.linear(["descend", "flight", "level"], 0.7)
    assert word_posteriors(lat) == pytest.approx([1.0, 1.0, 1.0])
    words, confs, avg = best_path_confidences(lat)
    assert words == ["descend", "flight", "level"]
    assert avg == pytest.approx(1.0)


def test_parallel_arcs_split_by_probability():
    lat = Lattice((Arc(0, 1, "seven", 0.0), Arc(0, 1, "nine", math.log(3))), {1: 0.0})
    assert word_posteriors(lat) == pytest.approx([0.75, 0.25])
    words, confs, avg = best_path_confidences(lat)
    assert words == ["seven"]
    assert confs == pytest.approx([0.75])
    assert avg == pytest.approx(0.75)


def test_posteriors_match_enumeration():
    rng = random.Random(SEED + 3)
    checked = 0
    while checked < 300:
        lat = _random_lattice(rng)
        paths = _paths(lat)
        if not paths:
            continue
        z = math.fsum(math.exp(-c) for _, _, c in paths)
        expected = [
            math.fsum(math.exp(-c) for arcs, _, c in paths if i in arcs) / z
            for i in range(len(lat.arcs))
        ]
        assert word_posteriors(lat) == pytest.approx(expected, abs=1e-9)
        checked += 1


def test_no_path():
    lat = Lattice((Arc(0, 1, "alfa", 0.0),), {2: 0.0})
    with pytest.raises(NoPath):
        best_path(lat)
    with pytest.raises(NoPath):
        word_posteriors(lat)


def test_cycle_rejected():
    with pytest.raises(LatticeError, match="cycle"):
        Lattice((Arc(0, 1, "alfa", 0.0), Arc(1, 0, "bravo", 0.0)), {1: 0.0})


# --- text format -------------------------------------------------------------


def test_parse_trims_dead_states_and_reads_batches():
    text = "0 1 seven 0.5\n0 2 nine 0.25\n1\n\n0 1 alfa 0\n1 0.5\n"
    first, second = parse_lattices(text)
    assert [a.word for a in first.arcs] == ["seven"]
    assert best_path(second) == (["alfa"], 0.5)
    assert parse_lattices(format_lattices([first, second])) == [first, second]


@pytest.mark.parametrize(
    "text",
    ["0 1 seven -1\n1\n", "0 1 seven 1\n", "0 1 seven\n1\n", "0 1 Seven 1\n1\n"],
    ids=["negative", "no-final", "short-arc", "unnormalized"],
)
def test_parse_rejects(text):
    with pytest.raises(LatticeError):
        parse_lattice(text)


def test_negative_costs_allowed_when_asked():
    lat = parse_lattice("0 1 seven -1\n1\n", allow_negative=True)
    assert best_path(lat) == (["seven"], -1.0)
