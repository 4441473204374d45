"""Metrics against brute-force oracles and hand-computed values."""

from __future__ import annotations

import functools
import random

import pytest

from atc2.metrics import (
    EmptyReference,
    EmptySet,
    LengthMismatch,
    MetricsError,
    NoEntities,
    align,
    callsign_accuracy,
    corpus_span_prf,
    corpus_wer,
    entity_errors,
    entity_wer,
    format_alignment,
    jer,
    prf,
    span_prf,
    utterance_report,
    wer,
)
from atc2.model import AnnotatedTranscript, Entity
from atc2.textnorm import AirlineTable

SEED = 20260317
WORDS = ("alfa", "bravo", "seven", "nine", "land")


def _edit_distance(a, b) -> int:
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def _jer_oracle(ref_turns, hyp_turns) -> float:
    def sets(turns):
        out = {}
        for spk, s, e in turns:
            out.setdefault(spk, set()).update(range(s, e))
        return [v for v in out.values() if v]

    ref, hyp = sets(ref_turns), sets(hyp_turns)
    total = 0.0
    for r in ref:
        # The cluster with the largest overlap, whatever its Jaccard ratio.
        most = max((len(r & h) for h in hyp), default=0)
        total += max((len(r & h) / len(r | h) for h in hyp if len(r & h) == most), default=0.0)
    return 1.0 - total / len(ref)


def _cluster_sets(turns) -> set[frozenset[int]]:
    return {frozenset(k for s2, a, b in turns if s2 == s for k in range(a, b)) for s, _, _ in turns}


def _random_turns(rng: random.Random, n: int):
    cuts = sorted(rng.sample(range(1, n), rng.randint(0, min(3, n - 1))))
    edges = [0, *cuts, n]
    return [(rng.choice("ABC"), s, e) for s, e in zip(edges, edges[1:])]


def _tokens(text: str) -> list[str]:
    return text.split()


# --- WER ---------------------------------------------------------------------


@pytest.mark.parametrize(
    ("ref", "hyp", "rate"),
    [
        ("cleared to land", "cleared to land", 0.0),
        ("runway three four left", "runway three four right", 0.25),
        ("cleared to land", "cleared land", 1 / 3),
        ("", "", 0.0),
        ("", "seven", 1.0),
    ],
)
def test_wer_examples(ref, hyp, rate):
    _, got = wer(_tokens(ref), _tokens(hyp))
    assert got == pytest.approx(rate)


def test_alignment_matches_edit_distance():
    rng = random.Random(SEED)
    for _ in range(5000):
        ref = [rng.choice(WORDS) for _ in range(rng.randint(0, 8))]
        hyp = [rng.choice(WORDS) for _ in range(rng.randint(0, 8))]
        r = align(ref, hyp)
        assert r.errors == _edit_distance(tuple(ref), tuple(hyp)), (ref, hyp)
        assert r.substitutions + r.deletions + r.hits == len(ref)
        assert r.substitutions + r.insertions + r.hits == len(hyp)
        assert [p.ref for p in r.pairs if p.ref is not None] == list(range(len(ref)))
        assert [p.hyp for p in r.pairs if p.hyp is not None] == list(range(len(hyp)))


def test_wer_ignores_token_names():
    rng = random.Random(SEED + 1)
    rename = dict(zip(WORDS, ("x-ray", "yankee", "zulu", "one", "two")))
    for _ in range(200):
        ref = [rng.choice(WORDS) for _ in range(rng.randint(1, 8))]
        hyp = [rng.choice(WORDS) for _ in range(rng.randint(0, 8))]
        assert wer(ref, hyp)[1] == wer([rename[w] for w in ref], [rename[w] for w in hyp])[1]
        assert wer(ref, ref)[1] == 0.0


def test_tie_prefers_substitution_over_delete_insert():
    r = align(["alfa"], ["bravo"])
    assert (r.substitutions, r.insertions, r.deletions) == (1, 0, 0)


def test_corpus_wer_weights_by_reference_length():
    total, rate = corpus_wer([
        (_tokens("runway three four left"), _tokens("runway three four right")),
        (_tokens("cleared to land"), _tokens("cleared land")),
    ])
    assert (total.substitutions, total.deletions, total.hits) == (1, 1, 5)
    assert rate == pytest.approx(2 / 7)


def test_format_alignment():
    ref, hyp = _tokens("cleared to land"), _tokens("cleared land")
    rows = format_alignment(ref, hyp, align(ref, hyp)).splitlines()
    assert rows[0] == "REF: cleared to land"
    assert rows[1].split() == ["HYP:", "cleared", "*", "land"]
    assert rows[2].strip() == "D"
    assert rows[2].index("D") == rows[0].index("to")


def test_utterance_report():
    report = utterance_report("utt1", _tokens("cleared to land"), _tokens("cleared land"))
    assert report["id"] == "utt1"
    assert report["deletions"] == 1
    assert report["ref_len"] == 3
    assert report["wer"] == pytest.approx(1 / 3)


# --- callsigns ---------------------------------------------------------------


def _with_callsign(text: str, start: int, end: int) -> AnnotatedTranscript:
    return AnnotatedTranscript(tuple(text.split()), (Entity("callsign", start, end),))


def test_entity_wer_counts_only_callsign_words():
    ref = _with_callsign("cleared to land china southern three two five", 3, 8)
    hyp = _tokens("cleared land china southern three two nine")
    assert entity_wer([ref], [hyp]) == pytest.approx(0.2)
    assert entity_wer([ref], [_tokens("descend land china southern three two five")]) == 0.0


def test_insertions_count_inside_a_callsign_only():
    ref = _with_callsign("cleared to land china southern three two five", 3, 8)
    hyp = _tokens("cleared to land now china southern three two five")
    assert entity_errors(ref, hyp) == (0, 5)
    ref = _with_callsign("china southern three two five", 0, 5)
    assert entity_errors(ref, _tokens("china southern three three two five")) == (1, 5)


def test_entity_wer_rejects():
    plain = AnnotatedTranscript(("cleared", "to", "land"))
    with pytest.raises(NoEntities):
        entity_wer([plain], [["cleared"]])
    with pytest.raises(LengthMismatch):
        entity_wer([plain], [])


def test_callsign_accuracy():
    table = AirlineTable.builtin()
    full = _tokens("lufthansa seven seven romeo mike")
    assert callsign_accuracy(["DLH77RM"], [full], table) == 1.0
    assert callsign_accuracy(["DLH77RM"], [_tokens("lufthansa romeo mike")], table) == 1.0
    assert callsign_accuracy(
        [_tokens("c s a one two"), "CSA12"], [_tokens("c s a one two"), None], table
    ) == 0.5
    with pytest.raises(EmptySet):
        callsign_accuracy([], [], table)
    with pytest.raises(LengthMismatch):
        callsign_accuracy(["DLH1"], [], table)


# --- precision, recall, F1 ---------------------------------------------------


@pytest.mark.parametrize(
    ("counts", "expected"),
    [((8, 2, 2), (0.8, 0.8, 0.8)), ((0, 0, 0), (0.0, 0.0, 0.0)), ((5, 0, 0), (1.0, 1.0, 1.0))],
    ids=["example", "empty", "perfect"],
)
def test_prf(counts, expected):
    assert prf(*counts) == pytest.approx(expected)


def test_f1_lies_between_precision_and_recall():
    rng = random.Random(SEED + 2)
    for _ in range(2000):
        p, r, f1 = prf(rng.randint(0, 20), rng.randint(0, 20), rng.randint(0, 20))
        if p + r == 0:
            assert f1 == 0.0
            continue
        assert min(p, r) - 1e-12 <= f1 <= max(p, r) + 1e-12
        assert f1 <= (p + r) / 2 + 1e-12


def test_prf_rejects_negative_counts():
    with pytest.raises(MetricsError):
        prf(1, -1, 0)


def test_span_prf_is_exact_match():
    tokens = tuple("a b c d e f".split())
    ref = AnnotatedTranscript(tokens, (Entity("value", 0, 2), Entity("value", 3, 5)))
    same = span_prf(ref, ref, "value")
    assert same == (1.0, 1.0, 1.0)
    shifted = AnnotatedTranscript(tokens, (Entity("value", 1, 3), Entity("value", 3, 5)))
    assert span_prf(ref, shifted, "value") == (0.5, 0.5, 0.5)
    one_and_spurious = AnnotatedTranscript(tokens, (Entity("value", 0, 2), Entity("value", 5, 6)))
    assert span_prf(ref, one_and_spurious, "value") == (0.5, 0.5, 0.5)
    relabelled = AnnotatedTranscript(tokens, (Entity("command", 0, 2), Entity("value", 3, 5)))
    assert span_prf(ref, relabelled, "value") == pytest.approx((1.0, 0.5, 2 / 3))
    with pytest.raises(LengthMismatch):
        span_prf(ref, AnnotatedTranscript(tokens[:3]), "value")


def test_corpus_span_prf_pools_counts():
    tokens = tuple("a b c".split())
    ref = AnnotatedTranscript(tokens, (Entity("callsign", 0, 3),))
    miss = AnnotatedTranscript(tokens)
    assert corpus_span_prf([ref, ref], [ref, miss], "callsign") == pytest.approx((1.0, 0.5, 2 / 3))


# --- JER ---------------------------------------------------------------------


def test_jer_examples():
    ref = [("A", 0, 2), ("B", 2, 4)]
    assert jer(ref, ref) == 0.0
    assert jer(ref, [("X", 0, 4)]) == pytest.approx(0.5)
    assert jer(ref, []) == 1.0
    with pytest.raises(EmptyReference):
        jer([], ref)


def test_jer_picks_the_cluster_with_most_overlap():
    # Y matches A better by ratio (1/4) than X does (3/21), but X shares more tokens.
    ref = [("A", 0, 4), ("B", 4, 21)]
    hyp = [("X", 0, 3), ("Y", 3, 4), ("X", 4, 21)]
    assert jer(ref, hyp) == pytest.approx(1 - (3 / 21 + 17 / 20) / 2)


def test_jer_matches_overlap_oracle():
    rng = random.Random(SEED + 3)
    for _ in range(2000):
        n = rng.randint(1, 12)
        ref, hyp = _random_turns(rng, n), _random_turns(rng, n)
        got = jer(ref, hyp)
        assert got == pytest.approx(_jer_oracle(ref, hyp), abs=1e-12), (ref, hyp)
        assert 0.0 <= got <= 1.0


def test_jer_is_zero_only_for_matching_clusters():
    rng = random.Random(SEED + 4)
    for _ in range(1000):
        n = rng.randint(1, 12)
        ref, hyp = _random_turns(rng, n), _random_turns(rng, n)
        ref_sets, hyp_sets = _cluster_sets(ref), _cluster_sets(hyp)
        assert (jer(ref, hyp) == 0.0) == (ref_sets <= hyp_sets), (ref, hyp)
