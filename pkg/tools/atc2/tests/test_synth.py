"""The synthetic corpus, and boosting measured on it.

Every wrong arc the generator adds is cheaper than the reference arc it
competes with, so an unbiased decoder gets noisy callsigns wrong. Boosting
with the ground-truth callsign, or with a context list that contains it, must
win those back and must not lose anything else.
"""

from __future__ import annotations

import pytest

from atc2 import eld
from atc2.lattice import best_path, build_biasing_fst, compose_bias
from atc2.metrics import callsign_accuracy, entity_wer
from atc2.model import read_context_csv, read_records
from atc2.synth import (
    SynthError,
    SynthSpec,
    bootstrap_model,
    generate_corpus,
    read_dialogues,
    read_references,
    training_corpus,
    write_corpus,
)
from atc2.textnorm import AirlineTable, context_sequences
from atc2.understand import PhraseologyGrammar, tag_entities


@pytest.fixture(scope="module")
def table() -> AirlineTable:
    return AirlineTable.builtin()


def _callsign(tokens, grammar):
    spans = tag_entities(tokens, grammar).spans("callsign")
    return tuple(tokens[spans[0].start : spans[0].end]) if spans else None


def test_same_seed_same_corpus():
    spec = SynthSpec(seed=5, utterances=30, dialogues=5)
    a, b = generate_corpus(spec), generate_corpus(spec)
    assert a.records == b.records
    assert a.references == b.references
    assert a.dialogues == b.dialogues
    assert generate_corpus(spec.model_copy(update={"seed": 6})).records != a.records


def test_noiseless_lattices_are_the_references():
    corpus = generate_corpus(SynthSpec(seed=5, utterances=50, noise=0.0))
    for record, ref in zip(corpus.records, corpus.references):
        assert len(record.lattice.arcs) == len(ref.transcript.tokens)
        words, _ = best_path(record.lattice)
        assert tuple(words) == ref.transcript.tokens


def test_corpus_shape():
    corpus = generate_corpus(SynthSpec(seed=8, utterances=100, context_size=4))
    for record, ref in zip(corpus.records, corpus.references):
        assert record.id == ref.id
        assert record.speech_len <= record.audio_len
        assert ref.callsign in record.context
        assert len(record.context) == 4
        others = [c for c in record.context if c != ref.callsign]
        assert all(c[:3] != ref.callsign[:3] for c in others)
        assert ref.transcript.turns[0].role == ref.role == corpus.roles[ref.id]
    for d in corpus.dialogues:
        assert [t.role for t in d.turns] == ["ATCO", "PILOT"]
        assert d.turns[-1].end == len(d.tokens)


def test_write_and_read_back(tmp_path):
    corpus = generate_corpus(SynthSpec(seed=9, utterances=20, dialogues=3))
    paths = write_corpus(corpus, tmp_path / "synth")
    assert set(paths) == {"records", "context", "gt_context", "references", "dialogues"}
    assert read_records(paths["records"]) == list(corpus.records)
    assert read_references(paths["references"]) == list(corpus.references)
    assert read_dialogues(paths["dialogues"]) == list(corpus.dialogues)
    gt = read_context_csv(paths["gt_context"])
    assert {uid: ctx.callsigns for uid, ctx in gt.items()} == {
        uid: (code,) for uid, code in corpus.codes.items()
    }


def test_bad_reference_line(tmp_path):
    path = tmp_path / "references.jsonl"
    path.write_text('{"id": "a"}\n')
    with pytest.raises(SynthError, match="references.jsonl:1"):
        read_references(path)


@pytest.mark.parametrize("field", [{"utterances": 0}, {"noise": 1.5}, {"colour": "red"}])
def test_spec_validation(field):
    with pytest.raises(ValueError):
        SynthSpec(**field)


def test_spec_file(tmp_path):
    path = tmp_path / "synth.json"
    path.write_text('{"seed": 3, "utterances": 10}')
    assert SynthSpec.from_json(path).utterances == 10
    path.write_text('{"seed": "three"}')
    with pytest.raises(SynthError):
        SynthSpec.from_json(path)


def test_boosting_direction(table):
    corpus = generate_corpus(SynthSpec(seed=42, noise=0.3, utterances=200))
    grammar = PhraseologyGrammar.builtin(table)
    refs = [r.transcript for r in corpus.references]
    codes = [r.callsign for r in corpus.references]

    hyps: dict[str, list[list[str]]] = {"baseline": [], "ngram": [], "gt": []}
    for record, code in zip(corpus.records, codes):
        hyps["baseline"].append(best_path(record.lattice)[0])
        for name, callsigns in (("ngram", record.context), ("gt", (code,))):
            fst = build_biasing_fst(context_sequences(callsigns, table, "ngram"))
            hyps[name].append(best_path(compose_bias(record.lattice, fst))[0])

    wer = {name: entity_wer(refs, h) for name, h in hyps.items()}
    acc = {
        name: callsign_accuracy(codes, [_callsign(t, grammar) for t in h], table)
        for name, h in hyps.items()
    }
    assert wer["gt"] <= wer["ngram"] <= wer["baseline"]
    assert acc["gt"] >= acc["ngram"] >= acc["baseline"]
    assert acc["gt"] - acc["baseline"] >= 0.05


def test_training_corpus_labels():
    refs = generate_corpus(SynthSpec(seed=12, utterances=80, dialogues=0)).references
    languages = training_corpus("eld", refs)
    assert [label for _, label in languages] == [int(r.english) for r in refs]
    roles = training_corpus("role", refs)
    assert [label for _, label in roles] == [int(r.role == "ATCO") for r in refs if r.english]
    with pytest.raises(SynthError):
        training_corpus("speaker", refs)


def test_bootstrap_model_tells_the_languages_apart():
    model = bootstrap_model("eld", SynthSpec(seed=4, utterances=150, dialogues=0))
    assert model.kind == "eld"
    english = eld.score(model, eld.hard_counts(["descend", "flight", "level"]))
    foreign = eld.score(model, eld.hard_counts(["dobry", "den", "prosim"]))
    assert english > foreign
