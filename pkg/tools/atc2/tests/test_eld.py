"""English detection and the linear classifier under it."""

from __future__ import annotations

import random

import numpy as np
import pytest

from atc2 import eld
from atc2.eld import (
    EmptyCorpus,
    EmptyEvidence,
    EldError,
    LinearTextModel,
    SingleClassCorpus,
    SoftCountVector,
    hard_counts,
    soft_counts,
)
from atc2.model import TranscriptToken

SEED = 20260305
ENGLISH = (
    "descend", "flight", "level", "one", "two", "zero", "climb", "contact",
    "tower", "runway", "cleared", "land", "wind", "maintain",
)
CZECH = ("dobry", "den", "na", "shledanou", "dekuji", "prosim", "rozumim", "jo")


def _language_corpus(n: int = 200, seed: int = SEED) -> list[tuple[SoftCountVector, int]]:
    rng = random.Random(seed)
    corpus = []
    for i in range(n):
        english = i % 2 == 0
        words = ENGLISH if english else CZECH
        doc = [(rng.choice(words), rng.uniform(0.5, 1.0)) for _ in range(rng.randint(3, 6))]
        corpus.append((soft_counts(doc), int(english)))
    return corpus


@pytest.fixture(scope="module")
def language_model() -> LinearTextModel:
    return eld.train("eld", _language_corpus(), seed=7)


def test_soft_counts_accumulate():
    v = soft_counts([("seven", 0.9), ("seven", 0.5)])
    assert v.masses == {"seven": pytest.approx(1.4)}
    assert len(soft_counts([])) == 0
    assert hard_counts(["a", "b", "a"]).masses == {"a": 2.0, "b": 1.0}


def test_soft_counts_reads_transcript_tokens():
    v = soft_counts(
        [TranscriptToken(word="seven", conf=0.25), TranscriptToken(word="nine", conf=1.0)]
    )
    assert v.masses == {"seven": 0.25, "nine": 1.0}


@pytest.mark.parametrize("conf", [-0.1, 1.5])
def test_confidence_out_of_range(conf):
    with pytest.raises(EldError):
        soft_counts([("seven", conf)])


def test_idf_is_smoothed_log():
    vocab, idf = eld.fit_idf([hard_counts(["a"]), hard_counts(["a", "b"]), hard_counts(["c"])])
    assert vocab == ("a", "b", "c")
    assert idf == pytest.approx([np.log(3 / 3) + 1, np.log(3 / 2) + 1, np.log(3 / 2) + 1])


def test_language_decisions(language_model):
    english = eld.score(language_model, hard_counts("descend flight level one two zero".split()))
    czech = eld.score(language_model, hard_counts("dobry den na shledanou".split()))
    assert eld.decide(english)
    assert not eld.decide(czech)
    assert 0.0 < czech < english < 1.0


def test_held_out_accuracy(language_model):
    held_out = _language_corpus(400, seed=SEED + 100)
    assert eld.accuracy(language_model, held_out) >= 0.95


def test_separable_corpus_trains_to_full_accuracy():
    corpus = [(hard_counts(["alfa"]), 1), (hard_counts(["bravo"]), 0)] * 10
    model = eld.train("role", corpus, seed=1)
    assert eld.accuracy(model, corpus) == 1.0


def test_training_is_deterministic_per_seed():
    corpus = _language_corpus(60)
    a = eld.train("eld", corpus, seed=3, epochs=50)
    b = eld.train("eld", corpus, seed=3, epochs=50)
    c = eld.train("eld", corpus, seed=4, epochs=50)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert a.bias == b.bias
    assert not np.array_equal(a.weights, c.weights)


def test_loss_never_increases(language_model):
    losses = language_model.losses
    assert len(losses) == eld.DEFAULT_EPOCHS + 1
    assert all(later <= earlier + 1e-12 for earlier, later in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_requested_learning_rate_is_capped():
    corpus = _language_corpus(40)
    model = eld.train("eld", corpus, epochs=20, learning_rate=1e6)
    assert model.hyperparameters["learning_rate"] < 1e6
    assert all(later <= earlier + 1e-12 for earlier, later in zip(model.losses, model.losses[1:]))


@pytest.mark.parametrize(
    ("corpus", "error"),
    [
        ([], EmptyCorpus),
        ([(hard_counts(["a"]), 1), (hard_counts(["b"]), 1)], SingleClassCorpus),
        ([(SoftCountVector({"a": 0.0}), 1), (SoftCountVector({"b": 0.0}), 0)], EmptyCorpus),
        ([(hard_counts(["a"]), 2), (hard_counts(["b"]), 0)], EldError),
    ],
    ids=["empty", "one-label", "no-mass", "bad-label"],
)
def test_train_rejects(corpus, error):
    with pytest.raises(error):
        eld.train("eld", corpus)


def test_empty_evidence(language_model):
    with pytest.raises(EmptyEvidence):
        eld.score(language_model, soft_counts([]))
    with pytest.raises(EmptyEvidence):
        eld.score(language_model, soft_counts([("seven", 0.0)]))
    with pytest.raises(EmptyEvidence):
        eld.score(language_model, hard_counts(["unseen", "words"]))


def test_scaling_confidences_leaves_score_unchanged(language_model):
    rng = random.Random(SEED + 1)
    for _ in range(50):
        doc = [(rng.choice(ENGLISH + CZECH), rng.uniform(0.1, 1.0)) for _ in range(5)]
        scale = rng.uniform(0.1, 1.0)
        base = eld.score(language_model, soft_counts(doc))
        scaled = eld.score(language_model, soft_counts((w, c * scale) for w, c in doc))
        assert scaled == pytest.approx(base, rel=1e-12)


def test_out_of_vocabulary_words_are_ignored(language_model):
    rng = random.Random(SEED + 2)
    for _ in range(50):
        doc = [(rng.choice(ENGLISH + CZECH), rng.uniform(0.1, 1.0)) for _ in range(4)]
        noise = [(f"unseen{k}", rng.uniform(0.1, 1.0)) for k in range(rng.randint(1, 20))]
        base, noisy = soft_counts(doc), soft_counts(doc + noise)
        np.testing.assert_allclose(language_model.features(noisy), language_model.features(base))
        assert eld.score(language_model, noisy) == pytest.approx(eld.score(language_model, base))


def test_unknown_words_cannot_flip_a_decision():
    corpus = [(hard_counts(["roger", "climb"]), 1), (hard_counts(["dobry", "den"]), 0)]
    model = eld.train("eld", corpus)
    alone = eld.score(model, hard_counts(["roger"]))
    assert alone > eld.THRESHOLD
    noisy = hard_counts(["roger", "zzz", "qqq", "www"] * 10)
    assert eld.score(model, noisy) == pytest.approx(alone)


def test_gradient_check_on_random_models():
    rng = np.random.default_rng(SEED)
    vocab = ENGLISH + CZECH
    words = random.Random(SEED)
    worst = 0.0
    for _ in range(100):
        model = LinearTextModel(
            "eld", tuple(sorted(vocab)), rng.uniform(0.5, 3.0, len(vocab)),
            rng.normal(0.0, 1.0, len(vocab)), float(rng.normal()), 0,
        )
        doc = hard_counts(words.choice(vocab) for _ in range(words.randint(1, 6)))
        err = eld.gradient_check(model, (doc, words.randint(0, 1)))
        assert err >= 0.0
        worst = max(worst, err)
    assert worst < 1e-6


def test_zero_model_gradient_is_closed_form():
    vocab = ("alfa", "bravo")
    model = LinearTextModel("role", vocab, np.ones(2), np.zeros(2), 0.0, 0)
    doc = hard_counts(["alfa", "bravo"])
    grad_w, grad_b = eld.gradient(model, (doc, 1))
    np.testing.assert_allclose(grad_w, [-0.25, -0.25])
    assert grad_b == pytest.approx(-0.5)


def test_model_file_round_trip(tmp_path, language_model):
    path = eld.save_model(language_model, tmp_path / "models" / "eld.json")
    loaded = eld.load_model(path)
    assert loaded.vocabulary == language_model.vocabulary
    np.testing.assert_allclose(loaded.weights, language_model.weights, rtol=1e-15)
    doc = hard_counts(["cleared", "land", "den"])
    assert eld.score(loaded, doc) == pytest.approx(eld.score(language_model, doc))


@pytest.mark.parametrize(
    "content",
    [b"not json", b'{"version": 99}', b'{"version": 1, "kind": "eld"}'],
    ids=["garbage", "version", "missing-key"],
)
def test_bad_model_files(tmp_path, content):
    path = tmp_path / "m.json"
    path.write_bytes(content)
    with pytest.raises(EldError):
        eld.load_model(path)


def test_unknown_kind():
    with pytest.raises(EldError, match="kind"):
        LinearTextModel("sentiment", ("a",), [1.0], [0.0], 0.0, 0)
