"""Synthetic ATC corpus with known answers.

Utterances are sampled from the phraseology: a controller says
"callsign command value", a pilot reads back "command-ing value callsign".
A fraction is non-English (a callsign inside Czech-like filler). Each utterance
gets a sausage lattice: the reference path, plus at noisy positions a cheaper
confusable alternative, so the best path is wrong exactly where noise struck.

Everything is drawn from one `random.Random(seed)`; two runs with the same spec
write byte-identical files.
"""

from __future__ import annotations

import datetime as dt
import logging
import random
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import eld, understand
from .lattice import Arc, Lattice
from .model import (
    AnnotatedTranscript,
    Entity,
    SegmentRecord,
    Turn,
    parse_tagged,
    render_tagged,
    write_context_csv,
    write_records,
)
from .textnorm import DIGIT_WORDS, ICAO_ALPHABET, ICAO_WORDS, AirlineTable, expand_callsign

logger = logging.getLogger(__name__)

START = dt.datetime(2026, 3, 2, 6, 0, tzinfo=dt.timezone.utc)
AIRPORT = "LKPR"
FREQUENCY_HZ = 119_705_000

# imperative -> (read-back, value kind)
COMMANDS: dict[tuple[str, ...], tuple[tuple[str, ...], str]] = {
    ("descend",): (("descending",), "level"),
    ("climb",): (("climbing",), "level"),
    ("maintain",): (("maintaining",), "level"),
    ("turn", "left"): (("turning", "left"), "heading"),
    ("turn", "right"): (("turning", "right"), "heading"),
    ("contact", "tower"): (("contacting", "tower"), "frequency"),
    ("contact", "radar"): (("contacting", "radar"), "frequency"),
    ("reduce", "speed"): (("reducing", "speed"), "speed"),
    ("hold", "short"): (("holding", "short"), "runway"),
    ("line", "up", "and", "wait"): (("lining", "up", "and", "waiting"), "runway"),
}
FOREIGN_WORDS = (
    "dobry", "den", "klesejte", "stoupejte", "hladina", "letova", "kontaktujte",
    "vez", "na", "shledanou", "dekuji", "prosim", "drahu", "vlevo", "vpravo",
    "udrzujte", "rychlost", "sto", "dvacet", "tri", "pristani", "povoleno",
)
CONFUSIONS = {
    "descend": "descent", "descending": "ascending", "climb": "time", "climbing": "climbed",
    "maintain": "maintained", "maintaining": "remaining", "turn": "return", "turning": "turned",
    "left": "lift", "right": "write", "contact": "contract", "contacting": "contracting",
    "tower": "power", "radar": "rader", "reduce": "produce", "reducing": "producing",
    "speed": "seed", "hold": "old", "holding": "folding", "short": "sort",
    "line": "nine", "lining": "lying", "wait": "weight", "waiting": "weighting",
    "up": "cup", "and": "an", "flight": "fight", "level": "lever", "heading": "heeding",
    "decimal": "decibel", "knots": "nots", "runway": "runaway", "wilco": "will",
}


class SynthError(ValueError):
    pass


class SynthSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    utterances: int = Field(default=200, ge=1)
    non_english: float = Field(default=0.1, ge=0.0, le=1.0)
    callsign_pool: int = Field(default=50, ge=1)
    noise: float = Field(default=0.3, ge=0.0, le=1.0)
    seed: int = 42
    context_size: int = Field(default=5, ge=1)
    dialogues: int = Field(default=50, ge=0)

    @classmethod
    def from_json(cls, path: Path) -> SynthSpec:
        try:
            return cls.model_validate(orjson.loads(path.read_bytes()))
        except (OSError, orjson.JSONDecodeError, ValidationError) as exc:
            raise SynthError(f"could not load synth spec {path}: {exc}") from exc


@dataclass(frozen=True)
class Reference:
    id: str
    transcript: AnnotatedTranscript
    role: str
    callsign: str
    english: bool

    def as_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "tagged": render_tagged(self.transcript),
            "role": self.role,
            "callsign": self.callsign,
            "english": self.english,
            "turns": [list(t) for t in self.transcript.turns],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Reference:
        tagged = parse_tagged(data["tagged"])
        turns = tuple(Turn(r, s, e) for r, s, e in data.get("turns", ()))
        return cls(
            id=data["id"],
            transcript=AnnotatedTranscript(tagged.tokens, tagged.entities, turns),
            role=data["role"],
            callsign=data["callsign"],
            english=bool(data["english"]),
        )


@dataclass(frozen=True)
class Dialogue:
    id: str
    tokens: tuple[str, ...]
    turns: tuple[Turn, ...]


@dataclass(frozen=True)
class SynthCorpus:
    records: tuple[SegmentRecord, ...]
    references: tuple[Reference, ...]
    codes: dict[str, str] = field(default_factory=dict)
    roles: dict[str, str] = field(default_factory=dict)
    dialogues: tuple[Dialogue, ...] = ()
    contexts: dict[str, tuple[str, ...]] = field(default_factory=dict)


def _callsign_pool(rng: random.Random, table: AirlineTable, size: int) -> list[str]:
    designators = sorted(table.entries)
    letters = sorted(ICAO_ALPHABET)
    pool: list[str] = []
    attempts = 0
    while len(pool) < size:
        attempts += 1
        if attempts > size * 100:
            raise SynthError(f"could not draw {size} distinct callsigns")
        digits = "".join(rng.choice("0123456789") for _ in range(rng.randint(1, 3)))
        if digits[0] == "0":
            digits = str(rng.randint(1, 9)) + digits[1:]
        suffix = "".join(rng.choice(letters) for _ in range(rng.randint(0, 2)))
        code = rng.choice(designators) + digits + suffix
        if len(code) >= 5 and code not in pool:
            pool.append(code)
    return pool


def _digits(rng: random.Random, n: int) -> tuple[str, ...]:
    return tuple(rng.choice(DIGIT_WORDS) for _ in range(n))


def _value(rng: random.Random, kind: str) -> tuple[str, ...]:
    if kind == "level":
        return ("flight", "level", *_digits(rng, 3))
    if kind == "heading":
        return ("heading", *_digits(rng, 3))
    if kind == "frequency":
        return (*_digits(rng, 3), "decimal", *_digits(rng, rng.randint(1, 3)))
    if kind == "speed":
        return (*_digits(rng, 3), "knots")
    side = rng.choice(((), ("left",), ("right",)))
    return ("runway", *_digits(rng, 2), *side)


def _spoken_callsign(rng: random.Random, code: str, table: AirlineTable) -> tuple[str, ...]:
    """Full or shortened form; the spelled form is for the boosting set only."""
    forms = {v.kind: v.tokens for v in expand_callsign(code, table)}
    if "shortened" in forms and rng.random() < 0.3:
        return forms["shortened"]
    return forms["full"]


def _utterance(
    rng: random.Random,
    role: str,
    callsign: tuple[str, ...],
) -> tuple[tuple[str, ...], list[Entity]]:
    command = rng.choice(sorted(COMMANDS))
    readback, kind = COMMANDS[command]
    value = _value(rng, kind)
    if role == "PILOT" and rng.random() < 0.1:
        parts = [("command", ("wilco",)), ("callsign", callsign)]
    elif role == "PILOT":
        parts = [("command", readback), ("value", value), ("callsign", callsign)]
    else:
        parts = [("callsign", callsign), ("command", command), ("value", value)]
    tokens: list[str] = []
    entities = []
    for label, words in parts:
        entities.append(Entity(label, len(tokens), len(tokens) + len(words)))
        tokens.extend(words)
    return tuple(tokens), entities


def _foreign(
    rng: random.Random, callsign: tuple[str, ...]
) -> tuple[tuple[str, ...], list[Entity]]:
    filler = [rng.choice(FOREIGN_WORDS) for _ in range(rng.randint(4, 8))]
    if rng.random() < 0.5:
        return (*callsign, *filler), [Entity("callsign", 0, len(callsign))]
    n = len(filler)
    return (*filler, *callsign), [Entity("callsign", n, n + len(callsign))]


def _confusable(rng: random.Random, word: str) -> str:
    if word in DIGIT_WORDS:
        return rng.choice([d for d in DIGIT_WORDS if d != word])
    if word in ICAO_WORDS:
        return rng.choice(sorted(ICAO_WORDS - {word}))
    return CONFUSIONS.get(word, word + "s")


def _sausage(
    rng: random.Random, tokens: Sequence[str], noise: float, frozen: set[int]
) -> Lattice:
    """Reference path plus, at noisy positions outside `frozen`, a cheaper wrong arc."""
    arcs = []
    for i, word in enumerate(tokens):
        cost = round(rng.uniform(0.7, 1.5), 3)
        arcs.append(Arc(i, i + 1, word, cost))
        if noise > 0 and i not in frozen and rng.random() < noise:
            wrong = _confusable(rng, word)
            arcs.append(Arc(i, i + 1, wrong, round(cost - rng.uniform(0.1, 0.6), 3)))
    return Lattice(tuple(arcs), {len(tokens): 0.0})


def generate_corpus(spec: SynthSpec, table: AirlineTable | None = None) -> SynthCorpus:
    table = table or AirlineTable.builtin()
    rng = random.Random(spec.seed)
    pool = _callsign_pool(rng, table, spec.callsign_pool)

    records, references = [], []
    codes: dict[str, str] = {}
    roles: dict[str, str] = {}
    contexts: dict[str, tuple[str, ...]] = {}
    for i in range(spec.utterances):
        uid = f"utt{i:05d}"
        code = rng.choice(pool)
        callsign = _spoken_callsign(rng, code, table)
        role = rng.choice(("ATCO", "PILOT"))
        english = rng.random() >= spec.non_english
        if english:
            tokens, entities = _utterance(rng, role, callsign)
        else:
            tokens, entities = _foreign(rng, callsign)
        transcript = AnnotatedTranscript(tokens, tuple(entities), (Turn(role, 0, len(tokens)),))

        # The airline word is never confused, so other airlines' callsigns
        # cannot complete on a wrong path.
        airline_at = next(e.start for e in entities if e.label == "callsign")
        lat = _sausage(rng, tokens, spec.noise, {airline_at})

        others = [c for c in pool if c[:3] != code[:3]]
        distractors = rng.sample(others, min(len(others), spec.context_size - 1))
        context = sorted([code, *distractors])

        audio_len = round(rng.uniform(1.5, 9.0), 3)
        records.append(SegmentRecord(
            id=uid,
            airport_icao=AIRPORT,
            frequency_hz=FREQUENCY_HZ,
            captured_at=START + dt.timedelta(seconds=37 * i),
            audio_len=audio_len,
            speech_len=round(audio_len * rng.uniform(0.55, 0.95), 3),
            avg_snr=round(rng.uniform(2.0, 30.0), 2),
            lattice=lat,
            context=tuple(context),
        ))
        references.append(Reference(uid, transcript, role, code, english))
        codes[uid] = code
        roles[uid] = role
        contexts[uid] = tuple(context)

    dialogues = []
    for k in range(spec.dialogues):
        code = rng.choice(pool)
        callsign = _spoken_callsign(rng, code, table)
        first, _ = _utterance(rng, "ATCO", callsign)
        second = _readback_of(rng, first, callsign)
        dialogues.append(Dialogue(
            f"dlg{k:05d}",
            (*first, *second),
            (Turn("ATCO", 0, len(first)), Turn("PILOT", len(first), len(first) + len(second))),
        ))

    logger.info("generated %d utterances, %d dialogues (seed %d, noise %.2f)",
                len(records), len(dialogues), spec.seed, spec.noise)
    return SynthCorpus(
        records=tuple(records),
        references=tuple(references),
        codes=codes,
        roles=roles,
        dialogues=tuple(dialogues),
        contexts=contexts,
    )


def _readback_of(
    rng: random.Random, instruction: Sequence[str], callsign: tuple[str, ...]
) -> tuple[str, ...]:
    """Pilot read-back of a controller instruction: same value, -ing command."""
    body = tuple(instruction[len(callsign):])
    for command, (readback, _) in COMMANDS.items():
        if body[: len(command)] == command:
            value = body[len(command):]
            if rng.random() < 0.1:
                return ("wilco", *callsign)
            return (*readback, *value, *callsign)
    raise SynthError(f"no read-back for {' '.join(instruction)!r}")


def read_references(path: Path) -> list[Reference]:
    out = []
    for lineno, line in enumerate(path.read_bytes().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(Reference.from_dict(orjson.loads(line)))
        except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SynthError(f"{path}:{lineno}: {exc}") from exc
    return out


def read_dialogues(path: Path) -> list[Dialogue]:
    out = []
    for lineno, line in enumerate(path.read_bytes().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = orjson.loads(line)
            out.append(Dialogue(
                data["id"],
                tuple(data["tokens"]),
                tuple(Turn(r, s, e) for r, s, e in data["turns"]),
            ))
        except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SynthError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_corpus(corpus: SynthCorpus, out_dir: Path) -> dict[str, Path]:
    """records.jsonl, references.jsonl, dialogues.jsonl, context.csv, gt_context.csv."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": write_records(out_dir / "records.jsonl", corpus.records),
        "context": write_context_csv(out_dir / "context.csv", corpus.contexts),
        "gt_context": write_context_csv(
            out_dir / "gt_context.csv", {uid: [c] for uid, c in corpus.codes.items()}
        ),
    }
    refs = out_dir / "references.jsonl"
    with refs.open("wb") as fh:
        for r in corpus.references:
            fh.write(orjson.dumps(r.as_dict()) + b"\n")
    paths["references"] = refs
    dlg = out_dir / "dialogues.jsonl"
    with dlg.open("wb") as fh:
        for d in corpus.dialogues:
            entry = {"id": d.id, "tokens": list(d.tokens), "turns": [list(t) for t in d.turns]}
            fh.write(orjson.dumps(entry) + b"\n")
    paths["dialogues"] = dlg
    return paths


def training_corpus(
    kind: str, references: Sequence[Reference]
) -> list[tuple[eld.SoftCountVector, int]]:
    """Labelled documents: English vs not for "eld", ATCO vs pilot on English ones for "role"."""
    if kind == "eld":
        return [(eld.hard_counts(r.transcript.tokens), int(r.english)) for r in references]
    if kind == "role":
        samples = ((r.transcript.tokens, r.role) for r in references if r.english)
        return understand.role_corpus(samples)
    raise SynthError(f"no training labels for {kind!r}")


def bootstrap_model(kind: str, spec: SynthSpec | None = None) -> eld.LinearTextModel:
    """A classifier trained on a fresh synthetic corpus, for runs without a model file."""
    spec = spec or SynthSpec(dialogues=0)
    corpus = generate_corpus(spec)
    model = eld.train(kind, training_corpus(kind, corpus.references), seed=spec.seed)
    logger.info("bootstrapped %s model on %d synthetic utterances", kind, spec.utterances)
    return model
