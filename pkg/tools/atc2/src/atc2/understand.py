"""Phraseology understanding over normalized transcripts.

A deterministic grammar stands in for a trained tagger: callsigns are an
airline telephony name followed by spelled characters (or a spelled
registration), commands come from a lexicon, values from keyword templates.
On top of the tags sit speaker-role detection (the linear text classifier
from `eld`, trained on role labels) and a rule-based text diarizer that cuts
concatenated transmissions into controller and pilot turns.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import orjson

from . import eld
from .model import AnnotatedTranscript, ContextList, Entity, Turn
from .textnorm import (
    DIGIT_SET,
    ICAO_WORDS,
    TOKEN_RE,
    AirlineTable,
    closed_vocabulary,
    expand_callsign,
    is_callsign_code,
    unspell,
)

logger = logging.getLogger(__name__)

GRAMMAR_KEYS = frozenset({"commands", "value_templates", "greetings", "readbacks"})
CONTEXT_MATCH_THRESHOLD = 0.8
MIN_REGISTRATION_LEN = 4
NUMBER_WORDS = DIGIT_SET | {"hundred", "thousand"}
CALLSIGN_CHARS = DIGIT_SET | ICAO_WORDS

# Conflict priority when spans overlap: lower wins.
_CONTEXT, _CALLSIGN, _VALUE, _COMMAND = range(4)


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class _Slot:
    kind: str  # "word", "digits", "letter", "choice"
    options: frozenset[str] = frozenset()
    optional: bool = False

    def accepts(self, token: str) -> bool:
        if self.kind == "digits":
            return token in NUMBER_WORDS
        if self.kind == "letter":
            return token in ICAO_WORDS
        return token in self.options


@dataclass(frozen=True)
class ValueTemplate:
    """`runway <digits> <left|right|center>?` as a token matcher."""

    source: str
    slots: tuple[_Slot, ...]

    @classmethod
    def parse(cls, source: str) -> ValueTemplate:
        slots = []
        for raw in source.split():
            optional = raw.endswith("?")
            item = raw[:-1] if optional else raw
            if item == "<digits>":
                slots.append(_Slot("digits", optional=optional))
            elif item == "<letter>":
                slots.append(_Slot("letter", optional=optional))
            elif item.startswith("<") and item.endswith(">"):
                options = item[1:-1].split("|")
                if not all(TOKEN_RE.fullmatch(o) for o in options):
                    raise GrammarError(f"template {source!r}: bad alternatives {item}")
                slots.append(_Slot("choice", frozenset(options), optional))
            elif TOKEN_RE.fullmatch(item):
                slots.append(_Slot("word", frozenset({item}), optional))
            else:
                raise GrammarError(f"template {source!r}: cannot read {raw!r}")
        if not slots or all(s.optional for s in slots):
            raise GrammarError(f"template {source!r} matches nothing")
        return cls(source, tuple(slots))

    def match(self, tokens: Sequence[str], start: int) -> int | None:
        """End of the longest match beginning at `start`, or None."""
        ends = self._ends(tokens, start, 0)
        return max(ends) if ends else None

    def _ends(self, tokens: Sequence[str], pos: int, k: int) -> set[int]:
        if k == len(self.slots):
            return {pos}
        slot = self.slots[k]
        out: set[int] = set()
        if slot.optional:
            out |= self._ends(tokens, pos, k + 1)
        if slot.kind == "digits":
            j = pos
            while j < len(tokens) and slot.accepts(tokens[j]):
                j += 1
                out |= self._ends(tokens, j, k + 1)
        elif pos < len(tokens) and slot.accepts(tokens[pos]):
            out |= self._ends(tokens, pos + 1, k + 1)
        return out


@dataclass(frozen=True)
class PhraseologyGrammar:
    commands: tuple[tuple[str, ...], ...]
    value_templates: tuple[ValueTemplate, ...]
    greetings: tuple[tuple[str, ...], ...]
    airlines: AirlineTable
    readbacks: frozenset[str] = frozenset()
    _vocabulary: frozenset[str] = field(default=frozenset(), init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_vocabulary", closed_vocabulary(self.airlines))

    @classmethod
    def parse(
        cls, data: Mapping[str, Any], airlines: AirlineTable, source: str = "<grammar>"
    ) -> PhraseologyGrammar:
        if not isinstance(data, Mapping):
            raise GrammarError(f"{source}: grammar must be a JSON object")
        unknown = set(data) - GRAMMAR_KEYS
        if unknown:
            raise GrammarError(f"{source}: unknown keys {sorted(unknown)}")

        def phrases(key: str) -> tuple[tuple[str, ...], ...]:
            out = []
            for raw in data.get(key, []):
                tokens = tuple(str(raw).split())
                if not tokens:
                    raise GrammarError(f"{source}: empty pattern in {key}")
                bad = [t for t in tokens if not TOKEN_RE.fullmatch(t)]
                if bad:
                    raise GrammarError(f"{source}: {key} pattern {raw!r} is not normalized")
                out.append(tokens)
            return tuple(out)

        commands = phrases("commands")
        if not commands:
            raise GrammarError(f"{source}: no commands")
        return cls(
            commands=commands,
            value_templates=tuple(ValueTemplate.parse(t) for t in data.get("value_templates", [])),
            greetings=phrases("greetings"),
            airlines=airlines,
            readbacks=frozenset(" ".join(p) for p in phrases("readbacks")),
        )

    @classmethod
    def from_json(cls, path: Path, airlines: AirlineTable) -> PhraseologyGrammar:
        try:
            data = orjson.loads(path.read_bytes())
        except (OSError, orjson.JSONDecodeError) as exc:
            raise GrammarError(f"could not load grammar {path}: {exc}") from exc
        return cls.parse(data, airlines, str(path))

    @classmethod
    def builtin(cls, airlines: AirlineTable | None = None) -> PhraseologyGrammar:
        raw = resources.files("atc2").joinpath("data/grammar.json").read_bytes()
        return cls.parse(orjson.loads(raw), airlines or AirlineTable.builtin(), "grammar.json")

    @property
    def callsign_vocabulary(self) -> frozenset[str]:
        return self._vocabulary

    def is_readback(self, command: Sequence[str]) -> bool:
        return command[0].endswith("ing") or " ".join(command) in self.readbacks

    def imperatives(self) -> list[tuple[str, ...]]:
        return [c for c in self.commands if not self.is_readback(c)]


def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _context_candidates(
    tokens: Sequence[str], grammar: PhraseologyGrammar, context: ContextList
) -> list[tuple[int, int, int]]:
    """Best window per context expansion, anchored on its first token.

    A window stays inside callsign vocabulary and is accepted at an LCS overlap
    of at least 0.8 against the expansion.
    """
    vocab = grammar.callsign_vocabulary
    out = []
    for code in context.callsigns:
        for v in expand_callsign(code, grammar.airlines):
            expansion = v.tokens
            for i, tok in enumerate(tokens):
                if tok != expansion[0]:
                    continue
                best: tuple[float, int] | None = None
                j = i
                limit = min(len(tokens), i + len(expansion) + 2)
                while j < limit and tokens[j] in vocab:
                    j += 1
                    window = tokens[i:j]
                    overlap = _lcs(window, expansion) / max(len(window), len(expansion))
                    if overlap >= CONTEXT_MATCH_THRESHOLD and (
                        best is None or (overlap, j) > best
                    ):
                        best = (overlap, j)
                if best is not None:
                    out.append((_CONTEXT, i, best[1]))
    return out


def _callsign_candidates(
    tokens: Sequence[str], grammar: PhraseologyGrammar
) -> list[tuple[int, int, int]]:
    out = []
    names = grammar.airlines.telephony_names()
    n = len(tokens)
    for i in range(n):
        for name in names:
            if tuple(tokens[i : i + len(name)]) == name:
                j = i + len(name)
                while j < n and tokens[j] in CALLSIGN_CHARS:
                    j += 1
                if j > i + len(name):
                    out.append((_CALLSIGN, i, j))
                break
        starts_run = i == 0 or tokens[i - 1] not in CALLSIGN_CHARS
        if starts_run and tokens[i] in ICAO_WORDS:
            j = i
            while j < n and tokens[j] in CALLSIGN_CHARS:
                j += 1
            if j - i >= MIN_REGISTRATION_LEN:
                out.append((_CALLSIGN, i, j))
    return out


def _lexicon_candidates(
    tokens: Sequence[str], patterns: Iterable[tuple[str, ...]], priority: int
) -> list[tuple[int, int, int]]:
    ordered = sorted(patterns, key=len, reverse=True)
    out = []
    for i in range(len(tokens)):
        for p in ordered:
            if tuple(tokens[i : i + len(p)]) == p:
                out.append((priority, i, i + len(p)))
                break
    return out


def _value_candidates(
    tokens: Sequence[str], grammar: PhraseologyGrammar
) -> list[tuple[int, int, int]]:
    out = []
    for i in range(len(tokens)):
        ends = [e for t in grammar.value_templates if (e := t.match(tokens, i)) is not None]
        if ends and max(ends) > i:
            out.append((_VALUE, i, max(ends)))
    return out


_LABEL_OF = {_CONTEXT: "callsign", _CALLSIGN: "callsign", _VALUE: "value", _COMMAND: "command"}


def tag_entities(
    tokens: Sequence[str],
    grammar: PhraseologyGrammar,
    context: ContextList | None = None,
) -> AnnotatedTranscript:
    """Callsign, command and value spans; everything else is UNK.

    Overlaps resolve callsign (context matches first) > value > command, then
    leftmost, then longest.
    """
    tokens = tuple(tokens)
    candidates = _callsign_candidates(tokens, grammar)
    candidates += _value_candidates(tokens, grammar)
    candidates += _lexicon_candidates(tokens, grammar.commands, _COMMAND)
    if context is not None and context.callsigns:
        candidates += _context_candidates(tokens, grammar, context)

    taken = [False] * len(tokens)
    entities = []
    for priority, start, end in sorted(candidates, key=lambda c: (c[0], c[1], c[1] - c[2])):
        if any(taken[start:end]):
            continue
        for k in range(start, end):
            taken[k] = True
        entities.append(Entity(_LABEL_OF[priority], start, end))
    return AnnotatedTranscript(tokens, tuple(entities))


def extract_callsign(
    tokens: Sequence[str], airlines: AirlineTable, context: ContextList | None = None
) -> str | None:
    """ICAO code for a tagged callsign span, e.g. lufthansa seven seven romeo mike -> DLH77RM.

    A context code whose spoken forms overlap the span as closely as the tagger
    requires wins, the earlier code on ties. Otherwise the span is read back
    literally: a telephony name and spelled characters, or spelled characters
    alone. None when neither reading gives a callsign code.
    """
    tokens = tuple(tokens)
    if not tokens:
        return None
    if context is not None:
        best: tuple[float, str] | None = None
        for code in context.callsigns:
            for v in expand_callsign(code, airlines):
                overlap = _lcs(tokens, v.tokens) / max(len(tokens), len(v.tokens))
                if overlap >= CONTEXT_MATCH_THRESHOLD and (best is None or overlap > best[0]):
                    best = (overlap, code)
        if best is not None:
            return best[1]
    for k in range(len(tokens) - 1, 0, -1):
        designator = airlines.lookup(tokens[:k])
        if designator is not None and all(t in CALLSIGN_CHARS for t in tokens[k:]):
            code = designator + unspell(tokens[k:])
            return code if is_callsign_code(code) else None
    if all(t in CALLSIGN_CHARS for t in tokens):
        code = unspell(tokens)
        return code if is_callsign_code(code) else None
    return None


def detect_role(tokens: Sequence[str], model: eld.LinearTextModel) -> tuple[str, float]:
    """ATCO or PILOT, with the probability of the chosen role. Label 1 is ATCO."""
    p = eld.score(model, eld.hard_counts(tokens))
    return ("ATCO", p) if eld.decide(p) else ("PILOT", 1.0 - p)


def role_corpus(
    samples: Iterable[tuple[Sequence[str], str]],
) -> list[tuple[eld.SoftCountVector, int]]:
    return [(eld.hard_counts(tokens), int(role == "ATCO")) for tokens, role in samples]


@dataclass
class _OpenTurn:
    start: int
    mood: str | None = None  # "imperative" | "readback"
    has_callsign: bool = False
    trailing_callsign: bool = False
    last: str | None = None
    closed_at: int | None = None


def _rule_role(turn: _OpenTurn) -> str:
    if turn.mood == "readback":
        return "PILOT"
    if turn.mood == "imperative":
        return "ATCO"
    return "PILOT" if turn.trailing_callsign else "ATCO"


def diarize_text(
    tokens: Sequence[str],
    grammar: PhraseologyGrammar,
    role_model: eld.LinearTextModel | None = None,
) -> list[Turn]:
    """Cut concatenated transmissions into speaker turns.

    A new turn starts before a command whose mood (imperative or read-back)
    differs from the current turn's, and before a callsign that follows a
    command, value or greeting when the turn already names one. A turn without
    a callsign takes such a trailing callsign and ends with it.
    """
    tokens = tuple(tokens)
    if not tokens:
        return []
    tagged = tag_entities(tokens, grammar)
    events = [(e.start, e.end, e.label, tokens[e.start : e.end]) for e in tagged.entities]
    for s, e, _ in _lexicon_candidates(tokens, grammar.greetings, _COMMAND):
        if not any(tagged_e.start < e and s < tagged_e.end for tagged_e in tagged.entities):
            events.append((s, e, "greeting", tokens[s:e]))
    events.sort()

    finished: list[_OpenTurn] = []
    bounds: list[int] = []
    turn = _OpenTurn(0)

    def split(at: int) -> _OpenTurn:
        finished.append(turn)
        bounds.append(at)
        return _OpenTurn(at)

    for start, end, kind, words in events:
        if start < (bounds[-1] if bounds else 0):
            continue
        if turn.closed_at is not None:
            turn = split(turn.closed_at)
        if kind == "command":
            mood = "readback" if grammar.is_readback(words) else "imperative"
            if turn.mood is not None and turn.mood != mood:
                turn = split(start)
            turn.mood = mood
        elif kind == "callsign":
            if not turn.has_callsign:
                if turn.mood is not None:
                    turn.trailing_callsign = True
                    turn.closed_at = end
                turn.has_callsign = True
            elif turn.last in ("command", "value", "greeting"):
                turn = split(start)
                turn.has_callsign = True
        turn.last = kind
    finished.append(turn)

    edges = [0, *bounds, len(tokens)]
    out = []
    for t, lo, hi in zip(finished, edges, edges[1:]):
        role = _rule_role(t)
        if role_model is not None:
            try:
                role, _ = detect_role(tokens[lo:hi], role_model)
            except eld.EmptyEvidence:
                logger.debug("no role evidence in turn [%d, %d); using rules", lo, hi)
        out.append(Turn(role, lo, hi))
    return out


def understand(
    tokens: Sequence[str],
    grammar: PhraseologyGrammar,
    context: ContextList | None = None,
    role_model: eld.LinearTextModel | None = None,
) -> AnnotatedTranscript:
    """Entities plus turns in one annotation."""
    tagged = tag_entities(tokens, grammar, context)
    turns = diarize_text(tokens, grammar, role_model)
    return AnnotatedTranscript(tagged.tokens, tagged.entities, tuple(turns))
