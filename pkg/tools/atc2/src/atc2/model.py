"""Domain types shared by every stage, and their serialized forms.

Segment records travel as JSONL, one object per line. Annotations travel as the
tagged plain-text format:

    <value> runway three four left </value> <command> cleared to land </command>

Entity and turn spans are token indices, end exclusive. Tokens outside every
entity are UNK; UNK is never stored.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import re
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Literal, NamedTuple

import orjson
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_core import core_schema

from .lattice import Lattice, format_lattice, parse_lattice
from .textnorm import TOKEN_RE, is_callsign_code

LABELS = ("callsign", "command", "value")
ROLES = ("ATCO", "PILOT")
SNR_RANGE = (0.0, 40.0)


class ModelError(ValueError):
    pass


class MalformedRecord(ModelError):
    pass


class InvariantViolation(ModelError):
    pass


class MalformedTags(ModelError):
    pass


def _coerce_lattice(v: Any) -> Lattice:
    if isinstance(v, Lattice):
        return v
    if isinstance(v, str):
        return parse_lattice(v, allow_negative=True)
    raise ValueError("lattice must be lattice text")


class _LatticeText:
    """Records carry lattices in the text format."""

    @classmethod
    def __get_pydantic_core_schema__(cls, source: Any, handler: Any) -> core_schema.CoreSchema:
        return core_schema.no_info_plain_validator_function(
            _coerce_lattice,
            serialization=core_schema.plain_serializer_function_ser_schema(
                format_lattice, return_schema=core_schema.str_schema()
            ),
        )


LatticeField = Annotated[Lattice, _LatticeText]


class TranscriptToken(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    word: str
    conf: float = Field(ge=0.0, le=1.0)

    @field_validator("word")
    @classmethod
    def _normalized(cls, v: str) -> str:
        if not TOKEN_RE.fullmatch(v):
            raise ValueError(f"word {v!r} is not normalized")
        return v


class SegmentRecord(BaseModel):
    """One ATC transmission as it moves through the pipeline."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(min_length=1)
    airport_icao: str | None = Field(default=None, pattern=r"^[A-Z]{4}$")
    frequency_hz: int | None = Field(default=None, ge=0)
    captured_at: dt.datetime | None = None
    audio: str | None = None
    audio_len: float = Field(default=0.0, ge=0.0)
    speech_len: float = Field(default=0.0, ge=0.0)
    avg_snr: float | None = None
    num_spk: int | None = Field(default=None, ge=1, le=10)
    lattice: LatticeField | None = None
    transcript: tuple[TranscriptToken, ...] | None = None
    avg_word_conf: float | None = Field(default=None, ge=0.0, le=1.0)
    wrd_cnt: int = Field(default=0, ge=0)
    eld_score: float | None = Field(default=None, ge=0.0, le=1.0)
    quality_score: float | None = None
    status: str = "new"
    reason: str | None = None
    context: tuple[str, ...] | None = None
    tagged: str | None = None
    callsign: str | None = None
    role: Literal["ATCO", "PILOT"] | None = None
    turns: tuple[tuple[Literal["ATCO", "PILOT"], int, int], ...] | None = None

    @model_validator(mode="before")
    @classmethod
    def _derive_word_count(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("transcript") is not None:
            data = {**data, "wrd_cnt": len(data["transcript"])}
        return data

    @field_validator("avg_snr")
    @classmethod
    def _clamp_snr(cls, v: float | None) -> float | None:
        if v is None:
            return None
        return min(max(v, SNR_RANGE[0]), SNR_RANGE[1])

    @field_validator("captured_at")
    @classmethod
    def _utc(cls, v: dt.datetime | None) -> dt.datetime | None:
        if v is None:
            return None
        if v.tzinfo is None:
            return v.replace(tzinfo=dt.timezone.utc)
        return v.astimezone(dt.timezone.utc)

    @field_validator("callsign")
    @classmethod
    def _callsign_code(cls, v: str | None) -> str | None:
        if v is not None and not is_callsign_code(v):
            raise ValueError(f"callsign {v!r} is not a callsign code")
        return v

    @field_validator("context")
    @classmethod
    def _codes(cls, v: tuple[str, ...] | None) -> tuple[str, ...] | None:
        if v is not None:
            for code in v:
                if not is_callsign_code(code):
                    raise ValueError(f"context code {code!r} is not a callsign")
        return v

    @model_validator(mode="after")
    def _speech_within_audio(self) -> SegmentRecord:
        if self.speech_len > self.audio_len:
            raise ValueError(
                f"speech_len {self.speech_len} exceeds audio_len {self.audio_len}"
            )
        return self

    def evolve(self, **changes: Any) -> SegmentRecord:
        """A validated copy with fields replaced."""
        data = {name: getattr(self, name) for name in type(self).model_fields}
        data.update(changes)
        if "transcript" in changes and changes["transcript"] is not None:
            data["transcript"] = tuple(
                t if isinstance(t, TranscriptToken) else TranscriptToken(word=t[0], conf=t[1])
                for t in changes["transcript"]
            )
        return type(self).model_validate(data)

    @property
    def words(self) -> list[str]:
        return [t.word for t in self.transcript or ()]


def parse_segment_record(line: str | bytes) -> SegmentRecord:
    try:
        data = orjson.loads(line)
    except orjson.JSONDecodeError as exc:
        raise MalformedRecord(f"not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedRecord("a segment record must be a JSON object")
    if not data.get("id"):
        raise MalformedRecord("missing id")
    speech, audio = data.get("speech_len", 0.0), data.get("audio_len", 0.0)
    if (
        isinstance(speech, (int, float))
        and isinstance(audio, (int, float))
        and speech > audio
    ):
        raise InvariantViolation(f"{data['id']}: speech_len {speech} exceeds audio_len {audio}")
    try:
        return SegmentRecord.model_validate(data)
    except ValidationError as exc:
        raise MalformedRecord(f"{data['id']}: {exc}") from exc


def dump_segment_record(record: SegmentRecord) -> str:
    return orjson.dumps(record.model_dump(mode="json", exclude_none=True)).decode()


def read_records(path: Path) -> list[SegmentRecord]:
    out = []
    for lineno, line in enumerate(path.read_bytes().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(parse_segment_record(line))
        except ModelError as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from exc
    return out


def write_records(path: Path, records: Iterable[SegmentRecord]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        for record in records:
            fh.write(dump_segment_record(record).encode() + b"\n")
    return path


@dataclass(frozen=True)
class ContextList:
    """Callsigns surveillance saw in the airspace during a transmission."""

    callsigns: tuple[str, ...] = ()
    valid_from: dt.datetime | None = None
    valid_to: dt.datetime | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "callsigns", tuple(self.callsigns))
        for code in self.callsigns:
            if not is_callsign_code(code):
                raise ModelError(f"context code {code!r} is not a callsign")
        if self.valid_from and self.valid_to and self.valid_from > self.valid_to:
            raise ModelError("context valid_from is after valid_to")

    def covers(self, when: dt.datetime | None) -> bool:
        if when is None:
            return True
        if self.valid_from and when < self.valid_from:
            return False
        return not (self.valid_to and when > self.valid_to)


def read_context_csv(path: Path) -> dict[str, ContextList]:
    """`id,callsign` rows, one code per row, header optional."""
    grouped: dict[str, list[str]] = {}
    text = path.read_text(encoding="utf-8")
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise ModelError(f"{path}:{lineno}: expected id,callsign")
        seg, code = row[0].strip(), row[1].strip().upper()
        if lineno == 1 and seg.lower() == "id":
            continue
        codes = grouped.setdefault(seg, [])
        if code not in codes:
            codes.append(code)
    return {seg: ContextList(tuple(codes)) for seg, codes in grouped.items()}


def write_context_csv(path: Path, contexts: dict[str, Iterable[str]]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "callsign"])
    for seg in sorted(contexts):
        for code in contexts[seg]:
            writer.writerow([seg, code])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


class Entity(NamedTuple):
    label: str
    start: int
    end: int


class Turn(NamedTuple):
    role: str
    start: int
    end: int


@dataclass(frozen=True)
class AnnotatedTranscript:
    """Tokens with entity spans and, optionally, speaker turns.

    Entity spans never overlap, whatever their labels; turns, when present,
    partition the whole token range.
    """

    tokens: tuple[str, ...]
    entities: tuple[Entity, ...] = ()
    turns: tuple[Turn, ...] = ()

    def __post_init__(self) -> None:
        tokens = tuple(self.tokens)
        entities = tuple(
            sorted((Entity(*e) for e in self.entities), key=lambda e: (e.start, e.end, e.label))
        )
        turns = tuple(sorted((Turn(*t) for t in self.turns), key=lambda t: t.start))
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "entities", entities)
        object.__setattr__(self, "turns", turns)

        for tok in tokens:
            if not TOKEN_RE.fullmatch(tok):
                raise ModelError(f"token {tok!r} is not normalized")
        n = len(tokens)
        previous_end = 0
        for e in entities:
            if e.label not in LABELS:
                raise ModelError(f"unknown entity label {e.label!r}")
            if not 0 <= e.start < e.end <= n:
                raise ModelError(f"entity {e} out of bounds for {n} tokens")
            if e.start < previous_end:
                raise ModelError(f"entity {e} overlaps the previous span")
            previous_end = e.end
        if turns:
            cursor = 0
            for t in turns:
                if t.role not in ROLES:
                    raise ModelError(f"unknown role {t.role!r}")
                if t.start != cursor or t.end <= t.start:
                    raise ModelError(f"turns do not partition the tokens at {t}")
                cursor = t.end
            if cursor != n:
                raise ModelError(f"turns end at {cursor}, tokens at {n}")

    def spans(self, label: str) -> list[Entity]:
        return [e for e in self.entities if e.label == label]

    def words(self, span: Entity | Turn) -> tuple[str, ...]:
        return self.tokens[span.start : span.end]


def render_tagged(t: AnnotatedTranscript) -> str:
    out: list[str] = []
    cursor = 0
    for e in t.entities:
        out.extend(t.tokens[cursor : e.start])
        out.append(f"<{e.label}>")
        out.extend(t.tokens[e.start : e.end])
        out.append(f"</{e.label}>")
        cursor = e.end
    out.extend(t.tokens[cursor:])
    return " ".join(out)


_TAG_LEXER = re.compile(r"\s+|<(/?)([^<>\s]*)>|[^\s<>]+|[<>]")


def parse_tagged(text: str) -> AnnotatedTranscript:
    tokens: list[str] = []
    entities: list[Entity] = []
    open_label: str | None = None
    open_at = 0
    for m in _TAG_LEXER.finditer(text):
        piece = m.group(0)
        if piece.isspace():
            continue
        if piece in ("<", ">"):
            raise MalformedTags(f"stray {piece!r} at offset {m.start()}")
        if m.group(2) is not None:
            closing, label = m.group(1) == "/", m.group(2)
            if label not in LABELS:
                raise MalformedTags(f"unknown tag <{m.group(1)}{label}>")
            if not closing:
                if open_label is not None:
                    raise MalformedTags(f"<{label}> opened inside <{open_label}>")
                open_label, open_at = label, len(tokens)
                continue
            if open_label != label:
                raise MalformedTags(f"</{label}> without a matching <{label}>")
            if open_at == len(tokens):
                raise MalformedTags(f"empty <{label}> span")
            entities.append(Entity(label, open_at, len(tokens)))
            open_label = None
            continue
        if not TOKEN_RE.fullmatch(piece):
            raise MalformedTags(f"token {piece!r} is not normalized")
        tokens.append(piece)
    if open_label is not None:
        raise MalformedTags(f"<{open_label}> is never closed")
    return AnnotatedTranscript(tuple(tokens), tuple(entities))
