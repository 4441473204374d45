"""Annotation-style normalization and callsign verbalization.

Everything downstream (lattices, grammar, metrics) works on the token alphabet
produced here: lowercase words, hyphen allowed, no digits. Numbers are read
digit by digit the way they are spoken on frequency.
"""

from __future__ import annotations

import csv
import io
import logging
import re
import unicodedata
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

logger = logging.getLogger(__name__)

TOKEN_RE = re.compile(r"[a-z]+(?:-[a-z]+)*")

ICAO_ALPHABET = {
    "A": "alfa", "B": "bravo", "C": "charlie", "D": "delta", "E": "echo",
    "F": "foxtrot", "G": "golf", "H": "hotel", "I": "india", "J": "juliett",
    "K": "kilo", "L": "lima", "M": "mike", "N": "november", "O": "oscar",
    "P": "papa", "Q": "quebec", "R": "romeo", "S": "sierra", "T": "tango",
    "U": "uniform", "V": "victor", "W": "whiskey", "X": "x-ray", "Y": "yankee",
    "Z": "zulu",
}
DIGIT_WORDS = (
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
)
NUMBER_EXTRAS = frozenset({"decimal", "hundred", "thousand"})
ALIASES = {"niner": "nine", "alpha": "alfa", "juliet": "juliett", "xray": "x-ray"}

ICAO_WORDS = frozenset(ICAO_ALPHABET.values())
DIGIT_SET = frozenset(DIGIT_WORDS)
_LETTER_OF = {word: letter for letter, word in ICAO_ALPHABET.items()}

# Airline-style ICAO callsign, e.g. DLH77RM.
CALLSIGN_RE = re.compile(r"[A-Z]{2,3}[A-Z0-9]+")
# Aircraft registration, e.g. OK-ABC or N123AB.
REGISTRATION_RE = re.compile(r"[A-Z0-9]{1,2}-?[A-Z0-9]{1,5}")

MODES = frozenset({"unigram", "ngram"})
KINDS = ("full", "spelled", "shortened")

_RAW_TOKEN = re.compile(r"\d+(?:\.\d+)?|[A-Za-z]+(?:-[A-Za-z]+)*")


class TextNormError(ValueError):
    pass


class UnknownDesignator(TextNormError):
    def __init__(self, code: str) -> None:
        super().__init__(f"no airline designator for {code!r}")
        self.code = code


def _fold(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return stripped.encode("ascii", "ignore").decode("ascii")


def _digits(run: str) -> list[str]:
    return [DIGIT_WORDS[int(d)] for d in run]


def normalize(text: str) -> list[str]:
    """Tokens in annotation form.

    "Descend FL 120" -> descend f l one two zero. Capitalised two- and
    three-letter abbreviations are spelled letter by letter, unless the whole
    text is shouted, in which case case carries no information.
    """
    folded = _fold(text)
    shouted = folded.upper() == folded and any(c.isalpha() for c in folded)
    out: list[str] = []
    for raw in _RAW_TOKEN.findall(folded):
        if raw[0].isdigit():
            whole, _, frac = raw.partition(".")
            out.extend(_digits(whole))
            if frac:
                out.append("decimal")
                out.extend(_digits(frac))
            continue
        if not shouted and 2 <= len(raw) <= 3 and raw.isupper() and raw.isalpha():
            out.extend(raw.lower())
            continue
        word = raw.lower()
        out.append(ALIASES.get(word, word))
    return out


def spell(chars: str) -> list[str]:
    """ICAO spelling: letters as alphabet words, digits as digit words."""
    out = []
    for ch in chars.upper():
        if ch.isdigit():
            out.append(DIGIT_WORDS[int(ch)])
        elif ch in ICAO_ALPHABET:
            out.append(ICAO_ALPHABET[ch])
        elif ch != "-":
            raise TextNormError(f"cannot spell {ch!r}")
    return out


def unspell(tokens: Iterable[str]) -> str:
    """Inverse of `spell`: alphabet and digit words back to characters."""
    out = []
    for tok in tokens:
        if tok in _LETTER_OF:
            out.append(_LETTER_OF[tok])
        elif tok in DIGIT_SET:
            out.append(str(DIGIT_WORDS.index(tok)))
        else:
            raise TextNormError(f"{tok!r} is not a spelled character")
    return "".join(out)


@dataclass(frozen=True)
class AirlineTable:
    """ICAO airline designator -> telephony tokens."""

    entries: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, value in self.entries.items():
            if not re.fullmatch(r"[A-Z]{3}", key):
                raise TextNormError(f"designator {key!r} is not three uppercase letters")
            if not value or not all(TOKEN_RE.fullmatch(t) for t in value):
                raise TextNormError(f"{key}: telephony {value!r} is not normalized")

    def __contains__(self, designator: object) -> bool:
        return designator in self.entries

    def __getitem__(self, designator: str) -> tuple[str, ...]:
        return self.entries[designator]

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, designator: str) -> tuple[str, ...] | None:
        return self.entries.get(designator)

    def telephony_names(self) -> list[tuple[str, ...]]:
        """Longest first, so a scanner tries "china southern" before "china"."""
        return sorted(set(self.entries.values()), key=lambda t: (-len(t), t))

    def lookup(self, tokens: Iterable[str]) -> str | None:
        wanted = tuple(tokens)
        for key, value in sorted(self.entries.items()):
            if value == wanted:
                return key
        return None

    def vocabulary(self) -> frozenset[str]:
        return frozenset(t for v in self.entries.values() for t in v)

    @classmethod
    def parse_csv(cls, text: str, source: str = "<airlines>") -> AirlineTable:
        entries: dict[str, tuple[str, ...]] = {}
        for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise TextNormError(f"{source}:{lineno}: expected DESIGNATOR,telephony")
            key, name = row[0].strip(), row[1].strip()
            if lineno == 1 and key.upper() == "DESIGNATOR":
                continue
            if key in entries:
                raise TextNormError(f"{source}:{lineno}: duplicate designator {key}")
            entries[key] = tuple(normalize(name))
        return cls(entries)

    @classmethod
    def from_csv(cls, path: Path) -> AirlineTable:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise TextNormError(f"could not read {path}: {exc}") from exc
        return cls.parse_csv(text, str(path))

    @classmethod
    def builtin(cls) -> AirlineTable:
        text = resources.files("atc2").joinpath("data/airlines.csv").read_text("utf-8")
        return cls.parse_csv(text, "airlines.csv")


def closed_vocabulary(table: AirlineTable) -> frozenset[str]:
    return table.vocabulary() | ICAO_WORDS | DIGIT_SET | NUMBER_EXTRAS


@dataclass(frozen=True)
class Verbalization:
    tokens: tuple[str, ...]
    kind: str
    flagged: bool = False

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def is_callsign_code(code: str) -> bool:
    return bool(CALLSIGN_RE.fullmatch(code) or REGISTRATION_RE.fullmatch(code))


def expand_callsign(
    code: str, table: AirlineTable, *, strict: bool = False
) -> list[Verbalization]:
    """Spoken forms of an ICAO callsign, in the order full, spelled, shortened.

    An airline-style code whose designator is missing from the table falls back
    to the spelled form, flagged; `strict=True` raises UnknownDesignator
    instead. Registrations (a hyphen, or letters only) are spelled and not
    flagged: they carry no designator.
    """
    code = code.strip().upper()
    if not is_callsign_code(code):
        raise TextNormError(f"{code!r} is not a callsign code")
    spelled = Verbalization(tuple(spell(code)), "spelled")

    designator, rest = code[:3], code[3:]
    airline = table.get(designator) if "-" not in code else None
    if airline is not None:
        forms = [
            Verbalization(airline + tuple(spell(rest)), "full"),
            spelled,
            Verbalization(airline + tuple(spell(rest[-2:])), "shortened"),
        ]
    elif "-" in code or code.isalpha():
        forms = [spelled]
    else:
        if strict:
            raise UnknownDesignator(code)
        logger.warning("unknown airline designator in %s; spelled form only", code)
        forms = [Verbalization(spelled.tokens, "spelled", flagged=True)]

    seen: set[tuple[str, ...]] = set()
    out = []
    for v in forms:
        if v.tokens not in seen:
            seen.add(v.tokens)
            out.append(v)
    return out


def expansions_to_ngrams(
    verbalizations: Iterable[Verbalization], mode: str
) -> list[tuple[str, ...]]:
    """Boosting sequences: single tokens (unigram) or whole forms (ngram)."""
    if mode not in MODES:
        raise TextNormError(f"mode {mode!r} not in {sorted(MODES)}")
    seen: set[tuple[str, ...]] = set()
    out: list[tuple[str, ...]] = []
    for v in verbalizations:
        candidates = [(t,) for t in v.tokens] if mode == "unigram" else [v.tokens]
        for seq in candidates:
            if seq not in seen:
                seen.add(seq)
                out.append(seq)
    return out


def context_sequences(
    codes: Iterable[str], table: AirlineTable, mode: str, *, strict: bool = False
) -> list[tuple[str, ...]]:
    verbalizations = [v for code in codes for v in expand_callsign(code, table, strict=strict)]
    return expansions_to_ngrams(verbalizations, mode)
