"""Evaluation metrics: WER, callsign WER and accuracy, span P/R/F1, JER.

Everything is word-level. Alignments are Levenshtein with unit costs; when
several alignments tie, the backtrace prefers hit, then substitution, then
deletion, then insertion, so results are reproducible.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Any, NamedTuple

from .model import AnnotatedTranscript
from .textnorm import AirlineTable, expand_callsign


class MetricsError(ValueError):
    pass


class NoEntities(MetricsError):
    pass


class EmptySet(MetricsError):
    pass


class LengthMismatch(MetricsError):
    pass


class EmptyReference(MetricsError):
    pass


class AlignedPair(NamedTuple):
    op: str  # H, S, D or I
    ref: int | None
    hyp: int | None


@dataclass(frozen=True)
class AlignmentResult:
    substitutions: int
    insertions: int
    deletions: int
    hits: int
    pairs: tuple[AlignedPair, ...] = ()

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def ref_len(self) -> int:
        return self.substitutions + self.deletions + self.hits

    @property
    def hyp_len(self) -> int:
        return self.substitutions + self.insertions + self.hits

    def as_dict(self) -> dict[str, int]:
        return {
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "hits": self.hits,
        }


def align(ref: Sequence[str], hyp: Sequence[str]) -> AlignmentResult:
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i][j] = min(diag, dist[i - 1][j] + 1, dist[i][j - 1] + 1)

    pairs: list[AlignedPair] = []
    counts = {"H": 0, "S": 0, "D": 0, "I": 0}
    i, j = n, m
    while i or j:
        here = dist[i][j]
        if i and j and ref[i - 1] == hyp[j - 1] and dist[i - 1][j - 1] == here:
            op = "H"
        elif i and j and ref[i - 1] != hyp[j - 1] and dist[i - 1][j - 1] + 1 == here:
            op = "S"
        elif i and dist[i - 1][j] + 1 == here:
            op = "D"
        else:
            op = "I"
        if op in ("H", "S"):
            i, j = i - 1, j - 1
            pairs.append(AlignedPair(op, i, j))
        elif op == "D":
            i -= 1
            pairs.append(AlignedPair(op, i, None))
        else:
            j -= 1
            pairs.append(AlignedPair(op, None, j))
        counts[op] += 1
    pairs.reverse()
    return AlignmentResult(counts["S"], counts["I"], counts["D"], counts["H"], tuple(pairs))


def wer(ref: Sequence[str], hyp: Sequence[str]) -> tuple[AlignmentResult, float]:
    result = align(ref, hyp)
    return result, result.errors / max(1, len(ref))


def corpus_wer(
    pairs: Iterable[tuple[Sequence[str], Sequence[str]]],
) -> tuple[AlignmentResult, float]:
    """Counts summed over utterances; the rate is errors over total reference words."""
    s = i = d = h = 0
    for ref, hyp in pairs:
        r = align(ref, hyp)
        s, i, d, h = s + r.substitutions, i + r.insertions, d + r.deletions, h + r.hits
    total = AlignmentResult(s, i, d, h)
    return total, total.errors / max(1, total.ref_len)


def entity_errors(
    ref: AnnotatedTranscript, hyp: Sequence[str], label: str = "callsign"
) -> tuple[int, int]:
    """(errors, reference words) restricted to one label's reference spans.

    The alignment is the full-utterance one. Substitutions and deletions count
    at span positions; an insertion counts when it falls strictly inside a span.
    """
    span_of: dict[int, int] = {}
    for k, e in enumerate(ref.spans(label)):
        for pos in range(e.start, e.end):
            span_of[pos] = k
    result = align(ref.tokens, hyp)
    errors = 0
    last_ref = -1
    for pair in result.pairs:
        if pair.op == "I":
            inside = span_of.get(last_ref)
            if inside is not None and span_of.get(last_ref + 1) == inside:
                errors += 1
            continue
        last_ref = pair.ref
        if pair.op in ("S", "D") and pair.ref in span_of:
            errors += 1
    return errors, len(span_of)


def entity_wer(
    refs: Sequence[AnnotatedTranscript],
    hyps: Sequence[Sequence[str]],
    label: str = "callsign",
) -> float:
    if len(refs) != len(hyps):
        raise LengthMismatch(f"{len(refs)} references, {len(hyps)} hypotheses")
    errors = words = 0
    for ref, hyp in zip(refs, hyps):
        e, w = entity_errors(ref, hyp, label)
        errors, words = errors + e, words + w
    if not words:
        raise NoEntities(f"no {label} spans in the references")
    return errors / words


def callsign_accuracy(
    refs: Sequence[str | Sequence[str]],
    hyps: Sequence[Sequence[str] | None],
    table: AirlineTable,
) -> float:
    """Fraction of utterances whose hypothesis callsign is an accepted form.

    A reference given as an ICAO code accepts any of its verbalizations; a
    reference given as tokens accepts exactly those tokens.
    """
    if not refs:
        raise EmptySet("no reference callsigns")
    if len(refs) != len(hyps):
        raise LengthMismatch(f"{len(refs)} references, {len(hyps)} hypotheses")
    correct = 0
    for ref, hyp in zip(refs, hyps):
        if isinstance(ref, str):
            accepted = {v.tokens for v in expand_callsign(ref, table)}
        else:
            accepted = {tuple(ref)}
        correct += hyp is not None and tuple(hyp) in accepted
    return correct / len(refs)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if min(tp, fp, fn) < 0:
        raise MetricsError(f"negative count in tp={tp} fp={fp} fn={fn}")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def span_counts(
    ref: AnnotatedTranscript, hyp: AnnotatedTranscript, label: str
) -> tuple[int, int, int]:
    """(tp, fp, fn) under exact span matching."""
    if len(ref.tokens) != len(hyp.tokens):
        raise LengthMismatch(
            f"reference has {len(ref.tokens)} tokens, hypothesis {len(hyp.tokens)}"
        )
    r = {(e.start, e.end) for e in ref.spans(label)}
    h = {(e.start, e.end) for e in hyp.spans(label)}
    return len(r & h), len(h - r), len(r - h)


def span_prf(
    ref: AnnotatedTranscript, hyp: AnnotatedTranscript, label: str
) -> tuple[float, float, float]:
    return prf(*span_counts(ref, hyp, label))


def corpus_span_prf(
    refs: Sequence[AnnotatedTranscript], hyps: Sequence[AnnotatedTranscript], label: str
) -> tuple[float, float, float]:
    if len(refs) != len(hyps):
        raise LengthMismatch(f"{len(refs)} references, {len(hyps)} hypotheses")
    tp = fp = fn = 0
    for ref, hyp in zip(refs, hyps):
        a, b, c = span_counts(ref, hyp, label)
        tp, fp, fn = tp + a, fp + b, fn + c
    return prf(tp, fp, fn)


def _token_sets(turns: Iterable[Sequence[Any]]) -> dict[str, set[int]]:
    out: dict[str, set[int]] = {}
    for speaker, start, end in turns:
        out.setdefault(speaker, set()).update(range(start, end))
    return {k: v for k, v in out.items() if v}


def jer(ref_turns: Iterable[Sequence[Any]], hyp_turns: Iterable[Sequence[Any]]) -> float:
    """1 − mean over reference speakers of the Jaccard overlap with their cluster.

    A speaker's cluster is the one sharing the most tokens with it; ties go to
    the higher Jaccard ratio, then the earlier cluster name. Durations are
    token counts.
    """
    ref = _token_sets(ref_turns)
    if not ref:
        raise EmptyReference("reference has no speaker")
    hyp = _token_sets(hyp_turns)
    total = 0.0
    for tokens in ref.values():
        best = (0, 0.0)
        for name in sorted(hyp):
            cluster = hyp[name]
            shared = len(tokens & cluster)
            key = (shared, shared / len(tokens | cluster))
            if key > best:
                best = key
        total += best[1]
    return 1.0 - total / len(ref)


def format_alignment(ref: Sequence[str], hyp: Sequence[str], result: AlignmentResult) -> str:
    """Three aligned rows: REF, HYP, and the edit operation under each column."""
    rows: list[list[str]] = [["REF:"], ["HYP:"], ["    "]]
    for pair in result.pairs:
        r = ref[pair.ref] if pair.ref is not None else "*"
        h = hyp[pair.hyp] if pair.hyp is not None else "*"
        mark = "" if pair.op == "H" else pair.op
        width = max(len(r), len(h), len(mark))
        rows[0].append(r.ljust(width))
        rows[1].append(h.ljust(width))
        rows[2].append(mark.ljust(width))
    return "\n".join(" ".join(row).rstrip() for row in rows)


def utterance_report(
    uid: str, ref: Sequence[str], hyp: Sequence[str]
) -> dict[str, Any]:
    result, rate = wer(ref, hyp)
    return {"id": uid, "wer": rate, **result.as_dict(), "ref_len": len(ref)}
