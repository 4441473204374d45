"""Quality score, ranking, and selection of the annotation batch.

score = ln(snr + e) + ln(speakers + e) + ln(speech/audio + e)
        + 3·eld + 3·confidence + ln(words + e)

Inputs are clamped to their ranges before scoring: snr to [0, 40] dB, speakers
to [1, 10], ratio, eld and confidence to [0, 1], words to >= 0.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, fields
from typing import Any

from .model import SegmentRecord

logger = logging.getLogger(__name__)

SNR_RANGE = (0.0, 40.0)
SPEAKER_RANGE = (1, 10)
REQUIRED_FIELDS = ("avg_snr", "num_spk", "speech_len", "eld_score", "avg_word_conf", "wrd_cnt")

# Reasons that remove a record at each funnel stage, cumulative.
FUNNEL_STAGES: tuple[tuple[str, frozenset[str]], ...] = (
    ("recorded", frozenset()),
    ("post-VAD", frozenset({"NO_SPEECH"})),
    ("post-SNR", frozenset({"TOO_NOISY"})),
    ("post-length", frozenset({"TOO_SHORT", "TOO_LONG"})),
    ("post-ELD", frozenset({"NON_ENGLISH", "NO_EVIDENCE"})),
)


class QualityError(ValueError):
    pass


class MissingField(QualityError):
    def __init__(self, record_id: str, missing: Sequence[str]) -> None:
        self.missing = tuple(missing)
        super().__init__(f"{record_id}: missing {', '.join(self.missing)}")


class ZeroAudioLen(QualityError):
    pass


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


@dataclass(frozen=True)
class QualityBreakdown:
    snr: float
    speakers: float
    speech_ratio: float
    eld: float
    confidence: float
    words: float
    total: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "total", math.fsum(self.terms()))

    def terms(self) -> tuple[float, ...]:
        return (self.snr, self.speakers, self.speech_ratio, self.eld, self.confidence, self.words)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def score_inputs(
    avg_snr: float,
    num_spk: float,
    speech_ratio: float,
    eld_score: float,
    avg_word_conf: float,
    wrd_cnt: float,
) -> QualityBreakdown:
    e = math.e
    return QualityBreakdown(
        snr=math.log(_clamp(avg_snr, *SNR_RANGE) + e),
        speakers=math.log(_clamp(num_spk, *SPEAKER_RANGE) + e),
        speech_ratio=math.log(_clamp(speech_ratio, 0.0, 1.0) + e),
        eld=3.0 * _clamp(eld_score, 0.0, 1.0),
        confidence=3.0 * _clamp(avg_word_conf, 0.0, 1.0),
        words=math.log(max(wrd_cnt, 0) + e),
    )


def quality_score(r: SegmentRecord) -> QualityBreakdown:
    missing = [name for name in REQUIRED_FIELDS if getattr(r, name) is None]
    if missing:
        raise MissingField(r.id, missing)
    if r.audio_len <= 0:
        raise ZeroAudioLen(f"{r.id}: audio_len is 0")
    return score_inputs(
        r.avg_snr,
        r.num_spk,
        r.speech_len / r.audio_len,
        r.eld_score,
        r.avg_word_conf,
        r.wrd_cnt,
    )


@dataclass(frozen=True)
class FunnelStage:
    name: str
    count: int
    hours: float


@dataclass(frozen=True)
class Selection:
    ranked: tuple[SegmentRecord, ...]
    selected: tuple[SegmentRecord, ...]
    funnel: tuple[FunnelStage, ...]

    @property
    def selected_hours(self) -> float:
        return math.fsum(r.speech_len for r in self.selected) / 3600.0


def _scored(records: Iterable[SegmentRecord]) -> list[SegmentRecord]:
    out = []
    for r in records:
        if r.quality_score is not None:
            out.append(r)
            continue
        if r.reason is not None:
            continue
        try:
            out.append(r.evolve(quality_score=quality_score(r).total))
        except QualityError as exc:
            logger.info("not ranked: %s", exc)
    return out


def funnel(
    records: Sequence[SegmentRecord], selected: Sequence[SegmentRecord]
) -> list[FunnelStage]:
    """Counts and hours left after each stage; a record drops at the stage that rejected it.

    The first stage counts recorded audio, the others count speech.
    """
    stages = []
    rejected: set[str] = set()
    for name, reasons in FUNNEL_STAGES:
        rejected |= reasons
        alive = [r for r in records if r.reason not in rejected]
        seconds = (r.audio_len if name == "recorded" else r.speech_len for r in alive)
        stages.append(FunnelStage(name, len(alive), math.fsum(seconds) / 3600.0))
    stages.append(
        FunnelStage("selected", len(selected), math.fsum(r.speech_len for r in selected) / 3600.0)
    )
    return stages


def rank_and_select(records: Sequence[SegmentRecord], top_hours: float) -> Selection:
    """Sort by score (descending, ties by id) and keep the longest prefix within budget.

    Records without a score are scored here; rejected or unscorable records are
    not ranked but still count in the funnel.
    """
    if top_hours < 0:
        raise QualityError(f"top_hours must be >= 0, got {top_hours}")
    ranked = sorted(_scored(records), key=lambda r: (-r.quality_score, r.id))
    budget = top_hours * 3600.0
    selected: list[SegmentRecord] = []
    spent = 0.0
    for r in ranked:
        if spent + r.speech_len > budget:
            break
        spent += r.speech_len
        selected.append(r)
    logger.info("selected %d of %d ranked records (%.3f h)",
                len(selected), len(ranked), spent / 3600)
    return Selection(tuple(ranked), tuple(selected), tuple(funnel(records, selected)))


def selection_report(sel: Selection) -> dict[str, Any]:
    return {
        "funnel": [{"stage": s.name, "count": s.count, "hours": s.hours} for s in sel.funnel],
        "selected": [{"id": r.id, "quality_score": r.quality_score} for r in sel.selected],
    }


def funnel_table(stages: Sequence[FunnelStage]) -> str:
    width = max(len(s.name) for s in stages)
    lines = [f"{'stage':<{width}}  {'count':>7}  {'hours':>9}"]
    for s in stages:
        lines.append(f"{s.name:<{width}}  {s.count:>7d}  {s.hours:>9.3f}")
    return "\n".join(lines)
