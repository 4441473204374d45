"""The operations a pipeline block can be bound to.

Each block reads and replaces `JobState.record` and may leave intermediate
results (audio samples, the biasing FST, the decoded lattice) on the state for
later blocks. A block that finds nothing to work on raises BlockRejected with
a reason code; anything else it raises is an internal failure.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import eld, lattice, signal, understand
from ..eld import LinearTextModel
from ..lattice import BiasingFst, Lattice
from ..model import AnnotatedTranscript, ContextList, SegmentRecord, parse_tagged, render_tagged
from ..quality import quality_score
from ..textnorm import AirlineTable, context_sequences
from ..understand import PhraseologyGrammar
from .config import JobSettings, PipelineError

logger = logging.getLogger(__name__)


class BlockRejected(PipelineError):
    def __init__(self, reason: str, message: str) -> None:
        super().__init__(message)
        self.reason = reason


@dataclass(frozen=True)
class Resources:
    """Shared read-only inputs for every job of a run."""

    airlines: AirlineTable
    grammar: PhraseologyGrammar
    eld_model: LinearTextModel | None = None
    role_model: LinearTextModel | None = None
    contexts: Mapping[str, ContextList] = field(default_factory=dict)
    discount: float = lattice.DEFAULT_DISCOUNT
    boost_mode: str = "ngram"
    audio_root: Path | None = None

    @classmethod
    def builtin(cls, **overrides: Any) -> Resources:
        airlines = overrides.pop("airlines", None) or AirlineTable.builtin()
        grammar = overrides.pop("grammar", None) or PhraseologyGrammar.builtin(airlines)
        return cls(airlines=airlines, grammar=grammar, **overrides)


@dataclass
class JobState:
    record: SegmentRecord
    settings: JobSettings
    resources: Resources
    samples: np.ndarray | None = None
    sample_rate: int = signal.SAMPLE_RATE
    segments: list[signal.VadSegment] | None = None
    context: ContextList | None = None
    fst: BiasingFst | None = None
    decoded: Lattice | None = None
    tagged: AnnotatedTranscript | None = None


BlockFn = Callable[[JobState, Mapping[str, Any]], None]


@dataclass(frozen=True)
class Block:
    fn: BlockFn
    params: frozenset[str] = frozenset()

    def __call__(self, state: JobState, params: Mapping[str, Any]) -> None:
        self.fn(state, params)


def _load_audio(state: JobState) -> bool:
    """Samples for the record's audio, if the settings and record provide any."""
    fmt = state.settings.audio_format
    if state.samples is not None:
        return True
    if fmt == "none" or not state.record.audio:
        return False
    path = Path(state.record.audio)
    if not path.is_absolute() and state.resources.audio_root is not None:
        path = state.resources.audio_root / path
    if fmt == "wav":
        state.samples, state.sample_rate = signal.read_wav(path)
    else:
        try:
            raw = np.fromfile(path, dtype="<i2")
        except OSError as exc:
            raise signal.SignalError(f"could not read {path}: {exc}") from exc
        state.samples, state.sample_rate = raw.astype(np.float64) / 32768.0, signal.SAMPLE_RATE
    return True


def run_vad(state: JobState, params: Mapping[str, Any]) -> None:
    r = state.record
    if _load_audio(state):
        try:
            segments = signal.vad(
                state.samples,
                frame_ms=params.get("frame_ms", signal.DEFAULT_FRAME_MS),
                threshold_db=params.get("threshold_db", signal.DEFAULT_THRESHOLD_DB),
                sample_rate=state.sample_rate,
            )
        except signal.EmptyAudio as exc:
            raise BlockRejected("NO_SPEECH", f"{r.id}: {exc}") from exc
        state.segments = segments
        audio_len = state.samples.size / state.sample_rate
        speech = min(signal.speech_length(segments), audio_len)
        state.record = r.evolve(audio_len=audio_len, speech_len=speech)
    if state.record.speech_len <= 0:
        raise BlockRejected("NO_SPEECH", f"{r.id}: no speech found")


def run_snr(state: JobState, params: Mapping[str, Any]) -> None:
    if _load_audio(state):
        segments = state.segments
        if segments is None:
            segments = signal.vad(state.samples, sample_rate=state.sample_rate)
        snr = signal.estimate_snr(state.samples, segments, state.sample_rate)
        state.record = state.record.evolve(avg_snr=snr)
    elif state.record.avg_snr is None:
        raise PipelineError(f"{state.record.id}: no audio and no avg_snr")


def run_expand(state: JobState, params: Mapping[str, Any]) -> None:
    """Context callsigns -> biasing FST. A record without context decodes unbiased."""
    r = state.record
    res = state.resources
    ctx = res.contexts.get(r.id)
    if ctx is not None and not ctx.covers(r.captured_at):
        logger.info("%s: context list does not cover %s; ignored", r.id, r.captured_at)
        ctx = None
    if ctx is None and r.context:
        ctx = ContextList(r.context)
    if ctx is None or not ctx.callsigns:
        return
    state.context = ctx
    mode = params.get("mode", res.boost_mode)
    sequences = context_sequences(ctx.callsigns, res.airlines, mode)
    state.fst = lattice.build_biasing_fst(sequences, params.get("discount", res.discount))
    state.record = r.evolve(context=ctx.callsigns)


def run_decode(state: JobState, params: Mapping[str, Any]) -> None:
    r = state.record
    if r.lattice is None:
        raise BlockRejected("NO_HYPOTHESIS", f"{r.id}: no lattice")
    decoded = r.lattice if state.fst is None else lattice.compose_bias(r.lattice, state.fst)
    if not decoded.finals:
        raise BlockRejected("NO_HYPOTHESIS", f"{r.id}: lattice has no complete path")
    state.decoded = decoded


def run_confidence(state: JobState, params: Mapping[str, Any]) -> None:
    r = state.record
    if state.decoded is None:
        raise PipelineError(f"{r.id}: confidence needs a decoded lattice")
    try:
        words, confs, avg = lattice.best_path_confidences(state.decoded)
    except lattice.NoPath as exc:
        raise BlockRejected("NO_HYPOTHESIS", f"{r.id}: {exc}") from exc
    if not words:
        raise BlockRejected("NO_HYPOTHESIS", f"{r.id}: empty best path")
    state.record = r.evolve(transcript=list(zip(words, confs)), avg_word_conf=avg)


def run_eld(state: JobState, params: Mapping[str, Any]) -> None:
    r = state.record
    model = state.resources.eld_model
    if model is None:
        raise PipelineError("no language detection model loaded")
    try:
        p = eld.score(model, eld.soft_counts(r.transcript or ()))
    except eld.EmptyEvidence as exc:
        raise BlockRejected("NO_EVIDENCE", f"{r.id}: {exc}") from exc
    state.record = r.evolve(eld_score=p)


def run_ner(state: JobState, params: Mapping[str, Any]) -> None:
    r = state.record
    state.tagged = understand.tag_entities(r.words, state.resources.grammar, state.context)
    state.record = r.evolve(tagged=render_tagged(state.tagged))


def run_extract(state: JobState, params: Mapping[str, Any]) -> None:
    """ICAO code of the first tagged callsign; None when nothing reads back as one."""
    r = state.record
    res = state.resources
    context = state.context or (ContextList(r.context) if r.context else None)
    tagged = state.tagged
    if tagged is None:
        if r.tagged is not None:
            tagged = parse_tagged(r.tagged)
        else:
            tagged = understand.tag_entities(r.words, res.grammar, context)
    spans = tagged.spans("callsign")
    code = None
    if spans:
        code = understand.extract_callsign(tagged.words(spans[0]), res.airlines, context)
    if code is None:
        logger.debug("%s: no callsign code extracted", r.id)
    state.record = r.evolve(callsign=code)


def run_diarize(state: JobState, params: Mapping[str, Any]) -> None:
    r = state.record
    res = state.resources
    words = r.words
    turns = understand.diarize_text(words, res.grammar, res.role_model)
    if res.role_model is not None:
        try:
            role, _ = understand.detect_role(words, res.role_model)
        except eld.EmptyEvidence:
            role = _majority_role(turns)
    else:
        role = _majority_role(turns)
    state.record = r.evolve(
        turns=[tuple(t) for t in turns],
        role=role,
        num_spk=max(1, len({t.role for t in turns})),
    )


def _majority_role(turns: list[Any]) -> str | None:
    if not turns:
        return None
    weight: dict[str, int] = {}
    for t in turns:
        weight[t.role] = weight.get(t.role, 0) + t.end - t.start
    return max(weight, key=lambda role: (weight[role], role == turns[0].role))


def run_quality(state: JobState, params: Mapping[str, Any]) -> None:
    state.record = state.record.evolve(quality_score=quality_score(state.record).total)


REGISTRY: dict[str, Block] = {
    "vad": Block(run_vad, frozenset({"frame_ms", "threshold_db"})),
    "snr": Block(run_snr),
    "expand": Block(run_expand, frozenset({"discount", "mode"})),
    "decode": Block(run_decode),
    "confidence": Block(run_confidence),
    "eld": Block(run_eld),
    "ner": Block(run_ner),
    "extract": Block(run_extract),
    "diarize": Block(run_diarize),
    "quality": Block(run_quality),
}
