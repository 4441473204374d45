"""Annotation queue lifecycle of one recording.

    New --Push--> QueuedUntouched --SaveAnnotation--> QueuedAnnotated
        --RecheckOk--> Annotated --Export--> Finished --Archive--> Deleted

Items leave the queue early as Dropped: three thumbs-down while untouched,
marked for anonymization, or left untouched past the stale age. AgeTick
deletes dropped items once they are older than the delete age. Deleted is
absorbing.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import logging
import threading
from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import orjson

from .callbacks import CallbackEvent, CallbackSink

logger = logging.getLogger(__name__)

THUMBS_TO_DROP = 3
DEFAULT_STALE = dt.timedelta(days=30)
DEFAULT_DELETE = dt.timedelta(days=7)


class LifecycleError(ValueError):
    pass


class IllegalTransition(LifecycleError):
    def __init__(self, state: State, event: EventKind) -> None:
        super().__init__(f"{event.value} is not allowed in {state.value}")
        self.state = state
        self.event = event


class State(Enum):
    NEW = "New"
    QUEUED_UNTOUCHED = "QueuedUntouched"
    QUEUED_ANNOTATED = "QueuedAnnotated"
    ANNOTATED = "Annotated"
    FINISHED = "Finished"
    DROPPED = "Dropped"
    DELETED = "Deleted"


QUEUED = frozenset({State.QUEUED_UNTOUCHED, State.QUEUED_ANNOTATED})


class EventKind(Enum):
    PUSH = "Push"
    SAVE_ANNOTATION = "SaveAnnotation"
    RECHECK_OK = "RecheckOk"
    THUMB_DOWN = "ThumbDown"
    MARK_ANONYMIZE = "MarkAnonymize"
    AGE_TICK = "AgeTick"
    EXPORT = "Export"
    ARCHIVE = "Archive"


@dataclass(frozen=True)
class LifecycleEvent:
    kind: EventKind
    at: dt.datetime

    def __post_init__(self) -> None:
        if self.at.tzinfo is None:
            object.__setattr__(self, "at", self.at.replace(tzinfo=dt.timezone.utc))


@dataclass(frozen=True)
class AnnotationItem:
    recording: str
    state: State = State.NEW
    thumbs_down: int = 0
    anonymize: bool = False
    queued_at: dt.datetime | None = None
    dropped_at: dt.datetime | None = None


def _drop(item: AnnotationItem, at: dt.datetime, **changes: object) -> AnnotationItem:
    return dataclasses.replace(item, state=State.DROPPED, dropped_at=at, **changes)


def lifecycle_step(
    item: AnnotationItem,
    event: LifecycleEvent,
    *,
    stale_after: dt.timedelta = DEFAULT_STALE,
    delete_after: dt.timedelta = DEFAULT_DELETE,
) -> AnnotationItem:
    state, kind, at = item.state, event.kind, event.at

    if kind is EventKind.AGE_TICK:
        if state is State.DROPPED and item.dropped_at and at - item.dropped_at > delete_after:
            return dataclasses.replace(item, state=State.DELETED)
        if (
            state is State.QUEUED_UNTOUCHED
            and item.queued_at
            and at - item.queued_at > stale_after
        ):
            logger.info("%s untouched since %s; dropped", item.recording, item.queued_at)
            return _drop(item, at)
        return item

    if kind is EventKind.PUSH and state is State.NEW:
        return dataclasses.replace(item, state=State.QUEUED_UNTOUCHED, queued_at=at)
    if kind is EventKind.SAVE_ANNOTATION and state is State.QUEUED_UNTOUCHED:
        return dataclasses.replace(item, state=State.QUEUED_ANNOTATED)
    if kind is EventKind.RECHECK_OK and state is State.QUEUED_ANNOTATED:
        return dataclasses.replace(item, state=State.ANNOTATED)
    if kind is EventKind.THUMB_DOWN and state in QUEUED:
        thumbs = item.thumbs_down + 1
        if state is State.QUEUED_UNTOUCHED and thumbs >= THUMBS_TO_DROP:
            return _drop(item, at, thumbs_down=thumbs)
        return dataclasses.replace(item, thumbs_down=thumbs)
    if kind is EventKind.MARK_ANONYMIZE and state in QUEUED:
        return _drop(item, at, anonymize=True)
    if kind is EventKind.EXPORT and state is State.ANNOTATED:
        return dataclasses.replace(item, state=State.FINISHED)
    if kind is EventKind.ARCHIVE and state is State.FINISHED:
        return dataclasses.replace(item, state=State.DELETED)
    raise IllegalTransition(state, kind)


def parse_event_line(line: bytes | str) -> tuple[str, LifecycleEvent]:
    """`{"recording": ..., "event": "Push", "at": "2026-01-01T00:00:00Z"}`."""
    try:
        data = orjson.loads(line)
    except orjson.JSONDecodeError as exc:
        raise LifecycleError(f"not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise LifecycleError("an event must be a JSON object")
    missing = {"recording", "event", "at"} - set(data)
    if missing:
        raise LifecycleError(f"event missing {sorted(missing)}")
    try:
        kind = EventKind(data["event"])
    except ValueError as exc:
        raise LifecycleError(
            f"unknown event {data['event']!r}; known: {[k.value for k in EventKind]}"
        ) from exc
    try:
        at = dt.datetime.fromisoformat(str(data["at"]).replace("Z", "+00:00"))
    except ValueError as exc:
        raise LifecycleError(f"bad timestamp {data['at']!r}") from exc
    return str(data["recording"]), LifecycleEvent(kind, at)


class LifecycleStore:
    """Items by recording, mutated by one writer at a time."""

    def __init__(
        self,
        sink: CallbackSink | None = None,
        *,
        stale_after: dt.timedelta = DEFAULT_STALE,
        delete_after: dt.timedelta = DEFAULT_DELETE,
    ) -> None:
        self.items: dict[str, AnnotationItem] = {}
        self.sink = sink
        self.stale_after = stale_after
        self.delete_after = delete_after
        self._lock = threading.Lock()

    def get(self, recording: str) -> AnnotationItem:
        with self._lock:
            return self.items.get(recording) or AnnotationItem(recording)

    def apply(self, recording: str, event: LifecycleEvent) -> AnnotationItem:
        with self._lock:
            before = self.items.get(recording) or AnnotationItem(recording)
            after = lifecycle_step(
                before, event, stale_after=self.stale_after, delete_after=self.delete_after
            )
            self.items[recording] = after
        if after.state is not before.state:
            logger.debug("%s: %s -> %s", recording, before.state.value, after.state.value)
            if after.state is State.ANNOTATED and self.sink is not None:
                self.sink.emit(CallbackEvent(
                    job_id=recording, stage="lifecycle", kind="OK",
                    payload={"state": after.state.value}, ts=event.at,
                ))
        return after

    def snapshot(self) -> dict[str, AnnotationItem]:
        with self._lock:
            return dict(self.items)

    def tick(self, now: dt.datetime) -> list[AnnotationItem]:
        """AgeTick every item known when the tick starts."""
        event = LifecycleEvent(EventKind.AGE_TICK, now)
        return [self.apply(rec, event) for rec in sorted(self.snapshot())]

    def replay(self, events: Iterable[tuple[str, LifecycleEvent]]) -> dict[str, AnnotationItem]:
        for recording, event in events:
            self.apply(recording, event)
        return self.snapshot()

    def replay_file(self, path: Path) -> dict[str, AnnotationItem]:
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise LifecycleError(f"could not read {path}: {exc}") from exc
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                self.apply(*parse_event_line(line))
            except LifecycleError as exc:
                raise LifecycleError(f"{path}:{lineno}: {exc}") from exc
        return self.snapshot()
