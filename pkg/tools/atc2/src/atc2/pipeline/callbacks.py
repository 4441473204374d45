"""Job callbacks: where PROGRESS, OK and ERROR events go.

A sink is anything with `emit(event)`. Sinks never raise: a failed delivery is
retried, then logged, and the job carries on.
"""

from __future__ import annotations

import datetime as dt
import logging
import threading
import time
from pathlib import Path
from typing import Any, Literal, Protocol

import httpx
import orjson
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

EVENT_KINDS = ("PROGRESS", "OK", "ERROR")
TERMINAL_KINDS = frozenset({"OK", "ERROR"})
DEFAULT_BACKOFF_S = 0.5


def _now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


class CallbackEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    job_id: str
    stage: str
    kind: Literal["PROGRESS", "OK", "ERROR"]
    reason: str | None = None
    payload: dict[str, Any] = Field(default_factory=dict)
    ts: dt.datetime = Field(default_factory=_now)

    @property
    def terminal(self) -> bool:
        return self.kind in TERMINAL_KINDS

    def to_json(self) -> bytes:
        return orjson.dumps(self.model_dump(mode="json"))


class CallbackSink(Protocol):
    def emit(self, event: CallbackEvent) -> None: ...


class ListSink:
    """Keeps events in memory, in emission order."""

    def __init__(self) -> None:
        self.events: list[CallbackEvent] = []
        self._lock = threading.Lock()

    def emit(self, event: CallbackEvent) -> None:
        with self._lock:
            self.events.append(event)

    def for_job(self, job_id: str) -> list[CallbackEvent]:
        with self._lock:
            return [e for e in self.events if e.job_id == job_id]


class JsonlSink:
    """One JSON object per line, appended under a lock."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._lock = threading.Lock()
        path.parent.mkdir(parents=True, exist_ok=True)

    def emit(self, event: CallbackEvent) -> None:
        line = event.to_json() + b"\n"
        with self._lock:
            try:
                with self.path.open("ab") as fh:
                    fh.write(line)
            except OSError as exc:
                logger.warning("could not append callback for %s to %s: %s",
                               event.job_id, self.path, exc)


class HttpSink:
    """POSTs each event as JSON. Non-2xx and transport errors are retried."""

    def __init__(
        self,
        url: str,
        *,
        retries: int = 3,
        timeout_s: float = 5.0,
        backoff_s: float = DEFAULT_BACKOFF_S,
        client: httpx.Client | None = None,
    ) -> None:
        self.url = url
        self.retries = retries
        self.backoff_s = backoff_s
        self._http = client or httpx.Client(timeout=httpx.Timeout(timeout_s))
        self.failures = 0
        self._lock = threading.Lock()

    def close(self) -> None:
        self._http.close()

    def emit(self, event: CallbackEvent) -> None:
        body = event.model_dump(mode="json")
        last: str = ""
        for attempt in range(1, self.retries + 2):
            try:
                resp = self._http.post(self.url, json=body)
                if resp.is_success:
                    return
                last = f"HTTP {resp.status_code}"
            except httpx.HTTPError as exc:
                last = str(exc) or type(exc).__name__
            logger.info("callback %s/%s attempt %d failed: %s",
                        event.job_id, event.stage, attempt, last)
            if self.backoff_s and attempt <= self.retries:
                time.sleep(self.backoff_s * attempt)
        with self._lock:
            self.failures += 1
        logger.warning("dropped callback %s/%s %s after %d retries: %s",
                       event.job_id, event.stage, event.kind, self.retries, last)


class FanoutSink:
    """Every event to every sink, in order."""

    def __init__(self, *sinks: CallbackSink) -> None:
        self.sinks = sinks

    def emit(self, event: CallbackEvent) -> None:
        for sink in self.sinks:
            sink.emit(event)

    def close(self) -> None:
        for sink in self.sinks:
            close = getattr(sink, "close", None)
            if close is not None:
                close()


def _single_sink(spec: str, retries: int, timeout_s: float, backoff_s: float) -> CallbackSink:
    if spec.startswith(("http://", "https://")):
        return HttpSink(spec, retries=retries, timeout_s=timeout_s, backoff_s=backoff_s)
    return JsonlSink(Path(spec))


def sink_from_spec(
    spec: str | None,
    *,
    retries: int = 3,
    timeout_s: float = 5.0,
    backoff_s: float = DEFAULT_BACKOFF_S,
) -> CallbackSink:
    """`http(s)://...` posts, anything else is a JSONL path; empty keeps events in memory.

    Comma-separated specs fan out to each target.
    """
    parts = [p.strip() for p in (spec or "").split(",") if p.strip()]
    if not parts:
        return ListSink()
    sinks = [_single_sink(p, retries, timeout_s, backoff_s) for p in parts]
    return sinks[0] if len(sinks) == 1 else FanoutSink(*sinks)


def read_events(path: Path) -> list[CallbackEvent]:
    if not path.is_file():
        return []
    out = []
    for line in path.read_bytes().splitlines():
        if not line.strip():
            continue
        try:
            out.append(CallbackEvent.model_validate(orjson.loads(line)))
        except (orjson.JSONDecodeError, ValueError):
            logger.warning("skipping unreadable callback line in %s", path)
    return out
