"""Per-stage wall time and real-time factor."""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import orjson

from .config import PipelineError


@dataclass(frozen=True)
class StageTiming:
    stages: tuple[tuple[str, float], ...]
    audio_len: float = 0.0

    def __post_init__(self) -> None:
        stages = tuple((str(name), float(seconds)) for name, seconds in self.stages)
        for name, seconds in stages:
            if not math.isfinite(seconds) or seconds < 0:
                raise PipelineError(f"stage {name!r}: time {seconds} must be finite and >= 0")
        object.__setattr__(self, "stages", stages)

    @property
    def total(self) -> float:
        return math.fsum(s for _, s in self.stages)

    def percentages(self) -> list[tuple[str, float]]:
        total = self.total
        if total <= 0:
            raise PipelineError("no time recorded")
        return [(name, 100.0 * s / total) for name, s in self.stages]

    @property
    def rtf(self) -> float | None:
        return self.total / self.audio_len if self.audio_len > 0 else None

    def seconds(self, name: str) -> float | None:
        for stage, s in self.stages:
            if stage == name:
                return s
        return None

    def as_dict(self) -> dict[str, Any]:
        return {
            "stages": [[name, s] for name, s in self.stages],
            "audio_len": self.audio_len,
            "total": self.total,
            "rtf": self.rtf,
        }

    @classmethod
    def from_dict(cls, data: Any) -> StageTiming:
        """Stages as `{"name": seconds}` or `[["name", seconds], ...]`."""
        if not isinstance(data, dict) or "stages" not in data:
            raise PipelineError("timing must be an object with stages")
        raw = data["stages"]
        pairs = list(raw.items()) if isinstance(raw, dict) else [tuple(p) for p in raw]
        return cls(tuple(pairs), float(data.get("audio_len", 0.0)))


def mean_timing(timings: Sequence[StageTiming]) -> StageTiming:
    """Per-stage mean over jobs; a stage a job never reached counts as 0 s for it."""
    if not timings:
        raise PipelineError("no timings to average")
    names: list[str] = []
    sums: dict[str, list[float]] = {}
    for t in timings:
        for name, s in t.stages:
            if name not in sums:
                names.append(name)
                sums[name] = []
            sums[name].append(s)
    n = len(timings)
    return StageTiming(
        tuple((name, math.fsum(sums[name]) / n) for name in names),
        math.fsum(t.audio_len for t in timings) / n,
    )


def timing_report(t: StageTiming) -> str:
    rows = t.percentages()
    width = max(5, *(len(name) for name, _ in rows))
    lines = [f"{'stage':<{width}}  {'seconds':>9}  {'%':>7}"]
    for (name, pct), (_, s) in zip(rows, t.stages):
        lines.append(f"{name:<{width}}  {s:>9.3f}  {pct:>7.2f}")
    lines.append(f"{'total':<{width}}  {t.total:>9.3f}  {100.0:>7.2f}")
    rtf = t.rtf
    lines.append(f"rtf {rtf:.3f}" if rtf is not None else "rtf n/a (no audio length)")
    return "\n".join(lines)


def read_timings(path: Path) -> list[StageTiming]:
    """A JSON timing object, or JSONL with one per line."""
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise PipelineError(f"could not read {path}: {exc}") from exc
    try:
        return [StageTiming.from_dict(orjson.loads(raw))]
    except orjson.JSONDecodeError:
        pass
    out = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(StageTiming.from_dict(orjson.loads(line)))
        except orjson.JSONDecodeError as exc:
            raise PipelineError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_timings(path: Path, timings: Iterable[StageTiming]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        for t in timings:
            fh.write(orjson.dumps(t.as_dict()) + b"\n")
    return path
