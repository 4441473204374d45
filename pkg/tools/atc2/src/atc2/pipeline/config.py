"""Pipeline configuration and per-job settings.

A pipeline is declarative JSON: blocks bound to registered operations,
condition nodes that gate the record on one field, and edges between them.

    {
      "workers": 4,
      "blocks": [{"name": "vad", "op": "vad", "params": {"frame_ms": 20}}],
      "conditions": [{"name": "snr_gate", "field": "avg_snr", "op": ">=",
                      "value": "$min_snr_db", "reason": "TOO_NOISY"}],
      "edges": [["vad", "snr_gate"]]
    }

A `$name` value is read from the job settings at run time.
"""

from __future__ import annotations

import heapq
import operator
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Literal

import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..model import SegmentRecord

GATE_REASONS = frozenset({"TOO_NOISY", "TOO_SHORT", "TOO_LONG", "NON_ENGLISH"})
BLOCK_REASONS = frozenset({"NO_SPEECH", "NO_EVIDENCE", "NO_HYPOTHESIS", "INTERNAL"})
REASONS = GATE_REASONS | BLOCK_REASONS

CONDITION_OPS: dict[str, Callable[[Any, Any], bool]] = {
    ">=": operator.ge,
    "<=": operator.le,
    ">": operator.gt,
    "<": operator.lt,
    "==": operator.eq,
}

TOP_KEYS = frozenset({"workers", "blocks", "conditions", "edges"})
BLOCK_KEYS = frozenset({"name", "op", "params"})
CONDITION_KEYS = frozenset({"name", "field", "op", "value", "reason"})


class PipelineError(ValueError):
    pass


class ConfigCycle(PipelineError):
    pass


class UnknownBlock(PipelineError):
    pass


class JobSettings(BaseModel):
    """Thresholds and formats for one job, as shipped alongside the audio."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    audio_format: Literal["wav", "pcm", "none"] = "wav"
    min_len_s: float = Field(default=1.0, ge=0.0)
    max_len_s: float = Field(default=60.0, gt=0.0)
    min_snr_db: float = 5.0
    min_eld_score: float = Field(default=0.5, ge=0.0, le=1.0)
    asr_language: str = "en"

    @model_validator(mode="after")
    def _ordered_lengths(self) -> JobSettings:
        if self.min_len_s >= self.max_len_s:
            raise ValueError(f"min_len_s {self.min_len_s} must be below max_len_s {self.max_len_s}")
        return self

    @classmethod
    def from_json(cls, path: Path) -> JobSettings:
        try:
            data = orjson.loads(path.read_bytes())
        except (OSError, orjson.JSONDecodeError) as exc:
            raise PipelineError(f"could not load settings {path}: {exc}") from exc
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise PipelineError(f"{path}: {exc}") from exc

    @classmethod
    def builtin(cls) -> JobSettings:
        raw = resources.files("atc2").joinpath("data/settings.json").read_bytes()
        return cls.model_validate(orjson.loads(raw))


@dataclass(frozen=True)
class BlockSpec:
    name: str
    op: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    field: str
    op: str
    value: float | str
    reason: str

    def threshold(self, settings: JobSettings) -> Any:
        if isinstance(self.value, str) and self.value.startswith("$"):
            return getattr(settings, self.value[1:])
        return self.value

    def holds(self, record: SegmentRecord, settings: JobSettings) -> bool:
        """False when the field is unset: a gate cannot pass on missing evidence."""
        actual = getattr(record, self.field)
        if actual is None:
            return False
        return CONDITION_OPS[self.op](actual, self.threshold(settings))


@dataclass(frozen=True)
class PipelineConfig:
    blocks: tuple[BlockSpec, ...]
    conditions: tuple[ConditionSpec, ...] = ()
    edges: tuple[tuple[str, str], ...] = ()
    workers: int = 1
    order: tuple[str, ...] = field(default=(), init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", _topological_order(self))

    @property
    def nodes(self) -> dict[str, BlockSpec | ConditionSpec]:
        return {n.name: n for n in (*self.blocks, *self.conditions)}

    @classmethod
    def parse(
        cls,
        data: Any,
        registry: Mapping[str, Any],
        source: str = "<pipeline>",
    ) -> PipelineConfig:
        if not isinstance(data, dict):
            raise PipelineError(f"{source}: pipeline config must be a JSON object")
        unknown = set(data) - TOP_KEYS
        if unknown:
            raise PipelineError(f"{source}: unknown keys {sorted(unknown)}")

        workers = data.get("workers", 1)
        if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
            raise PipelineError(f"{source}: workers must be a positive integer")

        blocks = []
        for raw in data.get("blocks", []):
            _check_keys(raw, BLOCK_KEYS, {"name", "op"}, source, "block")
            if raw["op"] not in registry:
                raise UnknownBlock(
                    f"{source}: block {raw['name']!r} uses unknown op {raw['op']!r}; "
                    f"known: {sorted(registry)}"
                )
            params = raw.get("params", {})
            if not isinstance(params, dict):
                raise PipelineError(f"{source}: params of {raw['name']!r} must be an object")
            accepted = getattr(registry[raw["op"]], "params", None)
            if accepted is not None and set(params) - accepted:
                raise PipelineError(
                    f"{source}: block {raw['name']!r} does not take "
                    f"{sorted(set(params) - accepted)}"
                )
            blocks.append(BlockSpec(raw["name"], raw["op"], params))
        if not blocks:
            raise PipelineError(f"{source}: no blocks")

        conditions = []
        for raw in data.get("conditions", []):
            _check_keys(raw, CONDITION_KEYS, CONDITION_KEYS, source, "condition")
            conditions.append(_condition(raw, source))

        edges = []
        for raw in data.get("edges", []):
            if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
                raise PipelineError(f"{source}: an edge is a [from, to] pair, got {raw!r}")
            edges.append((str(raw[0]), str(raw[1])))

        try:
            return cls(tuple(blocks), tuple(conditions), tuple(edges), workers)
        except PipelineError as exc:
            raise type(exc)(f"{source}: {exc}") from exc

    @classmethod
    def from_json(cls, path: Path, registry: Mapping[str, Any]) -> PipelineConfig:
        try:
            data = orjson.loads(path.read_bytes())
        except (OSError, orjson.JSONDecodeError) as exc:
            raise PipelineError(f"could not load pipeline config {path}: {exc}") from exc
        return cls.parse(data, registry, str(path))


def _check_keys(
    raw: Any, allowed: frozenset[str], required: set[str] | frozenset[str], source: str, what: str
) -> None:
    if not isinstance(raw, dict):
        raise PipelineError(f"{source}: each {what} must be an object")
    extra = set(raw) - allowed
    if extra:
        raise PipelineError(f"{source}: unknown {what} keys {sorted(extra)}")
    missing = set(required) - set(raw)
    if missing:
        raise PipelineError(f"{source}: {what} missing {sorted(missing)}")


def _condition(raw: Mapping[str, Any], source: str) -> ConditionSpec:
    name = raw["name"]
    if raw["field"] not in SegmentRecord.model_fields:
        raise PipelineError(f"{source}: condition {name!r} tests unknown field {raw['field']!r}")
    if raw["op"] not in CONDITION_OPS:
        raise PipelineError(
            f"{source}: condition {name!r} op {raw['op']!r} not in {sorted(CONDITION_OPS)}"
        )
    value = raw["value"]
    if isinstance(value, str):
        if not value.startswith("$") or value[1:] not in JobSettings.model_fields:
            raise PipelineError(
                f"{source}: condition {name!r} value {value!r} is neither a number "
                "nor a $setting"
            )
    elif isinstance(value, bool) or not isinstance(value, (int, float)):
        raise PipelineError(f"{source}: condition {name!r} value must be a number or $setting")
    if raw["reason"] not in GATE_REASONS:
        raise PipelineError(
            f"{source}: condition {name!r} reason {raw['reason']!r} not in {sorted(GATE_REASONS)}"
        )
    return ConditionSpec(name, raw["field"], raw["op"], value, raw["reason"])


def _topological_order(cfg: PipelineConfig) -> tuple[str, ...]:
    """Kahn's algorithm, ties broken by declaration order."""
    declared = [n.name for n in (*cfg.blocks, *cfg.conditions)]
    if len(set(declared)) != len(declared):
        dupes = sorted({n for n in declared if declared.count(n) > 1})
        raise PipelineError(f"duplicate node names {dupes}")
    rank = {name: i for i, name in enumerate(declared)}
    succ: dict[str, list[str]] = {name: [] for name in declared}
    indegree = dict.fromkeys(declared, 0)
    for src, dst in cfg.edges:
        for end in (src, dst):
            if end not in rank:
                raise PipelineError(f"edge {src} -> {dst} names unknown node {end!r}")
        succ[src].append(dst)
        indegree[dst] += 1

    sources = [n for n in declared if indegree[n] == 0]
    heap = [(rank[n], n) for n in sources]
    order = []
    while heap:
        _, name = heapq.heappop(heap)
        order.append(name)
        for nxt in succ[name]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(heap, (rank[nxt], nxt))
    if len(order) != len(declared):
        stuck = sorted(set(declared) - set(order))
        raise ConfigCycle(f"cycle through {stuck}")
    if len(sources) != 1:
        raise PipelineError(f"expected exactly one source node, found {sources}")
    return tuple(order)


def default_config(registry: Mapping[str, Any]) -> PipelineConfig:
    raw = resources.files("atc2").joinpath("data/pipeline.json").read_bytes()
    return PipelineConfig.parse(orjson.loads(raw), registry, "pipeline.json")
