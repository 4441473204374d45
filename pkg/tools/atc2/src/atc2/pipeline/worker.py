"""Run segment records through a configured pipeline."""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

from ..model import SegmentRecord
from .blocks import REGISTRY, BlockRejected, JobState, Resources
from .callbacks import CallbackEvent, CallbackSink
from .config import BlockSpec, JobSettings, PipelineConfig
from .timing import StageTiming

logger = logging.getLogger(__name__)


class JobResult(NamedTuple):
    record: SegmentRecord
    timing: StageTiming
    event: CallbackEvent


def run_job(
    record: SegmentRecord,
    cfg: PipelineConfig,
    settings: JobSettings,
    sink: CallbackSink,
    resources: Resources,
) -> JobResult:
    """Execute every node in topological order; stop at the first failure.

    Blocks emit PROGRESS when they finish and are timed; conditions are not.
    Exactly one terminal event (OK or ERROR) is emitted, and nothing raised by
    a block escapes.
    """
    state = JobState(record, settings, resources)
    nodes = cfg.nodes
    stages: list[tuple[str, float]] = []
    failure: tuple[str, str, str] | None = None  # stage, reason, message
    last = cfg.order[0]

    for name in cfg.order:
        node = nodes[name]
        last = name
        if not isinstance(node, BlockSpec):
            if not node.holds(state.record, settings):
                failure = (name, node.reason, f"{node.field} {node.op} {node.value} failed")
                break
            continue
        started = time.perf_counter()
        try:
            REGISTRY[node.op](state, node.params)
        except BlockRejected as exc:
            failure = (name, exc.reason, str(exc))
        except Exception as exc:
            logger.exception("%s: block %s failed", record.id, name)
            failure = (name, "INTERNAL", f"{type(exc).__name__}: {exc}")
        stages.append((name, time.perf_counter() - started))
        if failure:
            break
        sink.emit(CallbackEvent(job_id=record.id, stage=name, kind="PROGRESS"))

    final = state.record
    if failure:
        stage, reason, message = failure
        logger.info("%s rejected at %s: %s (%s)", record.id, stage, reason, message)
        final = final.evolve(status="error", reason=reason)
        event = CallbackEvent(
            job_id=record.id, stage=stage, kind="ERROR", reason=reason,
            payload={"message": message},
        )
    else:
        final = final.evolve(status="ok", reason=None)
        event = CallbackEvent(
            job_id=record.id, stage=last, kind="OK",
            payload={"quality_score": final.quality_score},
        )
    sink.emit(event)
    return JobResult(final, StageTiming(tuple(stages), final.audio_len), event)


def run_batch(
    records: Sequence[SegmentRecord],
    cfg: PipelineConfig,
    settings: JobSettings,
    sink: CallbackSink,
    resources: Resources,
    workers: int | None = None,
) -> list[JobResult]:
    """Jobs on a thread pool; results come back in input order."""
    n = workers or cfg.workers
    if n <= 1:
        return [run_job(r, cfg, settings, sink, resources) for r in records]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda r: run_job(r, cfg, settings, sink, resources), records))
