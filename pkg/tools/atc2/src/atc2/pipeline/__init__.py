"""Config-driven job worker: blocks, gates, callbacks, timing, and the annotation lifecycle."""

from .blocks import REGISTRY, BlockRejected, Resources
from .callbacks import (
    CallbackEvent,
    CallbackSink,
    FanoutSink,
    HttpSink,
    JsonlSink,
    ListSink,
    read_events,
    sink_from_spec,
)
from .config import (
    ConfigCycle,
    JobSettings,
    PipelineConfig,
    PipelineError,
    UnknownBlock,
    default_config,
)
from .lifecycle import (
    AnnotationItem,
    EventKind,
    IllegalTransition,
    LifecycleError,
    LifecycleEvent,
    LifecycleStore,
    State,
    lifecycle_step,
)
from .timing import StageTiming, mean_timing, timing_report
from .worker import JobResult, run_batch, run_job

__all__ = [
    "REGISTRY", "AnnotationItem", "BlockRejected", "CallbackEvent", "CallbackSink",
    "ConfigCycle", "EventKind", "FanoutSink", "HttpSink", "IllegalTransition", "JobResult",
    "JobSettings", "JsonlSink", "LifecycleError", "LifecycleEvent", "LifecycleStore", "ListSink",
    "PipelineConfig", "PipelineError", "Resources", "StageTiming", "State", "UnknownBlock",
    "default_config", "lifecycle_step", "mean_timing", "read_events", "run_batch", "run_job",
    "sink_from_spec", "timing_report",
]
