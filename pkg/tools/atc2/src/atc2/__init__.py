"""atc2: gate, transcribe, boost and select ATC speech for annotation.

Submodules are imported here so `from atc2 import lattice` resolves for type
checkers as well as at runtime.
"""

from . import (
    config,
    eld,
    lattice,
    metrics,
    model,
    pipeline,
    quality,
    signal,
    synth,
    textnorm,
    understand,
)

__all__ = [
    "config", "eld", "lattice", "metrics", "model", "pipeline", "quality",
    "signal", "synth", "textnorm", "understand",
]
