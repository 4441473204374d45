"""Energy-based voice activity detection and SNR estimation.

Stand-ins for the acoustic front-end: enough to gate push-to-talk segments on
speech presence and noise level without an acoustic model.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16_000
FRAME_MS_RANGE = (10, 100)
DEFAULT_FRAME_MS = 20
DEFAULT_THRESHOLD_DB = 10.0
MERGE_GAP_S = 0.2
SNR_RANGE = (0.0, 40.0)
_POWER_FLOOR = 1e-20


class SignalError(ValueError):
    pass


class EmptyAudio(SignalError):
    pass


@dataclass(frozen=True)
class VadSegment:
    start: float
    end: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.start < self.end:
            raise SignalError(f"segment [{self.start}, {self.end}) is empty or negative")

    @property
    def duration(self) -> float:
        return self.end - self.start


def _samples(audio: Sequence[float] | np.ndarray) -> np.ndarray:
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1:
        raise SignalError(f"expected mono samples, got shape {x.shape}")
    if x.size == 0:
        raise EmptyAudio("no samples")
    return x


def frame_energies_db(x: np.ndarray, frame_len: int) -> np.ndarray:
    """Mean power per frame in dB; the last frame may be short."""
    n_frames = math.ceil(x.size / frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[: x.size] = x**2
    sums = padded.reshape(n_frames, frame_len).sum(axis=1)
    lengths = np.full(n_frames, frame_len, dtype=np.float64)
    lengths[-1] = x.size - (n_frames - 1) * frame_len
    return 10.0 * np.log10(sums / lengths + _POWER_FLOOR)


def vad(
    audio: Sequence[float] | np.ndarray,
    frame_ms: int = DEFAULT_FRAME_MS,
    threshold_db: float = DEFAULT_THRESHOLD_DB,
    sample_rate: int = SAMPLE_RATE,
) -> list[VadSegment]:
    """Maximal runs of frames louder than the quietest frame by `threshold_db`.

    Runs closer than 0.2 s are merged.
    """
    if not FRAME_MS_RANGE[0] <= frame_ms <= FRAME_MS_RANGE[1]:
        raise SignalError(f"frame_ms {frame_ms} outside {FRAME_MS_RANGE}")
    x = _samples(audio)
    frame_len = max(1, int(round(sample_rate * frame_ms / 1000)))
    energies = frame_energies_db(x, frame_len)
    active = energies - energies.min() > threshold_db

    audio_len = x.size / sample_rate
    frame_s = frame_len / sample_rate
    runs: list[list[float]] = []
    start = None
    for i, flag in enumerate([*active.tolist(), False]):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            begin, end = start * frame_s, min(i * frame_s, audio_len)
            if runs and begin - runs[-1][1] < MERGE_GAP_S:
                runs[-1][1] = end
            else:
                runs.append([begin, end])
            start = None
    return [VadSegment(b, e) for b, e in runs]


def speech_length(segments: Iterable[VadSegment]) -> float:
    return math.fsum(s.duration for s in segments)


def estimate_snr(
    audio: Sequence[float] | np.ndarray,
    segments: Sequence[VadSegment],
    sample_rate: int = SAMPLE_RATE,
) -> float:
    """10·log10(P_speech / P_nonspeech), clamped to [0, 40] dB.

    No segments, or segments covering everything, give 0: there is nothing to
    compare against.
    """
    x = _samples(audio)
    mask = np.zeros(x.size, dtype=bool)
    for seg in segments:
        lo = int(round(seg.start * sample_rate))
        hi = int(round(seg.end * sample_rate))
        mask[lo:hi] = True
    if not mask.any() or mask.all():
        return 0.0
    p_speech = float(np.mean(x[mask] ** 2))
    p_noise = float(np.mean(x[~mask] ** 2))
    if p_speech <= 0.0:
        return 0.0
    if p_noise <= 0.0:
        return SNR_RANGE[1]
    snr = 10.0 * math.log10(p_speech / p_noise)
    return min(max(snr, SNR_RANGE[0]), SNR_RANGE[1])


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    """Mono float samples and the sample rate from the file header."""
    try:
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as exc:
        raise SignalError(f"could not read {path}: {exc}") from exc
    if data.size == 0:
        raise EmptyAudio(f"{path}: no samples")
    if data.shape[1] > 1:
        logger.info("%s: averaging %d channels to mono", path, data.shape[1])
    return data.mean(axis=1), int(rate)


def write_wav(
    path: Path, samples: Sequence[float] | np.ndarray, sample_rate: int = SAMPLE_RATE
) -> Path:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), x, sample_rate, subtype="PCM_16")
    return path
