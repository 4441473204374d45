"""Energy VAD and SNR on synthetic waveforms with known answers."""

from __future__ import annotations

import numpy as np
import pytest
import soundfile as sf

from atc2.signal import (
    SAMPLE_RATE,
    EmptyAudio,
    SignalError,
    VadSegment,
    estimate_snr,
    read_wav,
    speech_length,
    vad,
    write_wav,
)

FRAME_S = 0.02


def _tone(seconds: float, amplitude: float = 0.5, hz: float = 440.0) -> np.ndarray:
    t = np.arange(int(round(seconds * SAMPLE_RATE))) / SAMPLE_RATE
    return amplitude * np.sin(2 * np.pi * hz * t)


def _silence(seconds: float) -> np.ndarray:
    return np.zeros(int(round(seconds * SAMPLE_RATE)))


def test_silence_has_no_speech():
    segments = vad(_silence(2.0))
    assert segments == []
    assert speech_length(segments) == 0.0


def test_padded_tone_is_one_segment():
    x = np.concatenate([_silence(1.0), _tone(1.0), _silence(1.0)])
    (seg,) = vad(x)
    assert seg.start == pytest.approx(1.0, abs=FRAME_S)
    assert seg.end == pytest.approx(2.0, abs=FRAME_S)
    assert speech_length([seg]) == pytest.approx(1.0, abs=2 * FRAME_S)


def test_short_gap_is_merged():
    x = np.concatenate([_silence(0.5), _tone(0.5), _silence(0.1), _tone(0.5), _silence(0.5)])
    (seg,) = vad(x)
    assert seg.start == pytest.approx(0.5, abs=FRAME_S)
    assert seg.end == pytest.approx(1.6, abs=FRAME_S)


def test_long_gap_is_not_merged():
    x = np.concatenate([_silence(0.5), _tone(0.5), _silence(0.5), _tone(0.5), _silence(0.5)])
    first, second = vad(x)
    assert first.end == pytest.approx(1.0, abs=FRAME_S)
    assert second.start == pytest.approx(1.5, abs=FRAME_S)


def test_segments_stay_inside_the_audio():
    x = np.concatenate([_silence(0.5), _tone(0.51)])
    (seg,) = vad(x)
    assert seg.end <= x.size / SAMPLE_RATE


def test_gain_does_not_change_segments():
    rng = np.random.default_rng(20260309)
    x = np.concatenate([_silence(0.7), _tone(0.8), _silence(0.4), _tone(0.3)])
    x = x + rng.normal(0.0, 0.003, x.size)
    assert vad(x) == vad(2.0 * x)


def test_snr_of_two_level_signal():
    x = np.concatenate([np.full(SAMPLE_RATE, 0.1), np.ones(SAMPLE_RATE), np.full(SAMPLE_RATE, 0.1)])
    assert estimate_snr(x, [VadSegment(1.0, 2.0)]) == pytest.approx(20.0, abs=0.1)


@pytest.mark.parametrize(
    "segments",
    [[], [VadSegment(0.0, 3.0)]],
    ids=["no-segments", "all-speech"],
)
def test_snr_without_contrast_is_zero(segments):
    x = _tone(3.0)
    assert estimate_snr(x, segments) == 0.0


def test_snr_equal_powers_is_zero():
    x = np.full(3 * SAMPLE_RATE, 0.5)
    assert estimate_snr(x, [VadSegment(1.0, 2.0)]) == 0.0


def test_snr_is_clamped():
    x = np.concatenate([np.full(SAMPLE_RATE, 1e-6), np.ones(SAMPLE_RATE)])
    assert estimate_snr(x, [VadSegment(1.0, 2.0)]) == 40.0
    quiet_speech = np.concatenate([np.ones(SAMPLE_RATE), np.full(SAMPLE_RATE, 0.1)])
    assert estimate_snr(quiet_speech, [VadSegment(1.0, 2.0)]) == 0.0


def test_rejects_bad_input():
    with pytest.raises(EmptyAudio):
        vad([])
    with pytest.raises(EmptyAudio):
        estimate_snr(np.array([]), [])
    with pytest.raises(SignalError, match="frame_ms"):
        vad(_tone(1.0), frame_ms=5)
    with pytest.raises(SignalError, match="mono"):
        vad(np.zeros((10, 2)))
    with pytest.raises(SignalError):
        VadSegment(1.0, 1.0)


def test_wav_round_trip(tmp_path):
    x = _tone(0.5, amplitude=0.25)
    path = write_wav(tmp_path / "audio" / "tone.wav", x, 8000)
    samples, rate = read_wav(path)
    assert rate == 8000
    assert samples.size == x.size
    np.testing.assert_allclose(samples, x, atol=1 / 32768 + 1e-9)


def test_stereo_is_averaged(tmp_path):
    path = tmp_path / "stereo.wav"
    left = np.full(800, 0.5)
    sf.write(str(path), np.stack([left, np.zeros(800)], axis=1), SAMPLE_RATE, subtype="PCM_16")
    samples, _ = read_wav(path)
    assert samples == pytest.approx(np.full(800, 0.25), abs=1e-4)


def test_unreadable_wav(tmp_path):
    with pytest.raises(SignalError):
        read_wav(tmp_path / "missing.wav")
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFF nope")
    with pytest.raises(SignalError):
        read_wav(bad)
