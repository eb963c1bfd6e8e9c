"""Minimal WAV audio I/O.

The engine's canonical audio format is RIFF WAV, PCM 16-bit, mono. Anything
else is rejected with an :class:`~wavrag.errors.AudioDecodeError` naming the
offending property. Samples live in memory as float64; they are NOT clipped
between processing steps (SNR math must see the true signal) and are only
saturated to [-1, 1] when written back to disk.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioDecodeError

__all__ = ["AudioBuffer", "read_wav", "write_wav"]


@dataclass
class AudioBuffer:
    """A mono audio signal: samples (float64) plus its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioBuffer samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(np.square(self.samples))))


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a canonical WAV file (PCM 16-bit mono) into an AudioBuffer.

    Int16 samples are scaled by 1/32768 into [-1, 1).
    """
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            comptype = wav.getcomptype()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            if comptype != "NONE":
                raise AudioDecodeError(f"{path}: expected PCM data, got compression {comptype!r}")
            if channels != 1:
                raise AudioDecodeError(f"{path}: expected mono audio, got {channels} channels")
            if width != 2:
                raise AudioDecodeError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
            raw = wav.readframes(n_frames)
    except FileNotFoundError:
        raise
    except (wave.Error, EOFError) as exc:
        raise AudioDecodeError(f"{path}: not a RIFF WAV file ({exc})") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(buf: AudioBuffer, path: str | Path) -> None:
    """Write an AudioBuffer as PCM 16-bit mono WAV, saturating samples to [-1, 1]."""
    clipped = np.clip(buf.samples, -1.0, 1.0)
    pcm = np.clip(np.rint(clipped * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(buf.sample_rate)
        wav.writeframes(pcm.tobytes())
