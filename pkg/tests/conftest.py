import json
import wave

import numpy as np
import pytest

from wavrag.audio import AudioBuffer, write_wav


def make_wav(path, samples, rate=16000):
    """Write float samples as canonical PCM-16 mono WAV and return the path."""
    write_wav(AudioBuffer(np.asarray(samples, dtype=np.float64), rate), path)
    return path


def sine(freq_hz, duration_s, rate=16000, amplitude=0.5):
    t = np.arange(int(duration_s * rate)) / rate
    return amplitude * np.sin(2 * np.pi * freq_hz * t)


def make_stereo_wav(path, n_frames=100, rate=8000):
    """Non-canonical WAV (2 channels) for decode-error tests."""
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(b"\x00\x00" * 2 * n_frames)
    return path


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write((entry if isinstance(entry, str) else json.dumps(entry)) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def text_manifest(tmp_path):
    path = write_manifest(
        tmp_path / "manifest.jsonl",
        [
            {"id": "doc-1", "modality": "text", "text": "the capital of france is paris"},
            {"id": "doc-2", "modality": "text", "text": "water boils at one hundred degrees"},
            {"id": "doc-3", "modality": "text", "text": "the moon orbits the earth", "meta": {"source": "fixture"}},
        ],
    )
    return path
