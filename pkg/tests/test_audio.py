import numpy as np
import pytest

from wavrag.audio import AudioBuffer, read_wav, write_wav
from wavrag.errors import AudioDecodeError

from conftest import make_stereo_wav, make_wav, sine


def test_pcm16_roundtrip_exact(tmp_path):
    # Values on the PCM grid survive write -> read exactly.
    grid = np.array([-32768, -12345, -1, 0, 1, 20000, 32767]) / 32768.0
    path = make_wav(tmp_path / "grid.wav", grid, rate=8000)
    loaded = read_wav(path)
    assert loaded.sample_rate == 8000
    assert np.array_equal(loaded.samples, grid)


def test_write_saturates_out_of_range(tmp_path):
    buf = AudioBuffer(np.array([2.0, -3.0, 0.5]), 8000)
    path = tmp_path / "clip.wav"
    write_wav(buf, path)
    loaded = read_wav(path)
    assert loaded.samples[0] == 32767 / 32768.0
    assert loaded.samples[1] == -1.0
    assert abs(loaded.samples[2] - 0.5) < 1e-4


def test_stereo_rejected(tmp_path):
    path = make_stereo_wav(tmp_path / "stereo.wav")
    with pytest.raises(AudioDecodeError, match="2 channels"):
        read_wav(path)


def test_not_a_wav_rejected(tmp_path):
    path = tmp_path / "noise.wav"
    path.write_bytes(b"this is not RIFF data")
    with pytest.raises(AudioDecodeError, match="not a RIFF WAV"):
        read_wav(path)


def test_eight_bit_rejected(tmp_path):
    import wave

    path = tmp_path / "eight.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(8000)
        w.writeframes(b"\x80" * 64)
    with pytest.raises(AudioDecodeError, match="8-bit"):
        read_wav(path)


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "absent.wav")


def test_buffer_validation():
    with pytest.raises(ValueError, match="finite"):
        AudioBuffer(np.array([np.inf]), 8000)
    with pytest.raises(ValueError, match="positive"):
        AudioBuffer(np.zeros(4), 0)


def test_rms_and_duration(tmp_path):
    buf = AudioBuffer(sine(440, 1.0, rate=16000, amplitude=0.5), 16000)
    assert abs(buf.duration_s - 1.0) < 1e-9
    assert abs(buf.rms() - 0.5 / np.sqrt(2)) < 1e-3
    assert AudioBuffer(np.array([]), 8000).rms() == 0.0
