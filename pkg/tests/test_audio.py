"""WAV I/O contract: formats accepted, everything else rejected clearly."""

import struct

import numpy as np
import pytest

from targetvoice.audio import AudioBuffer, AudioFormatError, read_wav, write_wav


@pytest.fixture
def samples():
    rng = np.random.default_rng(0)
    return np.clip(0.3 * rng.standard_normal(9600), -0.99, 0.99).astype(np.float32)


class TestRoundTrip:
    def test_float32_exact(self, tmp_path, samples):
        path = tmp_path / "f32.wav"
        write_wav(path, AudioBuffer(samples))
        back = read_wav(path)
        assert back.sample_rate == 48000
        np.testing.assert_array_equal(back.samples, samples)

    def test_pcm16_close(self, tmp_path, samples):
        path = tmp_path / "i16.wav"
        write_wav(path, samples, pcm16=True)
        back = read_wav(path)
        np.testing.assert_allclose(back.samples, samples, rtol=0, atol=0.51 / 32767)

    def test_plain_array_accepted(self, tmp_path):
        path = tmp_path / "arr.wav"
        write_wav(path, np.zeros(480, dtype=np.float64))
        assert len(read_wav(path)) == 480


class TestRejection:
    def test_stereo_rejected(self, tmp_path, samples):
        path = tmp_path / "stereo.wav"
        interleaved = np.repeat(samples[:100], 2)
        payload = interleaved.astype("<f4").tobytes()
        header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        header += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 2, 48000, 48000 * 8, 8, 32)
        header += b"data" + struct.pack("<I", len(payload))
        path.write_bytes(header + payload)
        with pytest.raises(AudioFormatError, match="mono"):
            read_wav(path)

    def test_wrong_rate_rejected(self, tmp_path):
        path = tmp_path / "rate.wav"
        payload = np.zeros(100, dtype="<f4").tobytes()
        header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        header += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, 44100, 44100 * 4, 4, 32)
        header += b"data" + struct.pack("<I", len(payload))
        path.write_bytes(header + payload)
        with pytest.raises(AudioFormatError, match="48000"):
            read_wav(path)

    def test_unsupported_format_rejected(self, tmp_path):
        path = tmp_path / "f64.wav"
        payload = np.zeros(100, dtype="<f8").tobytes()
        header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        header += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, 48000, 48000 * 8, 8, 64)
        header += b"data" + struct.pack("<I", len(payload))
        path.write_bytes(header + payload)
        with pytest.raises(AudioFormatError, match="float32"):
            read_wav(path)

    def test_not_a_wav(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"definitely not RIFF data")
        with pytest.raises(AudioFormatError, match="RIFF"):
            read_wav(path)

    def test_nan_samples_rejected(self):
        bad = np.zeros(100, dtype=np.float32)
        bad[3] = np.nan
        with pytest.raises(AudioFormatError, match="NaN"):
            AudioBuffer(bad)

    def test_wrong_buffer_rate_rejected(self):
        with pytest.raises(AudioFormatError, match="48000"):
            AudioBuffer(np.zeros(10, dtype=np.float32), sample_rate=16000)
