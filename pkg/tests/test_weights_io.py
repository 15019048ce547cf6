"""Weight-file format: bit-exact round trips, corruption diagnostics."""

import numpy as np
import pytest

from targetvoice import weights_io as wio


@pytest.fixture
def entries():
    rng = np.random.default_rng(0)
    return [
        ("layer1.W", "dense", rng.standard_normal((8, 4)).astype(np.float32)),
        ("layer1.b", "dense", rng.standard_normal(4).astype(np.float32)),
        ("gru.Wx", "gru", rng.standard_normal((4, 12)).astype(np.float32)),
        ("meta.dim", "scalar", np.array([4.0], dtype=np.float32)),
    ]


class TestRoundTrip:
    def test_save_load_save_identical_bytes(self, entries):
        blob1 = wio.pack_weights("enhancer", entries)
        kind, loaded = wio.unpack_weights(blob1)
        assert kind == "enhancer"
        blob2 = wio.pack_weights(
            "enhancer", [(n, loaded[n][0], loaded[n][1]) for n, _, _ in entries]
        )
        assert blob1 == blob2

    def test_arrays_bit_exact(self, entries):
        _, loaded = wio.unpack_weights(wio.pack_weights("x", entries))
        for name, kind, arr in entries:
            got_kind, got = loaded[name]
            assert got_kind == kind
            np.testing.assert_array_equal(got, arr)

    def test_file_roundtrip(self, tmp_path, entries):
        path = tmp_path / "w.ppnw"
        wio.save_weights(path, "embedder", entries)
        kind, loaded = wio.load_weights(path, expect_kind="embedder")
        assert set(loaded) == {n for n, _, _ in entries}

    def test_size_is_header_plus_float32_payload(self, entries):
        blob = wio.pack_weights("x", entries)
        n_params = sum(arr.size for _, _, arr in entries)
        header = len(blob) - 4 * n_params
        assert 0 < header < 256
        assert len(blob) == header + 4 * n_params


class TestCorruption:
    def test_truncation_is_checksum_error(self, entries):
        blob = wio.pack_weights("x", entries)
        with pytest.raises(wio.WeightsFormatError, match="checksum"):
            wio.unpack_weights(blob[:-9])

    def test_flipped_byte_is_checksum_error(self, entries):
        blob = bytearray(wio.pack_weights("x", entries))
        blob[30] ^= 0xFF
        with pytest.raises(wio.WeightsFormatError, match="checksum"):
            wio.unpack_weights(bytes(blob))

    def test_bad_magic(self):
        with pytest.raises(wio.WeightsFormatError, match="magic"):
            wio.unpack_weights(b"NOPE" + b"\x00" * 64)

    def test_wrong_version(self, entries):
        blob = bytearray(wio.pack_weights("x", entries))
        blob[4] = 99
        import struct, zlib
        body = bytes(blob[:-4])
        fixed = body + struct.pack("<I", zlib.crc32(body))
        with pytest.raises(wio.WeightsFormatError, match="version"):
            wio.unpack_weights(fixed)

    def test_wrong_kind_rejected(self, tmp_path, entries):
        path = tmp_path / "w.ppnw"
        wio.save_weights(path, "embedder", entries)
        with pytest.raises(wio.WeightsFormatError, match="expected"):
            wio.load_weights(path, expect_kind="enhancer")


class TestEmbeddingFiles:
    def test_roundtrip_unit_norm(self, tmp_path):
        rng = np.random.default_rng(1)
        vec = rng.standard_normal(16)
        vec /= np.linalg.norm(vec)
        path = tmp_path / "emb.ppnw"
        wio.save_embedding(path, vec)
        back = wio.load_embedding(path)
        assert np.linalg.norm(back) == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(back, vec, atol=1e-6)

    def test_non_unit_vector_rejected_on_load(self, tmp_path):
        path = tmp_path / "bad.ppnw"
        wio.save_embedding(path, np.full(8, 3.0))
        with pytest.raises(wio.WeightsFormatError, match="norm"):
            wio.load_embedding(path)
