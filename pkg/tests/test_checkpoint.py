import struct
import zlib

import numpy as np
import pytest

from liwn import checkpoint
from liwn.checkpoint import CheckpointError, dumps, loads


def restamp(body):
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class TestRoundTrip:
    def test_bit_exact(self, rng):
        tensors = {"w": rng.standard_normal((3, 4)).astype(np.float32),
                   "scalar": np.array(2.5, dtype=np.float32),
                   "empty": np.zeros((0, 5), dtype=np.float32),
                   "naïve": rng.standard_normal(7).astype(np.float32)}
        out = loads(dumps(tensors))
        assert list(out) == list(tensors)
        for k, v in tensors.items():
            assert out[k].dtype == np.float32 and out[k].shape == v.shape
            assert out[k].tobytes() == v.tobytes()
        assert dumps(out) == dumps(tensors)

    def test_non_contiguous_is_row_major(self, rng):
        w = rng.standard_normal((3, 4)).astype(np.float32)
        np.testing.assert_array_equal(loads(dumps({"t": w.T}))["t"], w.T)

    def test_special_values(self):
        v = np.array([np.nan, np.inf, -0.0, 1e-45], dtype=np.float32)
        assert loads(dumps({"v": v}))["v"].tobytes() == v.tobytes()

    def test_layout(self):
        blob = dumps({"ab": np.array([[1.0, 2.0]], dtype=np.float32)})
        assert blob[:4] == b"LIWN"
        assert struct.unpack_from("<II", blob, 4) == (1, 1)
        assert struct.unpack_from("<H", blob, 12) == (2,)
        assert blob[14:16] == b"ab"
        assert struct.unpack_from("<BII", blob, 16) == (2, 1, 2)
        assert struct.unpack_from("<2f", blob, 25) == (1.0, 2.0)
        assert len(blob) == 25 + 8 + 4

    def test_file_round_trip(self, tmp_path, rng):
        path = str(tmp_path / "a.ckpt")
        t = {"x": rng.standard_normal((2, 2)).astype(np.float32)}
        checkpoint.save(path, t)
        np.testing.assert_array_equal(checkpoint.load(path)["x"], t["x"])
        assert not (tmp_path / "a.ckpt.tmp").exists()

    def test_float64_is_stored_as_float32(self):
        out = loads(dumps({"x": np.array([1 / 3])}))["x"]
        assert out.dtype == np.float32 and out[0] == np.float32(1 / 3)


class TestCorruption:
    @pytest.fixture
    def blob(self, rng):
        return dumps({"a": rng.standard_normal(4).astype(np.float32),
                      "b": rng.standard_normal((2, 3)).astype(np.float32)})

    def test_flipped_byte(self, blob):
        for pos in (0, 10, 20, len(blob) - 10, len(blob) - 1):
            bad = bytearray(blob)
            bad[pos] ^= 0x40
            with pytest.raises(CheckpointError):
                loads(bytes(bad))

    def test_bad_magic(self, blob):
        with pytest.raises(CheckpointError):
            loads(restamp(b"LIWM" + blob[4:-4]))

    def test_bad_version(self, blob):
        body = bytearray(blob[:-4])
        body[4:8] = struct.pack("<I", 2)
        with pytest.raises(CheckpointError, match="version"):
            loads(restamp(bytes(body)))

    def test_duplicate_names(self):
        one = dumps({"a": np.ones(1, dtype=np.float32)})[12:-4]
        body = b"LIWN" + struct.pack("<II", 1, 2) + one + one
        with pytest.raises(CheckpointError, match="duplicate"):
            loads(restamp(body))

    def test_truncated(self, blob):
        for cut in (3, 20, len(blob) - 8):
            body = blob[:cut]
            with pytest.raises(CheckpointError):
                loads(restamp(body) if len(body) >= 12 else body)

    def test_trailing_bytes(self, blob):
        with pytest.raises(CheckpointError, match="trailing"):
            loads(restamp(blob[:-4] + b"\x00\x00\x00\x00"))

    def test_count_too_large(self, blob):
        body = bytearray(blob[:-4])
        body[8:12] = struct.pack("<I", 3)
        with pytest.raises(CheckpointError):
            loads(restamp(bytes(body)))
