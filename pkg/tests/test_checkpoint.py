import struct

import numpy as np
import pytest

from linecounter.checkpoint import loadCheckpoint, packCheckpoint, saveCheckpoint, unpackCheckpoint
from linecounter.errors import FormatError
from linecounter.linemap import countMapFromLineMap
from linecounter.model import build, lossMaskedL1
from linecounter.optim import Adam
from linecounter.utils import getCRC


@pytest.fixture
def trained(tiny_config, tiny_pairs):
    """A tiny model after two Adam steps, so BatchNorm statistics and moments are non-trivial."""
    model = build(tiny_config, seed=2)
    optimizer = Adam(model.parameters(), lr=1e-3)
    images = np.stack([image for image, _ in tiny_pairs[:2]])[:, None]
    linemaps = np.stack([linemap for _, linemap in tiny_pairs[:2]])[:, None]
    target = countMapFromLineMap(linemaps)
    for _ in range(2):
        optimizer.zeroGrad()
        lossMaskedL1(model(images), target.values, target.mask).backward()
        optimizer.step()
    return model, optimizer


def _resign(body):
    return body + struct.pack("<B", getCRC(body))


class TestRoundTrip:
    def test_model_and_optimizer_are_bit_exact(self, tmp_path, trained):
        model, optimizer = trained
        path = tmp_path / "model.lcnt"
        saveCheckpoint(path, model, optimizer, metadata={"epoch": 7})
        loaded, loaded_optimizer, header = loadCheckpoint(path, optimizer_factory=lambda params: Adam(params))

        assert header["metadata"] == {"epoch": 7}
        assert loaded.config == model.config
        for (name, a), (_, b) in zip(model.namedParameters(), loaded.namedParameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)
            np.testing.assert_array_equal(a.adam_m, b.adam_m, err_msg=name)
            np.testing.assert_array_equal(a.adam_v, b.adam_v, err_msg=name)
        for (name, a), (_, b) in zip(model.namedBuffers(), loaded.namedBuffers()):
            np.testing.assert_array_equal(a, b, err_msg=name)
        assert loaded_optimizer.t == optimizer.t == 2
        assert loaded_optimizer.lr == optimizer.lr

    def test_loaded_model_predicts_identically(self, tmp_path, trained, rng):
        model, _ = trained
        saveCheckpoint(tmp_path / "model.lcnt", model)
        loaded, optimizer, _ = loadCheckpoint(tmp_path / "model.lcnt")
        assert optimizer is None
        batch = rng.random((2, 1, 32, 32)).astype(np.float32)
        model.eval()
        loaded.eval()
        np.testing.assert_array_equal(model(batch).data, loaded(batch).data)

    def test_no_temporary_file_is_left(self, tmp_path, trained):
        saveCheckpoint(tmp_path / "model.lcnt", trained[0])
        assert [p.name for p in tmp_path.iterdir()] == ["model.lcnt"]

    def test_pack_unpack(self, rng):
        entries = [("a", rng.standard_normal((2, 3)).astype(np.float32)), ("scalar", np.float32(4.5))]
        config, unpacked = unpackCheckpoint(packCheckpoint({"k": [1, 2]}, entries))
        assert config == {"k": [1, 2]}
        np.testing.assert_array_equal(unpacked["a"], entries[0][1])
        assert unpacked["scalar"].shape == ()


class TestFormat:
    def test_header_prefix(self, tmp_path, trained):
        saveCheckpoint(tmp_path / "model.lcnt", trained[0])
        raw = (tmp_path / "model.lcnt").read_bytes()
        assert raw[:8] == b"LCNT" + struct.pack("<I", 1)

    def test_entries_follow_the_config_directly(self):
        weight = np.arange(6, dtype=np.float32).reshape(2, 3)
        raw = packCheckpoint({"k": 1}, [("w", weight)])
        header = b'{"k": 1}'
        expected = (
            b"LCNT" + struct.pack("<II", 1, len(header)) + header
            + struct.pack("<I", 1) + b"w" + struct.pack("<III", 2, 2, 3)
            + weight.astype("<f4").tobytes()
        )
        assert raw[:-1] == expected
        assert raw[-1] == getCRC(expected)

    def test_truncated_entry(self):
        body = packCheckpoint({}, [("w", np.ones((4, 4), dtype=np.float32))])[:-1]
        with pytest.raises(FormatError) as excinfo:
            unpackCheckpoint(_resign(body[:-8]))
        assert excinfo.value.field == "data"

    def test_flipped_byte_fails_the_crc(self, tmp_path, trained):
        saveCheckpoint(tmp_path / "model.lcnt", trained[0])
        raw = bytearray((tmp_path / "model.lcnt").read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        with pytest.raises(FormatError) as excinfo:
            unpackCheckpoint(bytes(raw))
        assert excinfo.value.field == "crc"

    def test_too_short(self):
        with pytest.raises(FormatError) as excinfo:
            unpackCheckpoint(b"LCNT")
        assert excinfo.value.field == "length"

    def test_bad_magic(self):
        body = packCheckpoint({}, [])[:-1]
        with pytest.raises(FormatError) as excinfo:
            unpackCheckpoint(_resign(b"XXXX" + body[4:]))
        assert excinfo.value.field == "magic"

    def test_unknown_version(self):
        body = packCheckpoint({}, [])[:-1]
        with pytest.raises(FormatError) as excinfo:
            unpackCheckpoint(_resign(body[:4] + struct.pack("<I", 2) + body[8:]))
        assert excinfo.value.field == "version"

    def test_missing_parameter(self, tmp_path, tiny_config):
        model = build(tiny_config)
        header = {"model": tiny_config.toDict(), "seed": 0, "metadata": {}}
        entries = [(name, param.data) for name, param in model.namedParameters()][1:]
        (tmp_path / "partial.lcnt").write_bytes(packCheckpoint(header, entries))
        with pytest.raises(FormatError) as excinfo:
            loadCheckpoint(tmp_path / "partial.lcnt")
        assert excinfo.value.field == "encoder.stage0.conv.conv.weight"
