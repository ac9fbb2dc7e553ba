import struct

import numpy as np
import pytest

from stacktier import container
from stacktier.errors import ModelFormatError


def sample_state():
    return {"b": [1, 2.5, None, "x"], "a": {"arr": np.arange(6, dtype=np.int32).reshape(2, 3),
                                           "f": np.array([0.1, np.pi]),
                                           "flags": np.array([True, False])},
            "z": np.float64(1.25), "empty": np.zeros(0)}


def test_roundtrip_and_layout():
    data = container.pack(sample_state())
    assert data[:6] == b"TLENS1"
    version, length = struct.unpack_from("<HQ", data, 6)
    assert version == container.VERSION and length == len(data) - 16
    back = container.unpack(data)
    assert back["b"] == [1, 2.5, None, "x"] and back["z"] == 1.25
    assert back["a"]["arr"].dtype == np.int32 and back["a"]["arr"].tolist() == [[0, 1, 2],
                                                                                [3, 4, 5]]
    assert np.array_equal(back["a"]["f"], [0.1, np.pi])
    assert back["a"]["flags"].dtype == bool
    assert back["empty"].shape == (0,)
    assert container.pack(back) == data   # canonical bytes


def test_manifest_is_self_describing():
    data = container.pack(sample_state())
    (mlen,) = struct.unpack_from("<Q", data, 16)
    import json
    manifest = json.loads(data[24:24 + mlen])
    assert manifest["a"]["arr"]["dtype"] == "<i4" and manifest["a"]["arr"]["shape"] == [2, 3]


def test_corruptions_rejected(tmp_path):
    data = container.pack(sample_state())
    with pytest.raises(ModelFormatError, match="magic"):
        container.unpack(b"XLENS1" + data[6:])
    with pytest.raises(ModelFormatError, match="version"):
        container.unpack(data[:6] + struct.pack("<H", 99) + data[8:])
    with pytest.raises(ModelFormatError, match="length"):
        container.unpack(data[:-3])
    with pytest.raises(ModelFormatError):
        container.unpack(b"TL")
    bad = bytearray(data)
    bad[24] = ord("{") - 1
    with pytest.raises(ModelFormatError):
        container.unpack(bytes(bad))
    with pytest.raises(ModelFormatError, match="cannot read"):
        container.load(tmp_path / "none.tlens")


def test_save_is_atomic_and_loadable(tmp_path):
    p = container.save(tmp_path / "sub" / "m.tlens", sample_state())
    assert container.load(p)["b"][3] == "x"
    assert [f.name for f in p.parent.iterdir()] == ["m.tlens"]
