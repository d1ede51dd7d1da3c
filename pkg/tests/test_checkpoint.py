import struct
import zlib

import numpy as np
import pytest

from sparsevit.checkpoint import (MAGIC, content_hash, dumps, load_checkpoint, loads,
                                  save_checkpoint)
from sparsevit.errors import FormatError
from sparsevit.tensor import Tensor
from sparsevit.vit import ParamStore, ViTConfig, init_params


@pytest.fixture(scope="module")
def params():
    return init_params(ViTConfig(), 0)


def test_round_trip_is_bitwise(tmp_path, params):
    raw = save_checkpoint(tmp_path / "m.spvt", params)
    loaded = load_checkpoint(tmp_path / "m.spvt")
    assert loaded.bitwise_equal(params)
    assert loaded.names() == params.names()
    assert dumps(loaded) == raw


def test_f32_payload(params):
    loaded = loads(dumps(params, "f32"))
    for name, t in params.items():
        np.testing.assert_array_equal(loaded[name].data, t.data.astype(np.float32))


def test_header_layout():
    store = ParamStore({"w": Tensor(np.arange(6.0).reshape(2, 3))})
    raw = dumps(store)
    assert raw[:4] == MAGIC
    assert struct.unpack("<II", raw[4:12]) == (1, 1)
    assert struct.unpack("<H", raw[12:14]) == (1,)
    assert raw[14:15] == b"w"
    assert struct.unpack("<BII", raw[15:24]) == (2, 2, 3)
    assert raw[24] == 1
    np.testing.assert_array_equal(np.frombuffer(raw[25:25 + 48], "<f8"), np.arange(6.0))
    assert struct.unpack("<I", raw[-4:])[0] == zlib.crc32(raw[:-4])
    assert len(raw) == 25 + 48 + 4


def test_corruption_is_refused(params):
    raw = bytearray(dumps(params))
    flipped = bytearray(raw)
    flipped[100] ^= 0x01
    with pytest.raises(FormatError, match="CRC"):
        loads(bytes(flipped))
    with pytest.raises(FormatError, match="magic"):
        loads(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        loads(bytes(raw[:10]))


def test_truncated_body_with_valid_crc():
    body = dumps(ParamStore({"w": Tensor(np.ones(4))}))[:-4]
    cut = body[:-8]
    with pytest.raises(FormatError, match="truncated"):
        loads(cut + struct.pack("<I", zlib.crc32(cut)))


def test_content_hash_is_git_blob_id():
    assert content_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert content_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"
