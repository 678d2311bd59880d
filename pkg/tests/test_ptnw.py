import struct

import numpy as np
import pytest

from presstyle.errors import BadMagicError, TruncatedPayloadError, VersionMismatchError
from presstyle.numerics import dumps_params, loads_params


@pytest.fixture
def params(rng):
    return {
        "enc.conv1.w": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "enc.conv1.b": rng.normal(size=4).astype(np.float32),
        "meta.scale": np.float32(2.5).reshape(()),
        "dec.fc.w": rng.normal(size=(131, 96)).astype(np.float32),
    }


def test_round_trip(params):
    back = loads_params(dumps_params(params))
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == params[k].shape
        np.testing.assert_array_equal(back[k], params[k])


def test_layout(params):
    blob = dumps_params({"ab": np.array([[1.0, 2.0]], dtype=np.float32)})
    assert blob[:4] == b"PTNW"
    version, count = struct.unpack("<HI", blob[4:10])
    assert (version, count) == (1, 1)
    assert blob[10:12] == struct.pack("<H", 2) and blob[12:14] == b"ab"
    assert blob[14] == 2 and struct.unpack("<2I", blob[15:23]) == (1, 2)
    assert np.frombuffer(blob[23:], dtype="<f4").tolist() == [1.0, 2.0]


def test_bad_magic(params):
    with pytest.raises(BadMagicError):
        loads_params(b"XXXX" + dumps_params(params)[4:])


def test_version(params):
    blob = bytearray(dumps_params(params))
    blob[4:6] = struct.pack("<H", 9)
    with pytest.raises(VersionMismatchError):
        loads_params(bytes(blob))


def test_truncated(params):
    with pytest.raises(TruncatedPayloadError):
        loads_params(dumps_params(params)[:-3])
