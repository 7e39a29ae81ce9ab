import struct

import numpy as np
import pytest

from daponet.model import build, preset
from daponet.rng import Rng
from daponet.weights import (ChecksumError, FingerprintError, MagicError, ShapeMismatchError,
                             VersionError, from_bytes, load_weights, save_weights, to_bytes)


@pytest.fixture(scope="module")
def store():
    return build(preset("tiny"), Rng(0))[1]


def test_roundtrip_bit_exact(store):
    back = from_bytes(to_bytes(store))
    assert list(back.tensors) == list(store.tensors)
    for k, v in store.tensors.items():
        assert back.tensors[k].tobytes() == v.astype("<f4").tobytes()
    assert back.fingerprint == store.fingerprint and back.seed == store.seed


def test_serialization_is_deterministic(store):
    assert to_bytes(store) == to_bytes(build(preset("tiny"), Rng(0))[1])


def test_layout_magic_version(store):
    blob = to_bytes(store)
    assert blob[:4] == b"DAPW"
    assert struct.unpack_from("<I", blob, 4)[0] == 1


def test_bad_magic(store):
    with pytest.raises(MagicError):
        from_bytes(b"XXXX" + to_bytes(store)[4:])


def test_bad_version(store):
    blob = bytearray(to_bytes(store))
    blob[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionError):
        from_bytes(bytes(blob))


def test_flipped_payload_bit(store):
    blob = bytearray(to_bytes(store))
    blob[-10] ^= 0x01
    with pytest.raises(ChecksumError):
        from_bytes(bytes(blob))


def test_truncated(store):
    with pytest.raises(ChecksumError):
        from_bytes(to_bytes(store)[:-100])


def test_load_checks(tmp_path, store):
    p = tmp_path / "w.dapw"
    save_weights(store, p)
    assert not list(tmp_path.glob("*.tmp"))
    load_weights(p, expect_fingerprint=store.fingerprint,
                 expect_shapes={k: v.shape for k, v in store.tensors.items()})
    with pytest.raises(FingerprintError):
        load_weights(p, expect_fingerprint="0" * 16)
    shapes = {k: v.shape for k, v in store.tensors.items()}
    first = next(iter(shapes))
    shapes[first] = (1,)
    with pytest.raises(ShapeMismatchError):
        load_weights(p, expect_shapes=shapes)


def test_failed_save_leaves_no_file(tmp_path, store, monkeypatch):
    import daponet.weights as W

    def boom(*a):
        raise OSError("disk full")
    monkeypatch.setattr(W.os, "replace", boom)
    with pytest.raises(OSError):
        save_weights(store, tmp_path / "w.dapw")
    assert list(tmp_path.iterdir()) == []
