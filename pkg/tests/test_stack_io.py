import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bgan.stack_io import (
    BadMagicError,
    CheckpointCorruptError,
    ImageStack,
    InvariantError,
    NonFinitePixelError,
    RunManifest,
    TruncatedError,
    VersionMismatchError,
    load_checkpoint,
    normalize,
    denormalize,
    parse_stack,
    read_stack,
    save_checkpoint,
    stack_bytes,
    write_stack,
)


def test_empty_stack_is_header_plus_flag(tmp_path):
    path = tmp_path / "empty.bgis"
    write_stack(ImageStack(np.zeros((0, 32, 32), np.float32)), path)
    data = path.read_bytes()
    assert len(data) == 21
    assert data[:4] == b"BGIS"
    assert struct.unpack("<IIII", data[4:20]) == (1, 0, 32, 32)
    assert data[20] == 0


def test_constant_image_payload():
    data = stack_bytes(ImageStack(np.full((1, 2, 2), 0.5, np.float32)))
    assert data[20:36] == struct.pack("<4f", 0.5, 0.5, 0.5, 0.5)
    assert data[36:] == b"\x00"


def test_labels_follow_flag_byte():
    stack = ImageStack(np.zeros((2, 1, 1), np.float32), labels=[3, -1])
    data = stack_bytes(stack)
    assert data[28] == 1
    assert struct.unpack("<2i", data[29:]) == (3, -1)


def test_header_is_little_endian():
    data = stack_bytes(ImageStack(np.zeros((258, 1, 3), np.float32)))
    assert data[8:12] == bytes([2, 1, 0, 0])
    assert data[16:20] == bytes([3, 0, 0, 0])


stacks = st.integers(0, 4).flatmap(
    lambda n: st.tuples(
        arrays(np.float32, (n, 3, 5), elements=st.floats(0, 1, width=32)),
        st.one_of(st.none(), arrays(np.int32, (n,), elements=st.integers(-2**31, 2**31 - 1))),
    )
)


@given(stacks)
def test_round_trip_is_bit_exact(pair):
    pixels, labels = pair
    back = parse_stack(stack_bytes(ImageStack(pixels, labels)))
    assert back.pixels.tobytes() == pixels.tobytes()
    if labels is None:
        assert back.labels is None
    else:
        assert np.array_equal(back.labels, labels)


def test_file_round_trip_with_sidecar(tmp_path, rng):
    stack = ImageStack(rng.random((3, 4, 4)).astype(np.float32), [0, 1, 2],
                       {"source": "test", "snr": 0.1})
    path = tmp_path / "s.bgis"
    write_stack(stack, path)
    back = read_stack(path)
    assert np.array_equal(back.pixels, stack.pixels)
    side = json.loads((tmp_path / "s.bgis.json").read_text())
    assert side["snr"] == 0.1 and side["normalization"] == {"min": 0.0, "max": 1.0}
    assert back.meta["source"] == "test"


def test_bad_magic():
    data = bytearray(stack_bytes(ImageStack(np.zeros((1, 2, 2), np.float32))))
    data[:4] = b"XXXX"
    with pytest.raises(BadMagicError) as exc:
        parse_stack(bytes(data))
    assert exc.value.code == "bad_magic"


def test_truncated_payload():
    data = stack_bytes(ImageStack(np.zeros((2, 2, 2), np.float32)))
    with pytest.raises(TruncatedError) as exc:
        parse_stack(data[:30])
    assert exc.value.code == "truncated"


def test_version_mismatch():
    data = bytearray(stack_bytes(ImageStack(np.zeros((1, 2, 2), np.float32))))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError):
        parse_stack(bytes(data))


def test_nan_payload_rejected():
    data = bytearray(stack_bytes(ImageStack(np.zeros((1, 1, 2), np.float32))))
    data[20:24] = struct.pack("<f", float("nan"))
    with pytest.raises(NonFinitePixelError) as exc:
        parse_stack(bytes(data))
    assert exc.value.code == "non_finite"


def test_error_codes_are_distinct():
    codes = {e.code for e in (BadMagicError, TruncatedError, VersionMismatchError, NonFinitePixelError)}
    assert len(codes) == 4


def test_out_of_range_write_rejected(tmp_path):
    with pytest.raises(InvariantError, match=r"\[0, 1\]"):
        write_stack(ImageStack(np.full((1, 2, 2), 1.5, np.float32)), tmp_path / "bad.bgis")


def test_label_length_checked():
    with pytest.raises(InvariantError):
        ImageStack(np.zeros((3, 2, 2)), labels=[0, 1])


@given(arrays(np.float64, (2, 3, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_maps_into_unit_interval_and_inverts(raw):
    px, norm = normalize(raw)
    assert px.min() >= 0 and px.max() <= 1
    if norm["max"] > norm["min"]:
        np.testing.assert_allclose(denormalize(px, norm), raw, atol=1e-9 * max(1, np.abs(raw).max()))


def _manifest(seed=7):
    return RunManifest("run-1", {"lr": 0.01}, seed, "2024-01-01T00:00:00", {"x": "abc"})


def test_checkpoint_round_trip(tmp_path):
    blob = bytes(range(256)) * 3
    path = tmp_path / "m.bgck"
    save_checkpoint(blob, _manifest(), path)
    back, man = load_checkpoint(path)
    assert back == blob
    assert man.seed == 7 and man.config == {"lr": 0.01}


def test_tampered_checkpoint_detected(tmp_path):
    path = tmp_path / "m.bgck"
    save_checkpoint(b"weights" * 10, _manifest(), path)
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointCorruptError) as exc:
        load_checkpoint(path)
    assert exc.value.code == "hash_mismatch"


def test_manifest_file_round_trip(tmp_path):
    m = _manifest(3)
    m.write(tmp_path / "manifest.json")
    assert RunManifest.read(tmp_path / "manifest.json") == m
