import numpy as np
import pytest

from texdiff.rtfio import FormatError, load_bundle, read_rtf, save_bundle, write_rtf


def test_rtf_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((3, 5, 7)).astype(np.float32)
    path = tmp_path / "t.rtf"
    write_rtf(path, arr)
    np.testing.assert_array_equal(read_rtf(path), arr)


def test_rtf_header_layout(tmp_path):
    path = tmp_path / "t.rtf"
    write_rtf(path, np.zeros((1, 2, 3), dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"RTF1"
    assert len(raw) == 16 + 12 + 4 * 6


def test_rtf_bad_magic(tmp_path):
    path = tmp_path / "bad.rtf"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError):
        read_rtf(path)


def test_bundle_round_trip_preserves_shapes_and_order(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "conv.weight": rng.standard_normal((4, 2, 3, 3)).astype(np.float32),
        "conv.bias": rng.standard_normal(4).astype(np.float32),
        "latent": rng.standard_normal((24, 12, 12)).astype(np.float32),
    }
    path = tmp_path / "params.rtfz"
    save_bundle(path, tensors)
    loaded = load_bundle(path)
    assert list(loaded) == list(tensors)
    for name in tensors:
        np.testing.assert_array_equal(loaded[name], tensors[name])


def test_bundle_is_deterministic(tmp_path):
    tensors = {"a": np.ones((2, 2, 2), dtype=np.float32)}
    p1, p2 = tmp_path / "a.rtfz", tmp_path / "b.rtfz"
    save_bundle(p1, tensors)
    save_bundle(p2, tensors)
    assert p1.read_bytes() == p2.read_bytes()
