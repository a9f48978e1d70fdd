import io
import struct

import pytest
import torch

from cbnlab.errors import MissingArtifactError, ShapeMismatchError
from cbnlab.tensor_io import (
    MAGIC,
    decode_tensor,
    encode_tensor,
    load_bundle,
    read_tensor,
    save_bundle,
    write_tensor,
)


def test_header_layout_is_little_endian():
    blob = encode_tensor(torch.zeros((2, 3), dtype=torch.float32))
    assert blob[:4] == MAGIC
    assert struct.unpack_from("<BBB", blob, 4) == (1, 1, 2)
    assert struct.unpack_from("<2Q", blob, 7) == (2, 3)
    assert len(blob) == 7 + 16 + 6 * 4


def test_float64_values_survive_exactly():
    t = torch.tensor([[1.0 / 3.0, -2.5e-300], [7.0, float("inf")]], dtype=torch.float64)
    back = decode_tensor(encode_tensor(t))
    assert back.dtype == torch.float64
    assert torch.equal(back, t)


def test_integer_tensors_are_widened_to_float64():
    back = decode_tensor(encode_tensor(torch.tensor([1, 2, 3])))
    assert back.dtype == torch.float64
    assert back.tolist() == [1.0, 2.0, 3.0]


def test_scalar_tensor():
    back = decode_tensor(encode_tensor(torch.tensor(4.0)))
    assert back.shape == ()
    assert back.item() == 4.0


def test_corrupt_files_are_rejected():
    blob = encode_tensor(torch.ones(4))
    with pytest.raises(ValueError, match="bad magic"):
        decode_tensor(b"XXXX" + blob[4:])
    with pytest.raises(ShapeMismatchError, match="payload"):
        decode_tensor(blob[:-4])
    with pytest.raises(ValueError, match="dtype code"):
        decode_tensor(blob[:5] + bytes([9]) + blob[6:])


def test_stream_and_path_targets(tmp_path):
    buffer = io.BytesIO()
    write_tensor(buffer, torch.arange(6.0).view(2, 3))
    buffer.seek(0)
    assert read_tensor(buffer).shape == (2, 3)

    write_tensor(tmp_path / "t.cbnt", torch.ones(2))
    assert read_tensor(tmp_path / "t.cbnt").tolist() == [1.0, 1.0]
    with pytest.raises(MissingArtifactError):
        read_tensor(tmp_path / "absent.cbnt")


def test_bundle_manifest_lists_tensors(tmp_path):
    root = save_bundle(tmp_path / "b", {"a": torch.zeros(2), "b": torch.ones((1, 2))}, {"kind": "demo"})
    manifest, tensors = load_bundle(root)
    assert manifest["kind"] == "demo"
    assert [e["name"] for e in manifest["tensors"]] == ["a", "b"]
    assert tensors["b"].shape == (1, 2)


def test_bundle_errors(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_bundle(tmp_path / "nowhere")
    root = save_bundle(tmp_path / "b", {"a": torch.zeros(2)}, {"kind": "demo"})
    write_tensor(root / "a.cbnt", torch.zeros(3))
    with pytest.raises(ShapeMismatchError, match="manifest says"):
        load_bundle(root)
