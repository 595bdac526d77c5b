import json
import struct
from pathlib import Path

import numpy as np
import pytest

from model_export.fixtures import dump_fixtures, write_dffa


def read_dffa_oracle(path: Path) -> np.ndarray:
    """Independent decode of the DFFA container from its written layout."""
    raw = path.read_bytes()
    assert raw[:4] == b"DFFA"
    version, dtype, ndim, h, w, c = struct.unpack("<HBBIII", raw[4:20])
    assert (version, dtype, ndim) == (1, 1, 3)
    payload = np.frombuffer(raw[20:], dtype="<f4")
    assert payload.size == h * w * c
    return payload.reshape(h, w, c)


def test_write_dffa_round_trip(tmp_path) -> None:
    rng = np.random.default_rng(2)
    data = rng.random((5, 7, 4), dtype=np.float32)
    path = tmp_path / "a.dffa"
    write_dffa(path, data)
    assert np.array_equal(read_dffa_oracle(path), data)


def test_write_dffa_rejects_wrong_rank(tmp_path) -> None:
    with pytest.raises(ValueError):
        write_dffa(tmp_path / "bad.dffa", np.zeros((3, 3), dtype=np.float32))


def test_dump_fixtures_writes_files_and_manifest(
    vgg19_tap_model, sample_images, tmp_path
) -> None:
    out = tmp_path / "acts"
    manifest_path = dump_fixtures(
        vgg19_tap_model, "conv5_4", sample_images, out, input_size=64
    )
    doc = json.loads(manifest_path.read_text())
    assert doc["layer"] == "conv5_4"
    assert doc["model"] == str(vgg19_tap_model)
    assert [r["id"] for r in doc["images"]] == [i for i, _ in sample_images]
    for record in doc["images"]:
        data = read_dffa_oracle(Path(record["activation_path"]))
        # conv5_4 on a 64x64 input: 4x4 spatial, 512 channels, non-negative
        assert data.shape == (4, 4, 512)
        assert data.min() >= 0.0


def test_dump_fixtures_empty_list(vgg19_tap_model, tmp_path) -> None:
    manifest_path = dump_fixtures(vgg19_tap_model, "conv5_4", [], tmp_path / "empty")
    doc = json.loads(manifest_path.read_text())
    assert doc["images"] == []


def test_dump_fixtures_unknown_tap(vgg19_tap_model, sample_images, tmp_path) -> None:
    with pytest.raises(KeyError):
        dump_fixtures(
            vgg19_tap_model, "conv1_1", sample_images, tmp_path / "x", input_size=64
        )


def test_dump_fixtures_deterministic(vgg19_tap_model, sample_images, tmp_path) -> None:
    m1 = dump_fixtures(vgg19_tap_model, "conv4_4", sample_images, tmp_path / "r1", 64)
    m2 = dump_fixtures(vgg19_tap_model, "conv4_4", sample_images, tmp_path / "r2", 64)
    for record1, record2 in zip(
        json.loads(m1.read_text())["images"], json.loads(m2.read_text())["images"]
    ):
        b1 = Path(record1["activation_path"]).read_bytes()
        b2 = Path(record2["activation_path"]).read_bytes()
        assert b1 == b2
