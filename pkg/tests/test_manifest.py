import hashlib
import json

import pytest

from featinv.errors import UsageError
from featinv.manifest import (MANIFEST_NAME, RunManifest, check_input_hashes,
                              environment_info, file_sha256, load_manifest)


def test_file_sha256_against_hashlib(tmp_path):
    p = tmp_path / "blob.bin"
    p.write_bytes(b"feature maps\x00" * 1000)
    assert file_sha256(p) == hashlib.sha256(p.read_bytes()).hexdigest()


def test_manifest_write_load_roundtrip(tmp_path):
    m = RunManifest("fmi", {"iters": 3, "layers": ["relu1_2"]},
                    weights_checksum="abc", inputs={"x.png": "00ff"},
                    outputs=["fmi_relu1_2_0.png"], environment=environment_info(),
                    wall_time_s=1.25)
    m.runs.append({"layer": "relu1_2", "index": 0, "final_loss": 2.0})
    path = m.write(tmp_path)
    assert path.name == MANIFEST_NAME
    data = load_manifest(path)
    assert data["command"] == "fmi"
    assert data["config"]["iters"] == 3
    assert data["runs"][0]["final_loss"] == 2.0
    assert data["format"] == 1
    assert "torch" in data["environment"]


def test_manifest_json_is_stable(tmp_path):
    m = RunManifest("inspect", {"a": 1, "b": 2})
    p1 = m.write(tmp_path)
    first = p1.read_bytes()
    assert m.write(tmp_path).read_bytes() == first
    # keys are sorted for diff-friendliness
    data = json.loads(first)
    assert list(data) == sorted(data)


def test_load_manifest_errors(tmp_path):
    with pytest.raises(UsageError, match="not found"):
        load_manifest(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(UsageError, match="not valid JSON"):
        load_manifest(bad)
    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"command": "fmi"}))
    with pytest.raises(UsageError, match="config"):
        load_manifest(partial)


def test_check_input_hashes(tmp_path):
    p = tmp_path / "in.png"
    p.write_bytes(b"aaa")
    good = {str(p): file_sha256(p)}
    check_input_hashes(good)  # no raise
    p.write_bytes(b"bbb")
    with pytest.raises(UsageError, match="changed"):
        check_input_hashes(good)
    with pytest.raises(UsageError, match="missing"):
        check_input_hashes({str(tmp_path / "gone.png"): "00"})
