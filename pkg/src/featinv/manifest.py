"""Run manifests: the full record needed to reproduce a run bit-exactly."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .errors import UsageError

MANIFEST_FORMAT = 1
MANIFEST_NAME = "manifest.json"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    weights_checksum: str = ""
    inputs: dict = field(default_factory=dict)     # path -> sha256
    runs: list = field(default_factory=list)       # per-cell records
    outputs: list = field(default_factory=list)    # file names relative to out dir
    environment: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    format: int = MANIFEST_FORMAT

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def environment_info() -> dict:
    from . import __version__
    return {"package": f"featinv {__version__}", "torch": torch.__version__}


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise UsageError(f"manifest {path} is not valid JSON: {exc}") from exc
    for key in ("command", "config"):
        if key not in data:
            raise UsageError(f"manifest {path} is missing the {key!r} field")
    return data


def check_input_hashes(inputs: dict) -> None:
    """Verify recorded input files still hash to what the manifest saw."""
    for path, digest in inputs.items():
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"manifest input missing: {path}")
        now = file_sha256(p)
        if now != digest:
            raise UsageError(f"manifest input changed: {path} "
                             f"(recorded {digest[:12]}..., found {now[:12]}...)")
