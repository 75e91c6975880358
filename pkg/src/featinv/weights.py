"""Fetch-and-cache step for the pinned VGG-19 trunk weights.

Kept separate from load_backbone so runs can pin and verify the exact
parameter file they used.
"""

from __future__ import annotations

import hashlib
import os
import urllib.request
from pathlib import Path

from .errors import UsageError, WeightsError

# Published ImageNet-trained VGG-19 release. The filename embeds the leading
# bytes of its sha256 digest, which is what gets verified after download.
VGG19_URL = "https://download.pytorch.org/models/vgg19-dcbb9e9d.pth"
VGG19_SHA256_PREFIX = "dcbb9e9d"

WEIGHTS_ENV_VAR = "FEATINV_WEIGHTS"


def cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME", str(Path.home() / ".cache"))
    return Path(base) / "featinv"


def default_weights_path() -> Path:
    return cache_dir() / Path(VGG19_URL).name


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_weights(dest: str | Path | None = None, url: str = VGG19_URL,
                  sha256_prefix: str = VGG19_SHA256_PREFIX) -> Path:
    """Download the pinned weights file, verify its digest, cache it.

    Returns the cached path; a present file with a matching digest is reused.
    """
    dest = Path(dest) if dest else default_weights_path()
    if dest.is_file():
        digest = sha256_of(dest)
        if digest.startswith(sha256_prefix):
            return dest
        raise WeightsError(f"existing file {dest} has digest {digest[:16]}..., "
                           f"expected prefix {sha256_prefix}; remove it and retry")
    dest.parent.mkdir(parents=True, exist_ok=True)
    part = dest.with_suffix(dest.suffix + ".part")
    try:
        with urllib.request.urlopen(url) as resp, open(part, "wb") as out:
            while True:
                chunk = resp.read(1 << 20)
                if not chunk:
                    break
                out.write(chunk)
    except Exception as exc:
        part.unlink(missing_ok=True)
        raise WeightsError(f"download of {url} failed: {exc}") from exc
    digest = sha256_of(part)
    if not digest.startswith(sha256_prefix):
        part.unlink(missing_ok=True)
        raise WeightsError(f"downloaded file digest {digest[:16]}... does not match "
                           f"pinned prefix {sha256_prefix}")
    part.replace(dest)
    return dest


def resolve_weights_path(explicit: str | None) -> str:
    """Weights location precedence: explicit flag/config > env var > cache."""
    if explicit:
        return explicit
    env = os.environ.get(WEIGHTS_ENV_VAR)
    if env:
        return env
    cached = default_weights_path()
    if cached.is_file():
        return str(cached)
    raise UsageError(
        "no weights file configured; pass --weights, set "
        f"{WEIGHTS_ENV_VAR}, or run `featinv fetch-weights` first")
