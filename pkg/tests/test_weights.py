import hashlib

import pytest

from featinv.errors import UsageError, WeightsError
from featinv.weights import (WEIGHTS_ENV_VAR, cache_dir, default_weights_path,
                             fetch_weights, resolve_weights_path, sha256_of)


@pytest.fixture
def source_file(tmp_path):
    """A local 'release' file served over file:// with its true digest."""
    src = tmp_path / "upstream" / "release.pth"
    src.parent.mkdir()
    src.write_bytes(b"\x80\x04weights" * 500)
    digest = hashlib.sha256(src.read_bytes()).hexdigest()
    return src, digest


def test_sha256_of(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"abc")
    assert sha256_of(p) == hashlib.sha256(b"abc").hexdigest()


def test_fetch_downloads_and_verifies(tmp_path, source_file):
    src, digest = source_file
    dest = tmp_path / "cache" / "release.pth"
    got = fetch_weights(dest, url=src.as_uri(), sha256_prefix=digest[:8])
    assert got == dest
    assert dest.read_bytes() == src.read_bytes()
    assert not dest.with_suffix(".pth.part").exists()


def test_fetch_reuses_valid_cache(tmp_path, source_file):
    src, digest = source_file
    dest = tmp_path / "release.pth"
    dest.write_bytes(src.read_bytes())
    # url is garbage: a valid cached file must short-circuit the download
    got = fetch_weights(dest, url="file:///nonexistent", sha256_prefix=digest[:8])
    assert got == dest


def test_fetch_rejects_corrupt_cache(tmp_path, source_file):
    _, digest = source_file
    dest = tmp_path / "release.pth"
    dest.write_bytes(b"tampered")
    with pytest.raises(WeightsError, match="remove it and retry"):
        fetch_weights(dest, url="file:///unused", sha256_prefix=digest[:8])


def test_fetch_rejects_bad_download_digest(tmp_path, source_file):
    src, _ = source_file
    dest = tmp_path / "release.pth"
    with pytest.raises(WeightsError, match="does not match"):
        fetch_weights(dest, url=src.as_uri(), sha256_prefix="0000dead")
    # neither the partial nor the final file should survive
    assert not dest.exists()
    assert not dest.with_suffix(".pth.part").exists()


def test_fetch_download_failure_cleans_up(tmp_path):
    dest = tmp_path / "release.pth"
    with pytest.raises(WeightsError, match="download of"):
        fetch_weights(dest, url=(tmp_path / "no-such-file").as_uri(),
                      sha256_prefix="00")
    assert not dest.with_suffix(".pth.part").exists()


def test_resolve_precedence_explicit_wins(tmp_path, monkeypatch):
    monkeypatch.setenv(WEIGHTS_ENV_VAR, "/env/path.pth")
    assert resolve_weights_path("/flag/path.pth") == "/flag/path.pth"


def test_resolve_precedence_env_over_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("XDG_CACHE_HOME", str(tmp_path))
    cached = default_weights_path()
    cached.parent.mkdir(parents=True)
    cached.write_bytes(b"cached")
    monkeypatch.setenv(WEIGHTS_ENV_VAR, "/env/path.pth")
    assert resolve_weights_path(None) == "/env/path.pth"
    monkeypatch.delenv(WEIGHTS_ENV_VAR)
    assert resolve_weights_path(None) == str(cached)


def test_resolve_without_any_source_errors(tmp_path, monkeypatch):
    monkeypatch.delenv(WEIGHTS_ENV_VAR, raising=False)
    monkeypatch.setenv("XDG_CACHE_HOME", str(tmp_path / "empty"))
    with pytest.raises(UsageError, match="fetch-weights"):
        resolve_weights_path(None)


def test_cache_dir_honors_xdg(monkeypatch, tmp_path):
    monkeypatch.setenv("XDG_CACHE_HOME", str(tmp_path))
    assert cache_dir() == tmp_path / "featinv"
