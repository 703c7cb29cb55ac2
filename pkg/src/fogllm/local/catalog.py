"""On-disk model catalog with resumable, checksum-verified downloads.

Layout::

    <root>/models/<model_id>/model.gguf
    <root>/models/<model_id>/manifest.json   {model_id, checksum, size_bytes, format_version}
    <root>/tmp/                               partial downloads and staging dirs
    <root>/quarantine/                        entries that failed re-validation

An entry becomes visible only through a single directory rename from
``tmp/``, so a crash at any point leaves either no entry or a complete one.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shutil
import tempfile
import threading
import time
from pathlib import Path

import httpx

from ..errors import ChecksumMismatch, ModelFileError, ModelMissing, NetworkError
from .gguf import ModelFile, sha256_file, validate_model_file

log = logging.getLogger(__name__)

MODEL_FILE = "model.gguf"
MANIFEST = "manifest.json"
_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._:+-]{0,127}$")


def check_model_id(model_id: str) -> str:
    if not _SAFE_ID.match(model_id or ""):
        raise ValueError(f"model id {model_id!r} must match {_SAFE_ID.pattern}")
    return model_id


class ModelCatalog:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.models_dir = self.root / "models"
        self.tmp_dir = self.root / "tmp"
        self.quarantine_dir = self.root / "quarantine"
        for d in (self.models_dir, self.tmp_dir, self.quarantine_dir):
            d.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    # -- reads --------------------------------------------------------------

    def _entry(self, entry_dir: Path) -> ModelFile:
        manifest = json.loads((entry_dir / MANIFEST).read_text())
        return ModelFile(
            model_id=manifest["model_id"],
            path=entry_dir / MODEL_FILE,
            size_bytes=manifest["size_bytes"],
            checksum=manifest["checksum"],
            format="gguf",
            format_version=manifest["format_version"],
        )

    def get(self, model_id: str) -> ModelFile | None:
        entry_dir = self.models_dir / check_model_id(model_id)
        if not (entry_dir / MANIFEST).is_file():
            return None
        return self._entry(entry_dir)

    def require(self, model_id: str) -> ModelFile:
        entry = self.get(model_id)
        if entry is None:
            raise ModelMissing(f"model {model_id!r} is not in the catalog at {self.root}")
        return entry

    def list(self) -> list[ModelFile]:
        out = []
        for entry_dir in sorted(self.models_dir.iterdir()):
            if (entry_dir / MANIFEST).is_file():
                out.append(self._entry(entry_dir))
        return out

    def partial_path(self, model_id: str) -> Path:
        return self.tmp_dir / f"{check_model_id(model_id)}.part"

    # -- mutations ----------------------------------------------------------

    def _install(self, model_id: str, source: Path, checksum: str) -> ModelFile:
        """Validate ``source`` and move it into the catalog atomically. Caller holds the lock."""
        try:
            info = validate_model_file(source, model_id)
        except ModelFileError:
            source.unlink(missing_ok=True)
            raise
        if info.checksum != checksum:
            source.unlink(missing_ok=True)
            raise ChecksumMismatch(f"{model_id}: expected {checksum}, got {info.checksum}")
        staging = Path(tempfile.mkdtemp(prefix=f"{model_id}.", suffix=".stage", dir=self.tmp_dir))
        try:
            os.replace(source, staging / MODEL_FILE)
            manifest = {
                "model_id": model_id,
                "checksum": info.checksum,
                "size_bytes": info.size_bytes,
                "format_version": info.format_version,
            }
            (staging / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
            os.replace(staging, self.models_dir / model_id)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        return self.require(model_id)

    def add_file(self, model_id: str, path: str | Path, expected_checksum: str | None = None) -> ModelFile:
        """Copy a local GGUF file into the catalog."""
        check_model_id(model_id)
        with self._lock:
            existing = self.get(model_id)
            if existing is not None:
                return existing
            fd, tmp = tempfile.mkstemp(prefix=f"{model_id}.", suffix=".copy", dir=self.tmp_dir)
            os.close(fd)
            tmp = Path(tmp)
            shutil.copyfile(path, tmp)
            checksum = expected_checksum or sha256_file(tmp)
            return self._install(model_id, tmp, checksum)

    def remove(self, model_id: str) -> None:
        with self._lock:
            shutil.rmtree(self.models_dir / check_model_id(model_id), ignore_errors=True)

    def verify(self) -> tuple[list[ModelFile], list[str]]:
        """Re-validate every entry. Broken entries move to quarantine and are no longer served."""
        good, quarantined = [], []
        with self._lock:
            for entry_dir in sorted(self.models_dir.iterdir()):
                try:
                    entry = self._entry(entry_dir)
                    info = validate_model_file(entry.path, entry.model_id)
                    if info.checksum != entry.checksum:
                        raise ChecksumMismatch(f"checksum {info.checksum} != manifest {entry.checksum}")
                    good.append(entry)
                except (OSError, ValueError, KeyError, ModelFileError, ChecksumMismatch) as exc:
                    dest = self.quarantine_dir / f"{entry_dir.name}.{int(time.time() * 1000)}"
                    os.replace(entry_dir, dest)
                    log.warning("quarantined %s: %s", entry_dir.name, exc)
                    quarantined.append(entry_dir.name)
        return good, quarantined

    def download(self, model_id: str, url: str, expected_checksum: str, *,
                 client: httpx.Client | None = None) -> ModelFile:
        return download_model(self, model_id, url, expected_checksum, client=client)


def download_model(
    catalog: ModelCatalog,
    model_id: str,
    url: str,
    expected_checksum: str,
    *,
    client: httpx.Client | None = None,
) -> ModelFile:
    """Fetch ``url`` into the catalog as ``model_id``.

    A cached entry with the expected checksum is returned without touching
    the network. An interrupted transfer leaves ``tmp/<id>.part`` behind and
    the next call resumes it with a ``Range`` request.
    """
    expected_checksum = expected_checksum.lower()
    with catalog._lock:
        existing = catalog.get(model_id)
        if existing is not None:
            if existing.checksum != expected_checksum:
                raise ChecksumMismatch(
                    f"{model_id} is cached with checksum {existing.checksum}, not {expected_checksum}"
                )
            return existing
        part = catalog.partial_path(model_id)
        own_client = client is None
        client = client or httpx.Client(timeout=httpx.Timeout(30.0, read=120.0), follow_redirects=True)
        try:
            _fetch(client, url, part)
        finally:
            if own_client:
                client.close()
        return catalog._install(model_id, part, expected_checksum)


def _fetch(client: httpx.Client, url: str, part: Path) -> None:
    offset = part.stat().st_size if part.exists() else 0
    headers = {"Range": f"bytes={offset}-"} if offset else {}
    try:
        with client.stream("GET", url, headers=headers) as resp:
            if resp.status_code == 416 and offset:
                return  # server says we already have everything
            if resp.status_code == 206 and offset:
                mode = "ab"
            elif resp.status_code == 200:
                mode = "wb"  # server ignored the range; start over
            else:
                raise NetworkError(f"GET {url} answered {resp.status_code}")
            with open(part, mode) as f:
                # unbuffered so every byte received before a drop is kept
                for block in resp.iter_bytes():
                    f.write(block)
                    f.flush()
    except httpx.HTTPError as exc:
        raise NetworkError(f"GET {url} failed after {part.stat().st_size if part.exists() else 0} bytes: {exc}") from exc
