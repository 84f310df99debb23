from __future__ import annotations

import tarfile
from pathlib import Path

import httpx
import structlog

from simple2complex.backend.adapters.cifar10 import BATCH_FILE_BYTES, TEST_FILES, TRAIN_FILES
from simple2complex.common.errors import DataError

log = structlog.get_logger(__name__)

CIFAR10_BINARY_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


def _download(url: str, dest: Path) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_suffix(dest.suffix + ".part")
    with httpx.stream("GET", url, timeout=120, follow_redirects=True) as resp:
        resp.raise_for_status()
        with open(tmp, "wb") as f:
            for chunk in resp.iter_bytes(chunk_size=1 << 20):
                f.write(chunk)
    tmp.replace(dest)


def fetch_cifar10(target_dir: Path, *, url: str = CIFAR10_BINARY_URL, keep_archive: bool = False) -> Path:
    """Download and unpack the CIFAR-10 binary release; returns the batch directory."""
    target_dir = Path(target_dir)
    batch_dir = target_dir / "cifar-10-batches-bin"
    if not _complete(batch_dir):
        archive = target_dir / "cifar-10-binary.tar.gz"
        if not archive.exists():
            log.info("cifar10_download", url=url, dest=str(archive))
            try:
                _download(url, archive)
            except httpx.HTTPError as exc:
                raise DataError(f"CIFAR-10 download failed: {exc}") from exc
        with tarfile.open(archive, "r:gz") as tar:
            if hasattr(tarfile, "data_filter"):
                tar.extractall(target_dir, filter="data")
            else:
                tar.extractall(target_dir)
        if not keep_archive:
            archive.unlink()
    if not _complete(batch_dir):
        raise DataError(f"{batch_dir} does not hold the expected CIFAR-10 batch files.")
    log.info("cifar10_ready", path=str(batch_dir))
    return batch_dir


def _complete(batch_dir: Path) -> bool:
    for name in TRAIN_FILES + TEST_FILES:
        path = batch_dir / name
        if not path.exists() or path.stat().st_size != BATCH_FILE_BYTES:
            return False
    return True
