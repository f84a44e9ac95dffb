"""Small file helpers: atomic writes, directory locks, hashing."""
from __future__ import annotations

import contextlib
import hashlib
import os
from pathlib import Path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary sibling and promote with os.replace."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


@contextlib.contextmanager
def directory_lock(directory):
    """Advisory lock file guarding a cache/checkpoint directory against
    concurrent writers. Raises if another writer holds it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".fsnids.lock"
    fd = None
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.write(fd, str(os.getpid()).encode())
        yield
    except FileExistsError:
        raise RuntimeError(f"directory {directory} is locked by another writer ({lock})")
    finally:
        if fd is not None:
            os.close(fd)
            with contextlib.suppress(FileNotFoundError):
                os.unlink(lock)
