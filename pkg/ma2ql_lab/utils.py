import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path: Path, text: str) -> None:
    """
    Write text to a file so readers only ever see the old or the complete new contents.
    The data goes to a temp file in the same directory which is then renamed over the target.
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as file:
            file.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def file_digest(path: Path) -> str:
    """
    SHA-256 hex digest of a file's bytes.
    """

    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def array_digest(array: np.ndarray) -> str:
    """
    SHA-256 of an array's dtype, shape and raw bytes. Two arrays share a digest only if they are bitwise equal.
    """

    array = np.ascontiguousarray(array)
    digest = hashlib.sha256()
    digest.update(str(array.dtype).encode())
    digest.update(str(array.shape).encode())
    digest.update(array.tobytes())
    return digest.hexdigest()


def format_float(value: float | None) -> str:
    """
    Shortest decimal string that round-trips to the same 64-bit float.
    None becomes an empty string (an empty CSV cell).
    """

    if value is None:
        return ""
    return repr(float(value))
