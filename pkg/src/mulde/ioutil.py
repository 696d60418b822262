"""Atomic file writing so failed commands never leave partial artifacts."""

from __future__ import annotations

import json
import os
import tempfile


def write_bytes_atomic(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_json_atomic(path, obj) -> None:
    # json's repr-based float formatting round-trips 64-bit values exactly
    write_text_atomic(path, json.dumps(obj, indent=1) + "\n")
