"""Atomic file writes (temp file in the target directory, then rename)."""

import os
import tempfile
from typing import Union


def atomic_write(path: Union[str, os.PathLike], data: Union[str, bytes]) -> None:
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
