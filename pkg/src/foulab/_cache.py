"""Tiny two-level cache (process dict + optional disk directory).

The disk directory is taken from FRAC_HOMOG_CACHE; without it only the
in-process cache is used.  Disk writes are atomic (tmp + rename) so many
workers can share one directory.
"""
from __future__ import annotations

import json
import os
import tempfile
import threading

import numpy as np

_mem = {}
_lock = threading.Lock()


def cache_dir():
    return os.environ.get("FRAC_HOMOG_CACHE") or ""


def _disk_path(key, ext):
    d = cache_dir()
    if not d:
        return None
    os.makedirs(d, exist_ok=True)
    safe = "".join(c if (c.isalnum() or c in "._-") else "_" for c in key)
    return os.path.join(d, safe + ext)


def key_of(*parts):
    out = []
    for p in parts:
        if isinstance(p, float):
            out.append(np.format_float_positional(p, unique=True))
        else:
            out.append(str(p))
    return "-".join(out)


def cached_arrays(key, builder):
    """dict of name -> ndarray, memoised in memory and on disk (.npz)."""
    with _lock:
        if key in _mem:
            return _mem[key]
    path = _disk_path(key, ".npz")
    if path and os.path.exists(path):
        with np.load(path) as z:
            val = {k: z[k] for k in z.files}
        with _lock:
            _mem[key] = val
        return val
    val = builder()
    if path:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".npz")
        os.close(fd)
        np.savez(tmp, **val)
        os.replace(tmp, path)
    with _lock:
        _mem[key] = val
    return val


def cached_scalar(key, builder):
    """float valued variant stored as json."""
    with _lock:
        if key in _mem:
            return _mem[key]
    path = _disk_path(key, ".json")
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            val = json.load(fh)["value"]
        with _lock:
            _mem[key] = val
        return val
    val = float(builder())
    if path:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"value": val}, fh)
        os.replace(tmp, path)
    with _lock:
        _mem[key] = val
    return val
