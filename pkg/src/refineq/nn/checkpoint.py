"""Checkpoint container: named float arrays in one self-describing file.

Layout (documented here and in the README):

    line 1              b"refineq-ckpt v1\\n"  (magic + format version)
    line 2              JSON header + "\\n": {"dtype": "<f8",
                        "params": [{"name": ..., "shape": [...]}, ...]}
    remaining bytes     raw little-endian float64 payloads, C order,
                        concatenated in header order

Saving the same mapping twice produces byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"refineq-ckpt v1\n"
DTYPE = "<f8"


class CheckpointError(RuntimeError):
    pass


def save_params(path, params: dict[str, np.ndarray]) -> None:
    header = {
        "dtype": DTYPE,
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=False).encode("utf-8"))
        fh.write(b"\n")
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).astype(DTYPE).tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic/version {magic!r}, expected {MAGIC!r}")
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"{path}: unreadable header: {err}") from err
        if header.get("dtype") != DTYPE:
            raise CheckpointError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        out: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(
                    f"{path}: truncated payload for {entry['name']!r} "
                    f"(wanted {count * 8} bytes, got {len(raw)})")
            out[entry["name"]] = np.frombuffer(raw, dtype=DTYPE).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after declared payload")
    return out
