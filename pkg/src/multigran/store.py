"""Deterministic on-disk container for named float64 tensors plus metadata.

Format (version 1), fully specified so independently written readers agree:

    line 1: ``tensorfile 1``
    line 2: ``meta <json>``           compact JSON with sorted keys
    then one ``tensor <name> <d0> <d1> ...`` line per tensor, sorted by name
    then a single blank line
    then the raw payloads: row-major little-endian float64, in header order

The writer is byte-deterministic (no timestamps, fixed key order), so file
hashes are stable across identical runs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ParseError

_MAGIC = "tensorfile 1"


def write_tensor_file(path, meta: dict, tensors: dict) -> None:
    path = Path(path)
    names = sorted(tensors)
    header = [_MAGIC, "meta " + json.dumps(meta, sort_keys=True, separators=(",", ":"))]
    for name in names:
        arr = np.asarray(tensors[name], dtype=np.float64)
        header.append("tensor " + " ".join([name] + [str(d) for d in arr.shape]))
    blob = ("\n".join(header) + "\n\n").encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(np.asarray(tensors[n], dtype=np.float64)).astype("<f8").tobytes()
        for n in names
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(payload)


def read_tensor_file(path):
    """Return (meta, {name: ndarray}) or raise ParseError."""
    path = Path(path)
    raw = path.read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise ParseError(f"{path}: missing header terminator")
    lines = raw[:sep].decode("utf-8").split("\n")
    if not lines or lines[0] != _MAGIC:
        raise ParseError(f"{path}: not a tensorfile (bad magic)", line=1)
    if len(lines) < 2 or not lines[1].startswith("meta "):
        raise ParseError(f"{path}: missing meta line", line=2)
    meta = json.loads(lines[1][5:])
    specs = []
    for i, line in enumerate(lines[2:], start=3):
        fields = line.split()
        if len(fields) < 2 or fields[0] != "tensor":
            raise ParseError(f"{path}: malformed tensor line", line=i)
        specs.append((fields[1], tuple(int(d) for d in fields[2:])))
    tensors = {}
    offset = sep + 2
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ParseError(f"{path}: truncated payload for tensor {name}")
        tensors[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise ParseError(f"{path}: trailing bytes after payload")
    return meta, tensors


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
