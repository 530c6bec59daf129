"""Checkpoint container: a JSON manifest line followed by raw array blocks.

Layout:

    UWSODCKPT 1 <manifest_nbytes>\n
    <manifest JSON, UTF-8>
    <raw little-endian array bytes, concatenated in manifest order>

The manifest records every array's name, shape, dtype, and byte offset
(relative to the start of the data section), the schema version, and the
full run-config snapshot.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = "UWSODCKPT"
SCHEMA_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict,
                    meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blocks = []
    for name, arr in arrays.items():
        if arr.dtype not in (np.float32, np.float64):
            raise CheckpointError(f"array {name} has unsupported dtype {arr.dtype}")
        precision = "float32" if arr.dtype == np.float32 else "float64"
        raw = np.ascontiguousarray(arr).astype(_DTYPES[precision]).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "precision": precision,
            "offset": offset,
            "nbytes": len(raw),
        })
        offset += len(raw)
        blocks.append(raw)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "meta": meta or {},
        "arrays": entries,
        "data_nbytes": offset,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    header = f"{MAGIC} {SCHEMA_VERSION} {len(payload)}\n".encode("ascii")
    tmp = Path(str(path) + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(payload)
            for b in blocks:
                fh.write(b)
        tmp.replace(path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns (arrays, config, meta); validates structure exhaustively."""
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
            rest = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    parts = header.decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad header)")
    try:
        version, manifest_nbytes = int(parts[1]), int(parts[2])
    except ValueError as e:
        raise CheckpointError(f"{path}: malformed header") from e
    if version != SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: schema version {version} unsupported (need {SCHEMA_VERSION})")
    if len(rest) < manifest_nbytes:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(rest[:manifest_nbytes].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    data = rest[manifest_nbytes:]
    if len(data) != manifest.get("data_nbytes", -1):
        raise CheckpointError(
            f"{path}: data section is {len(data)} bytes, "
            f"manifest says {manifest.get('data_nbytes')}")
    arrays = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        dt = _DTYPES.get(entry["precision"])
        if dt is None:
            raise CheckpointError(f"{path}: {name} has unknown precision "
                                  f"{entry['precision']!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start < 0 or start + nbytes > len(data):
            raise CheckpointError(f"{path}: {name} offsets out of range")
        arr = np.frombuffer(data[start:start + nbytes], dtype=dt)
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) if shape else 1
        if arr.size != expected:
            raise CheckpointError(f"{path}: {name} size/shape mismatch")
        native = np.float32 if entry["precision"] == "float32" else np.float64
        arrays[name] = arr.reshape(shape).astype(native, copy=True)
    return arrays, manifest.get("config", {}), manifest.get("meta", {})
