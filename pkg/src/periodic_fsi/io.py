"""Result serialization: CSV time series, JSON reports, binary checkpoints.

All writers are deterministic: floats are written with 17 significant
digits, JSON keys are sorted, and no timestamps enter any file, so
identical runs produce byte-identical outputs.

Checkpoint layout (little endian)::

    16 bytes   magic  b"PERIODICFSI-CKPT"
    uint32     format version
    uint32     header length H
    H bytes    JSON header: kind, config hash, metadata, array table
    ...        raw float64/int64 array data in table order
    32 bytes   SHA-256 of everything above
"""

import hashlib
import json
import os
import struct

import numpy as np

from .errors import FSIError

__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointError",
    "to_jsonable",
    "write_json",
    "read_json",
    "write_csv",
    "read_csv",
    "write_checkpoint",
    "read_checkpoint",
    "write_manifest",
    "file_digest",
]

MAGIC = b"PERIODICFSI-CKPT"
VERSION = 1
assert len(MAGIC) == 16


class CheckpointError(FSIError):
    """Corrupt, truncated or incompatible checkpoint file."""


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isfinite(v):
            return v
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header, rows):
    """Write a numeric table; ``rows`` is a 2-D array-like."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size and rows.shape[1] != len(header):
        raise ValueError("header and row width differ")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(format(v, ".17g") for v in r) + "\n")
    return path


def read_csv(path):
    """Return ``(header, data)`` of a file written by :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_checkpoint(path, kind, arrays, config_hash="", meta=None):
    """Write named arrays with a versioned, checksummed header."""
    table = []
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        arr = np.ascontiguousarray(arr, dtype=dtype)
        table.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"kind": kind, "config_hash": config_hash, "meta": to_jsonable(meta or {}), "arrays": table},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())
    os.replace(tmp, path)
    return path


def read_checkpoint(path, expect_kind=None, expect_hash=None):
    """Read a checkpoint; returns ``(header, arrays)``.

    Raises
    ------
    CheckpointError
        On a bad magic, unsupported version, checksum mismatch, or when
        ``expect_kind`` / ``expect_hash`` do not match.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 + 32 or data[:16] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack("<II", body[16:24])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(body[24 : 24 + hlen].decode())
    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind!r} checkpoint")
    if expect_hash is not None and header["config_hash"] != expect_hash:
        raise CheckpointError(f"{path}: checkpoint belongs to a different configuration")
    arrays = {}
    pos = 24 + hlen
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        arrays[entry["name"]] = np.frombuffer(body[pos : pos + nbytes], dtype=dt).reshape(
            entry["shape"]
        ).copy()
        pos += nbytes
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing data")
    return header, arrays


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, files, config_hash, extra=None):
    """List emitted files with their SHA-256 digests."""
    entries = [
        {"file": os.path.basename(f), "sha256": file_digest(f), "bytes": os.path.getsize(f)}
        for f in sorted(files)
    ]
    manifest = {"command": command, "config_hash": config_hash, "files": entries}
    if extra:
        manifest.update(extra)
    return write_json(os.path.join(out_dir, f"manifest_{command}.json"), manifest)
