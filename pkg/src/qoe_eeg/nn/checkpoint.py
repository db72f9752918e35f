"""Checkpoint files.

Layout: ``b"QOECKPT1"``, a little-endian uint32 header length, the UTF-8
JSON header, then every parameter as little-endian float64 in manifest
order. The header carries ``architecture``, ``config``, ``seed`` and
``manifest: [[name, shape, offset], ...]`` (offsets in elements), plus any
caller-supplied ``extra`` entries.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .. import fileio
from ..errors import CheckpointError

MAGIC = b"QOECKPT1"


def dumps(params: dict, config: dict, seed: int, extra: dict | None = None) -> bytes:
    manifest = []
    offset = 0
    chunks = []
    for name, value in params.items():
        a = np.ascontiguousarray(value, dtype="<f8")
        manifest.append([name, list(a.shape), offset])
        offset += a.size
        chunks.append(a.tobytes())
    header = {"architecture": config.get("architecture"), "config": config, "seed": int(seed),
              "manifest": manifest, "total": offset}
    if extra:
        header.update(extra)
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(chunks)


def loads(blob: bytes):
    """Returns ``(params, header)``."""
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise CheckpointError("truncated header")
    (hlen,) = struct.unpack("<I", blob[pos:pos + 4])
    pos += 4
    try:
        header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from None
    pos += hlen
    payload = blob[pos:]
    total = sum(int(np.prod(shape)) for _, shape, _ in header["manifest"])
    if len(payload) != 8 * total or header.get("total", total) != total:
        raise CheckpointError(f"payload has {len(payload)} bytes, manifest needs {8 * total}")
    flat = np.frombuffer(payload, dtype="<f8")
    params = {}
    for name, shape, offset in header["manifest"]:
        n = int(np.prod(shape))
        params[name] = flat[offset:offset + n].astype(np.float64).reshape(shape)
    return params, header


def save(path, params: dict, config: dict, seed: int, extra: dict | None = None) -> Path:
    path = Path(path)
    fileio.write_bytes(path, dumps(params, config, seed, extra))
    return path


def load(path):
    return loads(Path(path).read_bytes())
