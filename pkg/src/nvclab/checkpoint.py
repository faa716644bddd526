"""Deterministic single-file parameter archives.

Layout: magic, format version, a JSON manifest (config echo plus an array
index), then raw little-endian array bytes.  Byte output depends only on the
stored arrays and config, never on wall-clock time, so identical training
runs produce identical checkpoint files.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .errors import ParseError

MAGIC = b"NVCCKPT1"
FORMAT_VERSION = 1


def save_archive(path, arrays: dict[str, np.ndarray], config: dict) -> None:
    entries = []
    blob = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": len(blob),
                "nbytes": arr.nbytes,
            }
        )
        blob += arr.tobytes()
    manifest = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "arrays": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(">HI", FORMAT_VERSION, len(manifest)))
        fh.write(manifest)
        fh.write(blob)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ParseError(f"{path}: not a parameter archive")
    version, mlen = struct.unpack(">HI", data[8:14])
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported archive version {version}")
    manifest = json.loads(data[14 : 14 + mlen].decode("utf-8"))
    base = 14 + mlen
    arrays = {}
    for e in manifest["arrays"]:
        start = base + e["offset"]
        raw = data[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ParseError(f"{path}: truncated array {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(
            e["shape"]
        ).copy()
    return arrays, manifest["config"]


def state_dict_to_arrays(state: dict, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in state.items()}


def arrays_to_state_dict(arrays: dict[str, np.ndarray], prefix: str = "") -> dict:
    out = {}
    for k, v in arrays.items():
        if k.startswith(prefix):
            out[k[len(prefix):]] = torch.from_numpy(np.ascontiguousarray(v))
    return out


def model_identity(arrays: dict[str, np.ndarray]) -> int:
    """Stable u32 fingerprint of the parameter contents."""
    crc = 0
    for name in sorted(arrays):
        crc = zlib.crc32(name.encode("utf-8"), crc)
        crc = zlib.crc32(np.ascontiguousarray(arrays[name]).tobytes(), crc)
    return crc & 0xFFFFFFFF
