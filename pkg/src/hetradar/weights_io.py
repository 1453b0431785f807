"""``SHBW`` parameter container.

Layout: magic ``SHBW``, u32 version, u32 header length, UTF-8 JSON header,
then a little-endian float32 payload. The header holds free-form metadata
under ``meta`` and a tensor table ``tensors: [{name, shape, offset}]`` where
``offset`` counts float32 elements into the payload.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, LengthMismatchError

MAGIC = b"SHBW"
VERSION = 1


def save_container(path, meta, tensors):
    table = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        chunks.append(a.tobytes())
    header = json.dumps({"meta": meta, "tensors": table}, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_container(path):
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise DataError(f"{path}: not an SHBW container")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported SHBW version {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt SHBW header ({exc})") from None
    payload = np.frombuffer(data, dtype="<f4", offset=12 + hlen)
    tensors = {}
    for t in header["tensors"]:
        size = int(np.prod(t["shape"], dtype=np.int64))
        start = t["offset"]
        if start + size > payload.size:
            raise LengthMismatchError(f"{path}: tensor {t['name']} runs past the payload")
        tensors[t["name"]] = payload[start:start + size].reshape(t["shape"]).astype(np.float32)
    return header["meta"], tensors
