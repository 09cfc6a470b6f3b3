"""Binary container shared by model checkpoints and preprocessed-data caches.

Layout (no padding anywhere)::

    magic            e.g. b"ANOMALNET\\x00"
    version          1 byte, currently 0x01
    header_length    uint32 little-endian
    header           UTF-8 JSON; must contain "tensors": [{"name", "shape"}, ...]
    payload          each tensor as little-endian float32, row-major, in header order
"""
import json
import os
import struct
import tempfile

import numpy as np

from .errors import BadMagicError, ShapeMismatchError, TruncatedPayloadError, VersionMismatchError

VERSION = 1
_LE_F32 = np.dtype("<f4")


def encode(magic: bytes, header: dict, tensors: list) -> bytes:
    """Serialize ``tensors`` (list of ``(name, array)``) after ``header``.

    ``header`` must not contain a ``tensors`` key; it is filled in here.
    """
    meta = dict(header)
    meta["tensors"] = [{"name": name, "shape": list(arr.shape)} for name, arr in tensors]
    hdr = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [magic, bytes([VERSION]), struct.pack("<I", len(hdr)), hdr]
    parts += [np.ascontiguousarray(arr, dtype=_LE_F32).tobytes() for _, arr in tensors]
    return b"".join(parts)


def decode(magic: bytes, blob: bytes):
    """Inverse of :func:`encode`; returns ``(header, [(name, float32 array), ...])``."""
    if blob[:len(magic)] != magic:
        raise BadMagicError(f"bad magic: expected {magic!r}, got {blob[:len(magic)]!r}")
    pos = len(magic)
    if len(blob) < pos + 5:
        raise TruncatedPayloadError("file ends inside the fixed-size preamble")
    version = blob[pos]
    if version != VERSION:
        raise VersionMismatchError(f"unsupported format version {version}, expected {VERSION}")
    (hlen,) = struct.unpack_from("<I", blob, pos + 1)
    pos += 5
    if len(blob) < pos + hlen:
        raise TruncatedPayloadError(f"header declares {hlen} bytes, only {len(blob) - pos} present")
    try:
        header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
        specs = [(t["name"], tuple(int(d) for d in t["shape"])) for t in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise ShapeMismatchError(f"malformed header: {exc}") from exc
    pos += hlen

    need = 4 * sum(int(np.prod(s)) for _, s in specs)
    have = len(blob) - pos
    if have < need:
        raise TruncatedPayloadError(f"payload has {have} bytes, tensors need {need}")
    if have > need:
        raise ShapeMismatchError(f"payload has {have} bytes, declared tensor shapes account for {need}")

    tensors = []
    for name, shape in specs:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=_LE_F32, count=count, offset=pos).astype(np.float32).reshape(shape)
        tensors.append((name, arr))
        pos += 4 * count
    return header, tensors


def write_atomic(path, data: bytes) -> None:
    """Write via a temp file in the same directory so readers never see partial files."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
