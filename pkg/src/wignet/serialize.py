"""Binary tensor container and checkpoint files.

Single tensor (".wigt" blob):

    magic  b"WIGT"
    u8     format version (1)
    u8     rank
    u32[]  extents, little-endian
    u8     precision flag: 4 = float32, 8 = float64
    bytes  elements, row-major, little-endian IEEE-754

Checkpoint (".wigc"): magic b"WIGC", u8 version, u32 tensor count, then per
tensor a u16 name length, the UTF-8 name, and the tensor blob.  A JSON
manifest alongside records the network spec and the name/shape/dtype table,
which is enough to rebuild the network and reload it.  All writes go through
a temp-file rename so partial files never appear under the final name.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

TENSOR_MAGIC = b"WIGT"
CHECKPOINT_MAGIC = b"WIGC"
FORMAT_VERSION = 1

_PRECISION_FLAGS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        flag, dt = 4, np.dtype("<f4")
    elif arr.dtype == np.float64:
        flag, dt = 8, np.dtype("<f8")
    else:
        raise FormatError(f"unsupported dtype {arr.dtype} (float32/float64 only)")
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds format limit")
    head = TENSOR_MAGIC + struct.pack("<BB", FORMAT_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", flag)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0):
    """Returns (array, next_offset)."""
    if buf[offset:offset + 4] != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic at byte {offset}")
    offset += 4
    version, rank = struct.unpack_from("<BB", buf, offset)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    offset += 2
    shape = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    (flag,) = struct.unpack_from("<B", buf, offset)
    offset += 1
    try:
        dt = _PRECISION_FLAGS[flag]
    except KeyError:
        raise FormatError(f"unknown precision flag {flag} at byte {offset - 1}") from None
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    nbytes = count * dt.itemsize
    if len(buf) < offset + nbytes:
        raise FormatError(f"tensor truncated at byte {len(buf)} (need {offset + nbytes})")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=offset).reshape(shape)
    return arr.astype(dt.newbyteorder("=")), offset + nbytes


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-wig-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_tensor(path, arr: np.ndarray) -> None:
    atomic_write_bytes(path, tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"{end - len(buf)} trailing byte(s) after tensor payload")
    return arr


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_to_bytes(named_tensors) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<BI", FORMAT_VERSION, len(named_tensors))]
    for name, arr in named_tensors:
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name!r}")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(tensor_to_bytes(arr))
    return b"".join(parts)


def checkpoint_from_bytes(buf: bytes):
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 9
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset:offset + nlen].decode("utf-8")
        offset += nlen
        arr, offset = tensor_from_bytes(buf, offset)
        out.append((name, arr))
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing byte(s) after checkpoint payload")
    return out


def save_checkpoint(path, net, extra_manifest: dict | None = None) -> None:
    """Write `<path>` (container) and `<path>.json` (manifest)."""
    named = [(name, p.data) for name, p in net.params()]
    atomic_write_bytes(path, checkpoint_to_bytes(named))
    manifest = {
        "format": "wig-checkpoint",
        "version": FORMAT_VERSION,
        "net_spec": net.spec.to_text(),
        "params": [
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
            for name, arr in named
        ],
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    atomic_write_text(
        os.fspath(path) + ".json",
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )


def load_checkpoint(path):
    """Rebuild the network recorded in the manifest and load its parameters.

    Returns (network, manifest).
    """
    from .layers import NetworkSpec, build_network  # deferred: avoids cycle

    with open(os.fspath(path) + ".json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    spec = NetworkSpec.from_text(manifest["net_spec"])
    net = build_network(spec, seed=0)
    with open(path, "rb") as f:
        stored = dict(checkpoint_from_bytes(f.read()))
    for name, p in net.params():
        if name not in stored:
            raise FormatError(f"checkpoint missing parameter {name!r}")
        arr = stored.pop(name)
        if tuple(arr.shape) != p.shape:
            raise FormatError(
                f"checkpoint parameter {name!r} has shape {tuple(arr.shape)}, "
                f"expected {p.shape}"
            )
        arr = arr.astype(net.dtype, copy=False)
        arr.setflags(write=False)
        p.data = arr
    if stored:
        raise FormatError(f"checkpoint has unknown parameters: {sorted(stored)}")
    return net, manifest
