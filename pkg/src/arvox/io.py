"""Binary tensor I/O: MV3D single volumes and MVWT named-tensor containers.

MV3D layout (little-endian throughout):
    bytes 0-3   magic b"MV3D"
    byte  4     version, currently 1
    bytes 5-7   zero padding
    4 x u32     C, H, W, D
    payload     C*H*W*D float32 values, channel-major

MVWT layout:
    magic b"MVWT", version u32, entry count u32, then per entry:
    name length u16, name bytes (utf-8), rank u8, dims u32[rank],
    float32 payload.
"""

import struct
from pathlib import Path

import numpy as np

from arvox.errors import DataIOError
from arvox.volume import Volume

_MV3D_MAGIC = b"MV3D"
_MVWT_MAGIC = b"MVWT"


def write_mv3d(path, volume: Volume) -> None:
    d = volume.data
    header = _MV3D_MAGIC + bytes([1, 0, 0, 0]) + struct.pack("<4I", *d.shape)
    payload = np.ascontiguousarray(d, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_mv3d(path) -> Volume:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    if len(raw) < 24:
        raise DataIOError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != _MV3D_MAGIC:
        raise DataIOError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != 1:
        raise DataIOError(f"{path}: unsupported version {raw[4]}")
    c, h, w, d = struct.unpack_from("<4I", raw, 8)
    if min(c, h, w, d) < 1:
        raise DataIOError(f"{path}: degenerate dimensions {(c, h, w, d)}")
    n = c * h * w * d
    expected = 24 + 4 * n
    if len(raw) != expected:
        raise DataIOError(
            f"{path}: payload size mismatch (have {len(raw)} bytes, want {expected})"
        )
    arr = np.frombuffer(raw, dtype="<f4", offset=24).reshape(c, h, w, d)
    arr = arr.astype(np.float32)  # copy out of the read-only buffer
    if not np.isfinite(arr).all():
        raise DataIOError(f"{path}: payload contains non-finite values")
    return Volume(arr)


def write_mvwt(path, tensors: dict) -> None:
    """Write an ordered ``{name: ndarray}`` mapping as an MVWT container."""
    parts = [_MVWT_MAGIC, struct.pack("<2I", 1, len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise DataIOError(f"tensor name too long: {name[:40]}...")
        a = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_mvwt(path) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    if len(raw) < 12 or raw[:4] != _MVWT_MAGIC:
        raise DataIOError(f"{path}: not an MVWT container")
    version, count = struct.unpack_from("<2I", raw, 4)
    if version != 1:
        raise DataIOError(f"{path}: unsupported version {version}")
    off = 12
    out = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            end = off + 4 * n
            if end > len(raw):
                raise DataIOError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
            out[name] = arr.astype(np.float32).reshape(dims)
            off = end
        except struct.error as e:
            raise DataIOError(f"{path}: truncated entry table: {e}") from e
    if off != len(raw):
        raise DataIOError(f"{path}: {len(raw) - off} trailing bytes")
    return out
