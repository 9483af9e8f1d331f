"""Binary containers and line-delimited record helpers.

Two little-endian binary formats are defined here:

``WSD1`` descriptor / feature-map container::

    magic "WSD1" | dtype u8 | rank u8 | reserved u16 | shape u32 * rank | count u64
    [uint8 files only: per-dimension min f64 * dim, per-dimension step f64 * dim]
    row-major payload

Rank 1 holds vectors (shape = (dim,)); rank 3 holds C x H x W feature maps.

``WSQ1`` model blob (quantizers, PCA, index quantizer stacks)::

    magic "WSQ1" | version u16 | kind (u16 length + utf-8) | n_arrays u32
    per array: name (u16 length + utf-8) | dtype u8 | ndim u8 | shape u64 * ndim | payload

Arrays are written in sorted-name order so a load/save cycle is byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from .errors import CorruptIndexError, InvalidArgumentError

DESCRIPTOR_MAGIC = b"WSD1"
BLOB_MAGIC = b"WSQ1"
BLOB_VERSION = 1

_DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("u1"),
    4: np.dtype("<u2"),
    5: np.dtype("<u4"),
    6: np.dtype("<u8"),
    7: np.dtype("<i8"),
}


def dtype_code(dtype) -> int:
    dt = np.dtype(dtype).newbyteorder("<")
    for code, known in _DTYPE_CODES.items():
        if known == dt:
            return code
    raise InvalidArgumentError(f"unsupported dtype {dtype!r}")


def dtype_from_code(code: int) -> np.dtype:
    try:
        return _DTYPE_CODES[code]
    except KeyError:
        raise CorruptIndexError(f"unknown dtype code {code}") from None


# ---------------------------------------------------------------------------
# WSD1 descriptor container
# ---------------------------------------------------------------------------


@dataclass
class DescriptorFile:
    """In-memory view of a ``WSD1`` file.

    ``data`` has shape ``(count, *shape)``. For uint8 files ``sq_min`` and
    ``sq_step`` hold the scalar-quantization side tables.
    """

    data: np.ndarray
    sq_min: np.ndarray | None = None
    sq_step: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape[1:])

    def __len__(self) -> int:
        return int(self.data.shape[0])


def write_descriptors(path, data, sq_min=None, sq_step=None) -> None:
    data = np.asarray(data)
    if data.ndim not in (2, 4):
        raise InvalidArgumentError(
            f"descriptor payload must be (count, dim) or (count, C, H, W), got shape {data.shape}"
        )
    code = dtype_code(data.dtype)
    shape = data.shape[1:]
    is_u8 = data.dtype == np.uint8
    if is_u8 != (sq_min is not None):
        raise InvalidArgumentError("uint8 payloads require min/step side tables (and only they)")
    with open(path, "wb") as fh:
        fh.write(DESCRIPTOR_MAGIC)
        fh.write(struct.pack("<BBH", code, len(shape), 0))
        fh.write(struct.pack(f"<{len(shape)}I", *shape))
        fh.write(struct.pack("<Q", data.shape[0]))
        if is_u8:
            if data.ndim != 2:
                raise InvalidArgumentError("8-bit containers hold vectors only")
            fh.write(np.ascontiguousarray(sq_min, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(sq_step, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data, dtype=_DTYPE_CODES[code]).tobytes())


def read_descriptors(path) -> DescriptorFile:
    raw = Path(path).read_bytes()
    if raw[:4] != DESCRIPTOR_MAGIC:
        raise CorruptIndexError(f"{path}: bad magic {raw[:4]!r}")
    code, rank, _ = struct.unpack_from("<BBH", raw, 4)
    if rank not in (1, 3):
        raise CorruptIndexError(f"{path}: unsupported rank {rank}")
    off = 8
    shape = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    (count,) = struct.unpack_from("<Q", raw, off)
    off += 8
    dt = dtype_from_code(code)
    sq_min = sq_step = None
    if dt == np.uint8:
        dim = shape[0]
        sq_min = np.frombuffer(raw, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
        sq_step = np.frombuffer(raw, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
    n = count * int(np.prod(shape))
    if len(raw) - off != n * dt.itemsize:
        raise CorruptIndexError(f"{path}: payload size does not match header")
    data = np.frombuffer(raw, dtype=dt, count=n, offset=off).reshape((count, *shape)).copy()
    return DescriptorFile(data, sq_min, sq_step)


# ---------------------------------------------------------------------------
# WSQ1 model blobs
# ---------------------------------------------------------------------------


def _put_str(buf: io.BytesIO, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<H", len(b)))
    buf.write(b)


def pack_blob(kind: str, arrays: dict[str, Any]) -> bytes:
    buf = io.BytesIO()
    buf.write(BLOB_MAGIC)
    buf.write(struct.pack("<H", BLOB_VERSION))
    _put_str(buf, kind)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = dtype_code(arr.dtype)
        _put_str(buf, name)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())
    return buf.getvalue()


def unpack_blob(raw: bytes, expected_kind: str | None = None) -> tuple[str, dict[str, np.ndarray]]:
    if raw[:4] != BLOB_MAGIC:
        raise CorruptIndexError(f"bad model blob magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != BLOB_VERSION:
        raise CorruptIndexError(f"unsupported model blob version {version}")
    off = 6

    def get_str():
        nonlocal off
        (n,) = struct.unpack_from("<H", raw, off)
        off += 2
        s = raw[off : off + n].decode("utf-8")
        off += n
        return s

    kind = get_str()
    if expected_kind is not None and kind != expected_kind:
        raise CorruptIndexError(f"expected a {expected_kind!r} blob, found {kind!r}")
    (n_arrays,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = {}
    for _ in range(n_arrays):
        name = get_str()
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", raw, off)
        off += 8 * ndim
        dt = dtype_from_code(code)
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(raw, dtype=dt, count=n, offset=off).reshape(shape).copy()
        off += n * dt.itemsize
    if off != len(raw):
        raise CorruptIndexError("trailing bytes after model blob")
    return kind, arrays


def save_blob(path, kind: str, arrays: dict[str, Any]) -> None:
    Path(path).write_bytes(pack_blob(kind, arrays))


def load_blob(path, expected_kind: str | None = None):
    return unpack_blob(Path(path).read_bytes(), expected_kind)


# ---------------------------------------------------------------------------
# Line-delimited records
# ---------------------------------------------------------------------------


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec))
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"{path}:{lineno}: malformed record ({exc.msg})") from None


def read_jsonl(path) -> list[dict]:
    return list(iter_jsonl(path))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
