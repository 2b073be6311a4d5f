"""EMBD: a tiny bit-exact container for embedding matrices.

Layout (little-endian):

    offset  size  field
    0       4     magic "EMBD"
    4       2     version, u16, currently 1
    6       2     flags, u16; bit 0 = rows are L2-normalized
    8       8     rows, u64
    16      8     dims, u64
    24      ...   payload: rows*dims IEEE-754 binary32, row-major
    end     4     optional CRC32 (zlib polynomial) of the payload bytes

Values are stored f32 (matching encoder-ecosystem dumps) but surface as
f64 matrices. A JSON sidecar next to the file (``x.embd`` -> ``x.json``)
carries labels, class names, provenance, and field parameters; it is
free-form JSON validated only where consumers need structure.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import BadMagic, BadVersion, CrcMismatch, TruncatedPayload, ValidationError
from .manifold import EmbeddingMatrix

MAGIC = b"EMBD"
VERSION = 1
FLAG_NORMALIZED = 0x0001
_HEADER = struct.Struct("<4sHHQQ")

#: f32 rounding can push a unit f64 row this far from 1.
F32_UNIT_ATOL = 1e-5


def sidecar_path(path: str | Path) -> Path:
    """``x.embd`` -> ``x.json``; other names get ``.json`` appended."""
    path = Path(path)
    if path.suffix == ".embd":
        return path.with_suffix(".json")
    return Path(str(path) + ".json")


def atomic_write_bytes(path: str | Path, blob: bytes) -> None:
    """Write via a temp file + rename so readers never see partial files."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_embd(m: EmbeddingMatrix, with_crc: bool = True) -> bytes:
    """Serialize a matrix to EMBD bytes (f32 payload)."""
    flags = FLAG_NORMALIZED if m.normalized else 0
    header = _HEADER.pack(MAGIC, VERSION, flags, m.rows, m.dims)
    payload = m.data.astype("<f4").tobytes(order="C")
    blob = header + payload
    if with_crc:
        blob += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    return blob


def decode_embd(blob: bytes) -> EmbeddingMatrix:
    """Parse EMBD bytes; errors name the offending byte offset."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {blob[:4]!r}", offset=0)
    if len(blob) < _HEADER.size:
        raise TruncatedPayload(f"header needs {_HEADER.size} bytes, file has {len(blob)}", offset=len(blob))
    _, version, flags, rows, dims = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}", offset=4)
    payload_len = rows * dims * 4
    body = blob[_HEADER.size :]
    if len(body) == payload_len:
        crc_stored = None
    elif len(body) == payload_len + 4:
        (crc_stored,) = struct.unpack_from("<I", body, payload_len)
    else:
        raise TruncatedPayload(
            f"payload of {rows}x{dims} needs {payload_len} bytes (+0 or +4 for CRC), "
            f"found {len(body)}",
            offset=_HEADER.size + min(len(body), payload_len),
        )
    payload = body[:payload_len]
    if crc_stored is not None:
        crc_actual = zlib.crc32(payload) & 0xFFFFFFFF
        if crc_actual != crc_stored:
            raise CrcMismatch(
                f"stored {crc_stored:#010x}, computed {crc_actual:#010x}",
                offset=_HEADER.size + payload_len,
            )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dims).astype(np.float64)
    return EmbeddingMatrix(data, normalized=bool(flags & FLAG_NORMALIZED), atol=F32_UNIT_ATOL)


def write_embd(
    m: EmbeddingMatrix,
    path: str | Path,
    meta: dict | None = None,
    with_crc: bool = True,
) -> None:
    """Write the matrix (and optional JSON sidecar) atomically."""
    atomic_write_bytes(path, encode_embd(m, with_crc=with_crc))
    if meta is not None:
        write_sidecar(path, meta)


def read_embd(path: str | Path, want_meta: bool = True) -> tuple[EmbeddingMatrix, dict | None]:
    """Read a matrix and, when present, its JSON sidecar."""
    blob = Path(path).read_bytes()
    matrix = decode_embd(blob)
    meta = read_sidecar(path) if want_meta else None
    return matrix, meta


def write_sidecar(embd_path: str | Path, meta: dict) -> None:
    atomic_write_text(sidecar_path(embd_path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_sidecar(embd_path: str | Path) -> dict | None:
    sp = sidecar_path(embd_path)
    if not sp.exists():
        return None
    return json.loads(sp.read_text())


def labels_from_meta(meta: dict | None, rows: int) -> np.ndarray:
    """Extract and validate the labels array of a labeled embedding file."""
    if not meta or "labels" not in meta:
        raise ValidationError("sidecar with a 'labels' array is required")
    labels = np.asarray(meta["labels"])
    if labels.shape != (rows,):
        raise ValidationError(f"labels length {labels.shape} != rows {rows}")
    if labels.size and (labels.min() < 0):
        raise ValidationError("labels must be nonnegative class indices")
    return labels.astype(np.intp)
