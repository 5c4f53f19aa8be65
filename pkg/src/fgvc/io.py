"""Binary file formats: TDF v1 tensors and binary PPM (P6) / PGM (P5) images."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IngestionError

TDF_MAGIC = b"TNSR"
TDF_VERSION = 1


def write_tdf(path, array) -> None:
    """Write ``array`` as TDF v1: magic, u32 version, u32 ndim, u64 dims, f32 data (all LE)."""
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    header = TDF_MAGIC + struct.pack("<II", TDF_VERSION, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_tdf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != TDF_MAGIC:
        raise IngestionError(f"{path}: not a TDF file (bad magic)")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != TDF_VERSION:
        raise IngestionError(f"{path}: unsupported TDF version {version}")
    off = 12 + 8 * ndim
    if len(raw) < off:
        raise IngestionError(f"{path}: truncated TDF header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 12)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - off != 4 * count:
        raise IngestionError(f"{path}: expected {count} float32 values, got {(len(raw) - off) // 4}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
    return data.astype(np.float64).reshape(dims)


def _read_header_tokens(raw: bytes, n: int, path) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < n:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i >= len(raw):
            raise IngestionError(f"{path}: truncated header")
        if raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        tokens.append(raw[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    tokens, off = _read_header_tokens(raw, 4, path)
    if tokens[0] != magic:
        raise IngestionError(f"{path}: expected {magic.decode()} header, got {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise IngestionError(f"{path}: malformed header {tokens!r}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise IngestionError(f"{path}: unsupported header {width}x{height} maxval={maxval}")
    count = width * height * channels
    if len(raw) - off < count:
        raise IngestionError(f"{path}: expected {count} pixel bytes, got {len(raw) - off}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=off)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return data.reshape(shape)


def _to_bytes(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)


def read_ppm(path) -> np.ndarray:
    """Decode a binary P6 file into float64 ``(H, W, 3)`` scaled to [0, 1]."""
    return _read_pnm(path, b"P6", 3).astype(np.float64) / 255.0


def write_ppm(path, img) -> None:
    """Encode a ``(H, W, 3)`` array in [0, 1] as binary P6, maxval 255."""
    b = _to_bytes(img)
    if b.ndim != 3 or b.shape[2] != 3:
        raise ValueError(f"PPM needs (H, W, 3), got {b.shape}")
    h, w = b.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + b.tobytes())


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1).astype(np.float64) / 255.0


def write_pgm(path, img) -> None:
    b = _to_bytes(img)
    if b.ndim != 2:
        raise ValueError(f"PGM needs (H, W), got {b.shape}")
    h, w = b.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + b.tobytes())
