"""Binary file formats: PPM/PGM frames, CVT1 tensors, CVTW checkpoints.

All formats are uncompressed and bit-exact so round trips and directory
diffs are byte comparisons. Parsers are strict: they accept exactly the
canonical layout this module writes and raise ParseError (never crash) on
anything else, reporting the byte offset of the first problem.

Pixel mapping conventions:
  imagery  u8 v  ->  v / 255 * 2 - 1   (float in [-1, 1])
  masks    u8 v  ->  1.0 if v >= 128 else 0.0
"""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError

CVT1_MAGIC = b"CVT1"
CVTW_MAGIC = b"CVTW"
CVTW_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

_PPM_HEADER = re.compile(rb"\AP6\n([0-9]+) ([0-9]+)\n255\n")
_PGM_HEADER = re.compile(rb"\AP5\n([0-9]+) ([0-9]+)\n255\n")


# ---- PPM / PGM -------------------------------------------------------------


def _parse_netpbm(blob: bytes, pattern: re.Pattern, channels: int, kind: str):
    match = pattern.match(blob)
    if match is None:
        raise ParseError(f"not a canonical {kind} header", offset=0)
    width, height = int(match.group(1)), int(match.group(2))
    if width < 1 or height < 1:
        raise ParseError(f"{kind} extents must be positive, got {width}x{height}",
                         offset=match.start(1))
    payload = blob[match.end():]
    expected = width * height * channels
    if len(payload) != expected:
        raise ParseError(
            f"{kind} payload length mismatch: expected {expected} bytes, got {len(payload)}",
            offset=match.end())
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return pixels


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 image into a float32 [C, H, W] array in [-1, 1]."""
    pixels = _parse_netpbm(Path(path).read_bytes(), _PPM_HEADER, 3, "PPM")
    return (pixels.astype(np.float32) / 255.0 * 2.0 - 1.0).transpose(2, 0, 1)


def write_ppm(path, image: np.ndarray) -> None:
    """Write a float [C, H, W] image in [-1, 1] as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"write_ppm expects [3, H, W], got {image.shape}")
    quantized = np.clip(np.rint((image + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    _, height, width = image.shape
    header = f"P6\n{width} {height}\n255\n".encode()
    Path(path).write_bytes(header + quantized.transpose(1, 2, 0).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 mask into a float32 [1, H, W] array of {0, 1}."""
    pixels = _parse_netpbm(Path(path).read_bytes(), _PGM_HEADER, 1, "PGM")
    return (pixels >= 128).astype(np.float32).transpose(2, 0, 1)


def write_pgm(path, mask: np.ndarray) -> None:
    """Write a {0, 1} mask of shape [1, H, W] or [H, W] as binary P5."""
    mask = np.asarray(mask)
    if mask.ndim == 3:
        if mask.shape[0] != 1:
            raise ShapeError(f"write_pgm expects one channel, got {mask.shape}")
        mask = mask[0]
    if mask.ndim != 2:
        raise ShapeError(f"write_pgm expects [H, W] or [1, H, W], got {mask.shape}")
    bytes_out = (np.asarray(mask) >= 0.5).astype(np.uint8) * np.uint8(255)
    height, width = mask.shape
    header = f"P5\n{width} {height}\n255\n".encode()
    Path(path).write_bytes(header + bytes_out.tobytes())


# ---- CVT1 tensors -----------------------------------------------------------
#
# magic "CVT1" | dtype u8 (0=f32, 1=f64) | ndim u8 | 2 zero bytes
# | ndim x u32 little-endian extents | row-major little-endian payload


def tensor_to_bytes(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    if array.dtype not in _CODE_FOR_DTYPE:
        raise ShapeError(f"CVT1 stores f32/f64 tensors, got dtype {array.dtype}")
    head = CVT1_MAGIC + struct.pack("<BBxx", _CODE_FOR_DTYPE[array.dtype], array.ndim)
    extents = struct.pack(f"<{array.ndim}I", *array.shape) if array.ndim else b""
    return head + extents + array.astype(array.dtype.newbyteorder("<")).tobytes()


def tensor_from_bytes(blob: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one CVT1 record starting at `offset`; returns (array, end offset)."""
    base = offset
    if len(blob) - base < 8:
        raise ParseError("CVT1 record truncated before header end", offset=base)
    if blob[base:base + 4] != CVT1_MAGIC:
        raise ParseError(f"bad CVT1 magic {blob[base:base + 4]!r}", offset=base)
    dtype_code, ndim = blob[base + 4], blob[base + 5]
    if dtype_code not in _DTYPE_CODES:
        raise ParseError(f"unknown CVT1 dtype code {dtype_code}", offset=base + 4)
    if blob[base + 6:base + 8] != b"\x00\x00":
        raise ParseError("CVT1 padding bytes must be zero", offset=base + 6)
    cursor = base + 8
    if len(blob) - cursor < 4 * ndim:
        raise ParseError("CVT1 record truncated inside extents", offset=cursor)
    shape = struct.unpack_from(f"<{ndim}I", blob, cursor) if ndim else ()
    cursor += 4 * ndim
    if any(extent == 0 for extent in shape):
        raise ParseError(f"CVT1 extents must be positive, got {shape}", offset=base + 8)
    dtype = _DTYPE_CODES[dtype_code]
    count = 1
    for extent in shape:
        count *= extent
    expected = count * dtype.itemsize
    if len(blob) - cursor < expected:
        raise ParseError(
            f"CVT1 payload length mismatch: expected {expected} bytes, got {len(blob) - cursor}",
            offset=cursor)
    array = np.frombuffer(blob, dtype=dtype, count=count, offset=cursor).reshape(shape)
    return array.astype(dtype.base, copy=True), cursor + expected


def write_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(np.asarray(array)))


def read_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    array, end = tensor_from_bytes(blob)
    if end != len(blob):
        raise ParseError(f"trailing bytes after CVT1 payload: expected {end}, file has {len(blob)}",
                         offset=end)
    return array


# ---- CVTW checkpoints --------------------------------------------------------
#
# magic "CVTW" | version u32 | config-JSON length u32 + canonical JSON
# | parameter count u32 | per parameter: name length u16 + UTF-8 name + CVT1 record


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_checkpoint(path, config_dict: dict, params: dict[str, np.ndarray]) -> None:
    parts = [CVTW_MAGIC, struct.pack("<I", CVTW_VERSION)]
    blob = canonical_json(config_dict).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(params)))
    for name, array in params.items():
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(tensor_to_bytes(np.asarray(array)))
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise ParseError("CVTW file truncated before header end", offset=0)
    if blob[:4] != CVTW_MAGIC:
        raise ParseError(f"bad CVTW magic {blob[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CVTW_VERSION:
        raise ParseError(f"unsupported CVTW version {version}", offset=4)
    (json_len,) = struct.unpack_from("<I", blob, 8)
    cursor = 12
    if len(blob) - cursor < json_len:
        raise ParseError("CVTW config JSON truncated", offset=cursor)
    try:
        config = json.loads(blob[cursor:cursor + json_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"CVTW config JSON invalid: {exc}", offset=cursor) from None
    if not isinstance(config, dict):
        raise ParseError("CVTW config JSON must be an object", offset=cursor)
    cursor += json_len
    if len(blob) - cursor < 4:
        raise ParseError("CVTW truncated before parameter count", offset=cursor)
    (count,) = struct.unpack_from("<I", blob, cursor)
    cursor += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(blob) - cursor < 2:
            raise ParseError("CVTW truncated inside parameter name length", offset=cursor)
        (name_len,) = struct.unpack_from("<H", blob, cursor)
        cursor += 2
        if len(blob) - cursor < name_len:
            raise ParseError("CVTW truncated inside parameter name", offset=cursor)
        try:
            name = blob[cursor:cursor + name_len].decode()
        except UnicodeDecodeError:
            raise ParseError("CVTW parameter name is not UTF-8", offset=cursor) from None
        cursor += name_len
        if name in params:
            raise ParseError(f"duplicate parameter name {name!r}", offset=cursor)
        array, cursor = tensor_from_bytes(blob, cursor)
        params[name] = array
    if cursor != len(blob):
        raise ParseError(f"trailing bytes after last parameter: expected {cursor}, file has {len(blob)}",
                         offset=cursor)
    return config, params


# ---- frame directories -------------------------------------------------------


def frame_name(index: int, suffix: str) -> str:
    return f"frame_{index:05d}.{suffix}"


def read_frame_dir(path, reader, suffix: str) -> np.ndarray:
    """Stack frame_%05d.<suffix> files from a directory into [T, ...]."""
    root = Path(path)
    files = sorted(root.glob(f"frame_*.{suffix}"))
    if not files:
        raise ParseError(f"no frame_*.{suffix} files in {root}")
    frames = [reader(f) for f in files]
    return np.stack(frames, axis=0)


def read_video(path) -> np.ndarray:
    """Read a directory of PPM frames (or a single PPM file) as [T, 3, H, W]."""
    p = Path(path)
    if p.is_file():
        return read_ppm(p)[None]
    return read_frame_dir(p, read_ppm, "ppm")


def read_mask_video(path) -> np.ndarray:
    p = Path(path)
    if p.is_file():
        return read_pgm(p)[None]
    return read_frame_dir(p, read_pgm, "pgm")


def read_pose_video(path) -> np.ndarray:
    return read_frame_dir(path, lambda f: read_tensor(f).astype(np.float32), "cvt")


def write_video(path, video: np.ndarray) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for t in range(video.shape[0]):
        write_ppm(root / frame_name(t, "ppm"), video[t])


def write_mask_video(path, masks: np.ndarray) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for t in range(masks.shape[0]):
        write_pgm(root / frame_name(t, "pgm"), masks[t])


def write_pose_video(path, pose: np.ndarray) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for t in range(pose.shape[0]):
        write_tensor(root / frame_name(t, "cvt"), pose[t].astype(np.float32))
