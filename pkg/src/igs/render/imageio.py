"""Image files: 8-bit PNG and the raw float "IGSI" format.

IGSI layout, little-endian: 4-byte magic ``IGSI``, u32 width, u32 height,
u32 channels, then width*height*channels float32 values, row-major (H, W, C).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ..core import Image

IGSI_MAGIC = b"IGSI"
_HEADER = struct.Struct("<4sIII")


class ImageFormatError(ValueError):
    pass


def encode_igsi(img: Image) -> bytes:
    v = img.values
    return _HEADER.pack(IGSI_MAGIC, v.shape[1], v.shape[0], v.shape[2]) + v.astype("<f4").tobytes()


def decode_igsi(data: bytes) -> Image:
    if len(data) < _HEADER.size:
        raise ImageFormatError("truncated IGSI header")
    magic, w, h, c = _HEADER.unpack_from(data)
    if magic != IGSI_MAGIC:
        raise ImageFormatError(f"bad IGSI magic {magic!r}")
    need = _HEADER.size + 4 * w * h * c
    if len(data) != need:
        raise ImageFormatError(f"IGSI payload has {len(data)} bytes, expected {need}")
    return Image(np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, c))


def write_igsi(path, img: Image) -> None:
    Path(path).write_bytes(encode_igsi(img))


def read_igsi(path) -> Image:
    return decode_igsi(Path(path).read_bytes())


def write_png(path, img: Image) -> None:
    v = np.clip(np.rint(img.values * 255.0), 0, 255).astype(np.uint8)
    if v.shape[2] == 1:
        v = v[:, :, 0]
    PILImage.fromarray(v).save(path)


def read_png(path) -> Image:
    arr = np.asarray(PILImage.open(path)).astype(np.float32) / 255.0
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return Image(arr)
