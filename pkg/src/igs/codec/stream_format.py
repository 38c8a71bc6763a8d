"""The "IGSS" streaming container.

Little-endian throughout::

    header   magic "IGSS" | u32 version (1) | u32 frame_count | u32 w | u32 sh_degree
    chunk    u8 tag (0 KEY, 1 CAND) | u32 frame | u32 payload_bytes | payload

    KEY payload   u32 n | mu f32[n,3] | rot f32[n,4] | scale f32[n,3]
                  | opacity f32[n] | sh f32[n,K,3]
    CAND payload  mask u8[ceil(n/8)] (bit i of byte i//8, least significant first)
                  | per moved point in index order: dmu f32[3], drot f32[4]

``n`` of a candidate is the count of the most recent KEY chunk. Chunk frame
indices strictly increase from a KEY chunk at frame 0. Storage accounting
counts payload bytes; the 9-byte chunk framing and 20-byte header are
reported separately as container overhead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import GaussianSet, MotionField, sh_coeff_count
from ..motion import apply_motion

IGSS_MAGIC = b"IGSS"
IGSS_VERSION = 1
KEY, CAND = 0, 1
_HEADER = struct.Struct("<4sIIII")
_CHUNK = struct.Struct("<BII")
MOVED_POINT_BYTES = 28


class StreamFormatError(ValueError):
    """Malformed stream; ``code`` is one of the documented error codes."""

    BAD_MAGIC = "bad_magic"
    BAD_VERSION = "bad_version"
    TRUNCATED = "truncated"
    INDEX_REGRESSION = "index_regression"
    NO_KEYFRAME = "no_keyframe"
    BAD_CHUNK = "bad_chunk"

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class Chunk:
    tag: int
    frame: int
    payload: bytes

    @property
    def size(self) -> int:
        return len(self.payload)

    @property
    def kind(self) -> str:
        return "KEY" if self.tag == KEY else "CAND"


@dataclass
class StreamFile:
    frame_count: int
    w: int
    sh_degree: int
    chunks: list = field(default_factory=list)
    version: int = IGSS_VERSION

    def add_keyframe(self, frame: int, gs: GaussianSet) -> None:
        if gs.sh_degree != self.sh_degree:
            raise ValueError("keyframe SH degree differs from the stream header")
        self._check_next(frame)
        self.chunks.append(Chunk(KEY, frame, encode_keyframe(gs)))

    def add_candidate(self, frame: int, motion: MotionField) -> None:
        self._check_next(frame)
        if not self.chunks:
            raise StreamFormatError(StreamFormatError.NO_KEYFRAME, "a candidate needs a preceding keyframe")
        self.chunks.append(Chunk(CAND, frame, encode_candidate(motion)))

    def _check_next(self, frame: int) -> None:
        if self.chunks and frame <= self.chunks[-1].frame:
            raise StreamFormatError(StreamFormatError.INDEX_REGRESSION, f"frame {frame} after {self.chunks[-1].frame}")
        if not self.chunks and frame != 0:
            raise StreamFormatError(StreamFormatError.NO_KEYFRAME, "the first chunk must be frame 0")

    @property
    def frames(self) -> list:
        return [c.frame for c in self.chunks]

    def decode(self) -> dict:
        """frame -> GaussianSet for every chunk, candidates rebuilt from their keyframe."""
        out = {}
        key = None
        for c in self.chunks:
            if c.tag == KEY:
                key = decode_keyframe(c.payload, self.sh_degree)
                out[c.frame] = key
            else:
                out[c.frame] = apply_motion(key, decode_candidate(c.payload, key.count))
        return out

    def motions(self) -> dict:
        out = {}
        n = 0
        for c in self.chunks:
            if c.tag == KEY:
                n = struct.unpack_from("<I", c.payload)[0]
            else:
                out[c.frame] = decode_candidate(c.payload, n)
        return out


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def encode_keyframe(gs: GaussianSet) -> bytes:
    parts = [struct.pack("<I", gs.count)]
    parts += [_f32(a) for a in (gs.mu, gs.rot, gs.scale, gs.opacity, gs.sh)]
    return b"".join(parts)


def decode_keyframe(payload: bytes, sh_degree: int) -> GaussianSet:
    if len(payload) < 4:
        raise StreamFormatError(StreamFormatError.TRUNCATED, "keyframe payload shorter than its count")
    n = struct.unpack_from("<I", payload)[0]
    k = sh_coeff_count(sh_degree)
    shapes = [(n, 3), (n, 4), (n, 3), (n,), (n, k, 3)]
    need = 4 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(payload) != need:
        code = StreamFormatError.TRUNCATED if len(payload) < need else StreamFormatError.BAD_CHUNK
        raise StreamFormatError(code, f"keyframe payload has {len(payload)} bytes, expected {need}")
    arrays = []
    off = 4
    for s in shapes:
        cnt = int(np.prod(s))
        arrays.append(np.frombuffer(payload, dtype="<f4", count=cnt, offset=off).astype(np.float32).reshape(s))
        off += 4 * cnt
    return GaussianSet(*arrays, sh_degree=sh_degree)


def encode_candidate(motion: MotionField) -> bytes:
    m = motion.moved_mask
    mask = np.packbits(m.astype(np.uint8), bitorder="little").tobytes()
    rows = np.concatenate([motion.dmu[m], motion.drot[m]], axis=1)
    return mask + _f32(rows)


def candidate_size(count: int, moved: int) -> int:
    return (count + 7) // 8 + MOVED_POINT_BYTES * moved


def decode_candidate(payload: bytes, count: int) -> MotionField:
    nmask = (count + 7) // 8
    if len(payload) < nmask:
        raise StreamFormatError(StreamFormatError.TRUNCATED, "candidate mask is cut short")
    mask = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, count=nmask), count=count, bitorder="little").astype(bool)
    moved = int(mask.sum())
    if len(payload) != candidate_size(count, moved):
        code = StreamFormatError.TRUNCATED if len(payload) < candidate_size(count, moved) else StreamFormatError.BAD_CHUNK
        raise StreamFormatError(code, f"candidate payload has {len(payload)} bytes for {moved} moved points")
    rows = np.frombuffer(payload, dtype="<f4", offset=nmask).reshape(moved, 7)
    dmu = np.zeros((count, 3), dtype=np.float32)
    drot = np.zeros((count, 4), dtype=np.float32)
    drot[:, 0] = 1.0
    dmu[mask] = rows[:, :3]
    drot[mask] = rows[:, 3:]
    return MotionField(dmu, drot, mask)


def encode_stream(sf: StreamFile) -> bytes:
    parts = [_HEADER.pack(IGSS_MAGIC, sf.version, sf.frame_count, sf.w, sf.sh_degree)]
    for c in sf.chunks:
        parts.append(_CHUNK.pack(c.tag, c.frame, len(c.payload)))
        parts.append(c.payload)
    return b"".join(parts)


def decode_stream(data: bytes) -> StreamFile:
    if len(data) < _HEADER.size:
        raise StreamFormatError(StreamFormatError.TRUNCATED, "file shorter than the header")
    magic, version, frame_count, w, sh_degree = _HEADER.unpack_from(data)
    if magic != IGSS_MAGIC:
        raise StreamFormatError(StreamFormatError.BAD_MAGIC, f"expected b'IGSS', got {magic!r}")
    if version != IGSS_VERSION:
        raise StreamFormatError(StreamFormatError.BAD_VERSION, f"unsupported version {version}")
    sf = StreamFile(frame_count, w, sh_degree, version=version)
    pos = _HEADER.size
    count = None
    while pos < len(data):
        if pos + _CHUNK.size > len(data):
            raise StreamFormatError(StreamFormatError.TRUNCATED, f"chunk header cut short at byte {pos}")
        tag, frame, size = _CHUNK.unpack_from(data, pos)
        pos += _CHUNK.size
        if pos + size > len(data):
            raise StreamFormatError(StreamFormatError.TRUNCATED, f"frame {frame} payload cut short")
        payload = bytes(data[pos : pos + size])
        pos += size
        if tag not in (KEY, CAND):
            raise StreamFormatError(StreamFormatError.BAD_CHUNK, f"unknown chunk tag {tag}")
        if sf.chunks and frame <= sf.chunks[-1].frame:
            raise StreamFormatError(StreamFormatError.INDEX_REGRESSION, f"frame {frame} after {sf.chunks[-1].frame}")
        if not sf.chunks and (tag != KEY or frame != 0):
            raise StreamFormatError(StreamFormatError.NO_KEYFRAME, "stream must open with a KEY chunk at frame 0")
        if tag == KEY:
            decode_keyframe(payload, sh_degree)
            count = struct.unpack_from("<I", payload)[0]
        else:
            decode_candidate(payload, count)
        sf.chunks.append(Chunk(tag, frame, payload))
    return sf


def write_stream(path, sf: StreamFile) -> int:
    data = encode_stream(sf)
    Path(path).write_bytes(data)
    return len(data)


def read_stream(path) -> StreamFile:
    return decode_stream(Path(path).read_bytes())


def stream_from_result(result, schedule) -> StreamFile:
    """Pack a streaming run: KEY chunks at keyframes, motion residuals for candidates."""
    first = result.frames[0]
    sf = StreamFile(schedule.frame_count, schedule.interval, first.sh_degree)
    for t, gs in enumerate(result.frames):
        if schedule.is_keyframe(t):
            sf.add_keyframe(t, gs)
        else:
            sf.add_candidate(t, result.motions[t])
    return sf


def storage_report(sf: StreamFile) -> float:
    """Average payload bytes per frame over the stream's frame count."""
    return sum(c.size for c in sf.chunks) / max(sf.frame_count, 1)


def container_overhead(sf: StreamFile) -> int:
    return _HEADER.size + _CHUNK.size * len(sf.chunks)
