"""Weights of the anchor motion network and their binary "IGSW" file format.

All matrices act on row vectors (``x @ W``), so a C -> D map is stored C x D.
File layout, little-endian, float32 payloads:

    magic "IGSW" | u32 version (1) | u32 C | u32 L | u32 h
    per layer, in order:
        ln1_gain[C] ln1_bias[C] wq[C,C] wk[C,C] wv[C,C] wo[C,C]
        ln2_gain[C] ln2_bias[C] ff1[C,4C] ff1_bias[4C] ff2[4C,C] ff2_bias[C]
    modulation: u32 in_dim | u32 hidden | w1[in_dim,hidden] b1[hidden]
                w2[hidden,2C] b2[2C]
    decode head: weight[C,7] bias[7]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

IGSW_MAGIC = b"IGSW"
IGSW_VERSION = 1
POSE_DIM = 6
MOD_IN = POSE_DIM + 1  # pose encoding + depth
_HEADER = struct.Struct("<4sIIII")


class WeightsFormatError(ValueError):
    pass


@dataclass
class LayerWeights:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    ff1: np.ndarray
    ff1_bias: np.ndarray
    ff2: np.ndarray
    ff2_bias: np.ndarray

    @classmethod
    def shapes(cls, c: int) -> dict:
        return {
            "ln1_gain": (c,), "ln1_bias": (c,), "wq": (c, c), "wk": (c, c), "wv": (c, c), "wo": (c, c),
            "ln2_gain": (c,), "ln2_bias": (c,), "ff1": (c, 4 * c), "ff1_bias": (4 * c,),
            "ff2": (4 * c, c), "ff2_bias": (c,),
        }

    @classmethod
    def residual_identity(cls, c: int) -> "LayerWeights":
        arrays = {k: np.zeros(s) for k, s in cls.shapes(c).items()}
        arrays["ln1_gain"] = np.ones(c)
        arrays["ln2_gain"] = np.ones(c)
        return cls(**arrays)


@dataclass
class ModulationWeights:
    """Two-layer ReLU network mapping (pose encoding, depth) to per-channel scale and shift."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    @classmethod
    def identity(cls, c: int, hidden: int = 16) -> "ModulationWeights":
        b2 = np.concatenate([np.ones(c), np.zeros(c)])
        return cls(np.zeros((MOD_IN, hidden)), np.zeros(hidden), np.zeros((hidden, 2 * c)), b2)

    def __call__(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = np.maximum(inputs @ self.w1 + self.b1, 0.0)
        out = h @ self.w2 + self.b2
        c = out.shape[-1] // 2
        return out[..., :c], out[..., c:]


@dataclass
class DecodeHead:
    """Linear C -> 7 map: three displacement components then a raw quaternion."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, c: int) -> "DecodeHead":
        return cls(np.zeros((c, 7)), np.zeros(7))


@dataclass
class AgmWeights:
    channels: int
    heads: int
    layers: list = field(default_factory=list)
    modulation: ModulationWeights = None
    head: DecodeHead = None

    def __post_init__(self):
        c = self.channels
        if c < 1 or self.heads < 1 or c % self.heads:
            raise ValueError("channels must be a positive multiple of heads")
        if self.modulation is None:
            self.modulation = ModulationWeights.identity(c)
        if self.head is None:
            self.head = DecodeHead.zeros(c)
        for layer in self.layers:
            for name, shape in LayerWeights.shapes(c).items():
                arr = np.asarray(getattr(layer, name), dtype=np.float64)
                if arr.shape != shape or not np.isfinite(arr).all():
                    raise ValueError(f"layer {name} must be finite with shape {shape}")
                setattr(layer, name, arr)
        m = self.modulation
        if m.w1.shape != (MOD_IN, m.hidden) or m.w2.shape != (m.hidden, 2 * c) or m.b2.shape != (2 * c,):
            raise ValueError("modulation weights have inconsistent shapes")
        if self.head.weight.shape != (c, 7) or self.head.bias.shape != (7,):
            raise ValueError("decode head must be (C, 7) with a 7-vector bias")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def zeros(cls, channels: int = 128, num_layers: int = 4, heads: int = 8) -> "AgmWeights":
        """Residual-identity transformer, identity modulation, zero decode head."""
        return cls(channels, heads, [LayerWeights.residual_identity(channels) for _ in range(num_layers)])

    @classmethod
    def random(cls, channels: int = 128, num_layers: int = 4, heads: int = 8, seed: int = 0, std: float = 0.05) -> "AgmWeights":
        rng = np.random.default_rng(seed)
        layers = []
        for _ in range(num_layers):
            arrays = {k: rng.normal(scale=std, size=s) for k, s in LayerWeights.shapes(channels).items()}
            arrays["ln1_gain"] += 1.0
            arrays["ln2_gain"] += 1.0
            layers.append(LayerWeights(**arrays))
        head = DecodeHead(rng.normal(scale=std, size=(channels, 7)), rng.normal(scale=std, size=7))
        return cls(channels, heads, layers, ModulationWeights.identity(channels), head)


def _put(buf: list, arr) -> None:
    buf.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def encode_weights(w: AgmWeights) -> bytes:
    buf = [_HEADER.pack(IGSW_MAGIC, IGSW_VERSION, w.channels, w.num_layers, w.heads)]
    for layer in w.layers:
        for f in fields(LayerWeights):
            _put(buf, getattr(layer, f.name))
    m = w.modulation
    buf.append(struct.pack("<II", MOD_IN, m.hidden))
    for arr in (m.w1, m.b1, m.w2, m.b2):
        _put(buf, arr)
    _put(buf, w.head.weight)
    _put(buf, w.head.bias)
    return b"".join(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.data):
            raise WeightsFormatError("truncated IGSW file")
        out = self.data[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)


def decode_weights(data: bytes) -> AgmWeights:
    r = _Reader(data)
    magic, version, c, num_layers, heads = _HEADER.unpack(r.take(_HEADER.size))
    if magic != IGSW_MAGIC:
        raise WeightsFormatError(f"bad IGSW magic {magic!r}")
    if version != IGSW_VERSION:
        raise WeightsFormatError(f"unsupported IGSW version {version}")
    layers = []
    for _ in range(num_layers):
        layers.append(LayerWeights(**{k: r.floats(s) for k, s in LayerWeights.shapes(c).items()}))
    in_dim, hidden = struct.unpack("<II", r.take(8))
    if in_dim != MOD_IN:
        raise WeightsFormatError(f"modulation input width {in_dim} != {MOD_IN}")
    mod = ModulationWeights(r.floats((in_dim, hidden)), r.floats((hidden,)), r.floats((hidden, 2 * c)), r.floats((2 * c,)))
    head = DecodeHead(r.floats((c, 7)), r.floats((7,)))
    if r.pos != len(data):
        raise WeightsFormatError("trailing bytes after decode head")
    return AgmWeights(c, heads, layers, mod, head)


def save_weights(path, w: AgmWeights) -> None:
    Path(path).write_bytes(encode_weights(w))


def load_weights(path) -> AgmWeights:
    return decode_weights(Path(path).read_bytes())
