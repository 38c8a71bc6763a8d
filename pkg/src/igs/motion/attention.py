"""Pre-norm multi-head self-attention over anchor tokens.

Tokens are first sorted into a canonical order (lexicographic on their
features) and every reduction is an explicit left-to-right accumulation, so the
output for a token depends only on the token set, never on its input position.
That makes permutation equivariance hold bit-for-bit rather than to rounding.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .fps import AnchorSet
from .weights import AgmWeights, LayerWeights

LN_EPS = 1e-5
_QUERY_BLOCK = 256


def _seq_sum(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(x, axis, 0)
    acc = x[0].copy()
    for k in range(1, x.shape[0]):
        acc += x[k]
    return acc


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a (..., K) @ b (K, N) with the K-sum accumulated in index order."""
    acc = a[..., 0, None] * b[0]
    for k in range(1, a.shape[-1]):
        acc += a[..., k, None] * b[k]
    return acc


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    c = x.shape[-1]
    mean = _seq_sum(x, -1) / c
    d = x - mean[..., None]
    var = _seq_sum(d * d, -1) / c
    return d / np.sqrt(var + LN_EPS)[..., None] * gain + bias


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _attention(h: np.ndarray, layer: LayerWeights, heads: int) -> np.ndarray:
    m, c = h.shape
    d = c // heads
    q = _mm(h, layer.wq).reshape(m, heads, d).transpose(1, 0, 2)
    k = _mm(h, layer.wk).reshape(m, heads, d).transpose(1, 0, 2)
    v = _mm(h, layer.wv).reshape(m, heads, d).transpose(1, 0, 2)
    scale = 1.0 / np.sqrt(d)
    out = np.empty((heads, m, d))
    for s in range(0, m, _QUERY_BLOCK):
        qb = q[:, s : s + _QUERY_BLOCK]
        scores = qb[:, :, None, 0] * k[:, None, :, 0]
        for j in range(1, d):
            scores += qb[:, :, None, j] * k[:, None, :, j]
        scores *= scale
        scores -= scores.max(axis=-1, keepdims=True)
        p = np.exp(scores)
        p /= _seq_sum(p, -1)[..., None]
        acc = p[:, :, 0, None] * v[:, None, 0]
        for j in range(1, m):
            acc += p[:, :, j, None] * v[:, None, j]
        out[:, s : s + _QUERY_BLOCK] = acc
    return _mm(out.transpose(1, 0, 2).reshape(m, c), layer.wo)


def _block(x: np.ndarray, layer: LayerWeights, heads: int) -> np.ndarray:
    x = x + _attention(layer_norm(x, layer.ln1_gain, layer.ln1_bias), layer, heads)
    h = layer_norm(x, layer.ln2_gain, layer.ln2_bias)
    return x + (_mm(gelu(_mm(h, layer.ff1) + layer.ff1_bias), layer.ff2) + layer.ff2_bias)


def transformer_tokens(features: np.ndarray, weights: AgmWeights) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != weights.channels:
        raise ValueError(f"features must be (M, {weights.channels}), got {f.shape}")
    if weights.num_layers == 0:
        return f.copy()
    canon = np.lexsort(f.T[::-1])
    x = f[canon]
    for layer in weights.layers:
        x = _block(x, layer, weights.heads)
    out = np.empty_like(x)
    out[canon] = x
    return out


def transformer_forward(anchors: AnchorSet, weights: AgmWeights) -> AnchorSet:
    if anchors.features is None:
        raise ValueError("anchors carry no features; run lift_features first")
    return anchors.with_features(transformer_tokens(anchors.features, weights))
