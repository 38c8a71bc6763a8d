"""Photometric refinement loss: (1 - lam) * L1 + lam * D-SSIM, with analytic pixel gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec.metrics import ssim


def _values(img) -> np.ndarray:
    return np.asarray(getattr(img, "values", img), dtype=np.float64)


def combine_loss(l1: float, dssim: float, lam: float) -> float:
    return (1.0 - lam) * l1 + lam * dssim


@dataclass
class LossResult:
    value: float
    l1: float
    dssim: float
    grad: np.ndarray  # d value / d rendered, same shape as the images


def loss(rendered, target, lam: float = 0.2) -> LossResult:
    x, y = _values(rendered), _values(target)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    diff = x - y
    l1 = float(np.abs(diff).mean())
    g = (1.0 - lam) * np.sign(diff) / diff.size
    if lam > 0:
        s, gs = ssim(x, y, with_grad=True)
        dssim = (1.0 - s) / 2.0
        g = g - lam * 0.5 * gs
    else:
        dssim = (1.0 - ssim(x, y)) / 2.0
    return LossResult(combine_loss(l1, dssim, lam), l1, dssim, g)
