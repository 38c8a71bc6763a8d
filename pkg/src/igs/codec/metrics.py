"""Image quality metrics on unit-range images and the per-run metrics report."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


_KERNEL = gaussian_kernel()


def _blur(x: np.ndarray) -> np.ndarray:
    # zero padding; the kernel is symmetric so this operator is its own adjoint
    y = correlate1d(x, _KERNEL, axis=0, mode="constant")
    return correlate1d(y, _KERNEL, axis=1, mode="constant")


def _pair(a, b):
    x = np.asarray(getattr(a, "values", a), dtype=np.float64)
    y = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    return x, y


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 100 dB."""
    x, y = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return float(-10.0 * np.log10(mse))


def ssim(a, b, with_grad: bool = False):
    """Mean SSIM over pixels and channels; optionally the gradient with respect to ``a``."""
    x, y = _pair(a, b)
    mx, my = _blur(x), _blur(y)
    exx, eyy, exy = _blur(x * x), _blur(y * y), _blur(x * y)
    a1 = 2 * mx * my + C1
    a2 = 2 * (exy - mx * my) + C2
    b1 = mx * mx + my * my + C1
    b2 = (exx - mx * mx) + (eyy - my * my) + C2
    s = (a1 * a2) / (b1 * b2)
    value = float(s.mean())
    if not with_grad:
        return value
    w = 1.0 / s.size
    # grouped so that x == y gives an exactly zero gradient (a1 == b1 and a2 == b2 bitwise there)
    d_mx = s * ((2 * my / a1 - 2 * mx / b1) + (2 * mx / b2 - 2 * my / a2)) * w
    u = s / a2 * w
    v = s / b2 * w
    grad = _blur(d_mx) + y * _blur(2 * u) - (2 * x) * _blur(v)
    return value, grad.reshape(np.shape(getattr(a, "values", a)))


def dssim(a, b) -> float:
    return (1.0 - ssim(a, b)) / 2.0


@dataclass
class MetricsReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    dssim: list = field(default_factory=list)
    storage_bytes_per_frame: float = 0.0
    seconds_per_frame: float = 0.0
    extra: dict = field(default_factory=dict)

    def add(self, rendered, target) -> None:
        self.add_scores(psnr(rendered, target), ssim(rendered, target))

    def add_scores(self, p: float, s: float) -> None:
        self.psnr.append(float(p))
        self.ssim.append(float(s))
        self.dssim.append((1.0 - float(s)) / 2.0)

    def to_text(self) -> str:
        """key=value lines; per-frame entries are suffixed with the frame index."""
        lines = [f"frames={len(self.psnr)}"]
        if self.psnr:
            lines += [
                f"psnr_mean={np.mean(self.psnr):.6f}",
                f"ssim_mean={np.mean(self.ssim):.6f}",
                f"dssim_mean={np.mean(self.dssim):.6f}",
            ]
        lines += [
            f"storage_bytes_per_frame={self.storage_bytes_per_frame:.3f}",
            f"seconds_per_frame={self.seconds_per_frame:.6f}",
        ]
        lines += [f"{k}={v}" for k, v in self.extra.items()]
        for t, (p, s, d) in enumerate(zip(self.psnr, self.ssim, self.dssim)):
            lines.append(f"frame_{t:04d}_psnr={p:.6f}")
            lines.append(f"frame_{t:04d}_ssim={s:.6f}")
            lines.append(f"frame_{t:04d}_dssim={d:.6f}")
        return "\n".join(lines) + "\n"
