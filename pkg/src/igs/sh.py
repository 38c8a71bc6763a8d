"""Real spherical harmonics up to degree 3, 3DGS sign conventions.

Each basis function is stored as a polynomial in the direction components so
that values and direction derivatives come from a single table.
"""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
MAX_DEGREE = 3

# basis index -> list of (coefficient, (px, py, pz)) monomials
_BASIS: list[list[tuple[float, tuple[int, int, int]]]] = [
    [(SH_C0, (0, 0, 0))],
    [(-SH_C1, (0, 1, 0))],
    [(SH_C1, (0, 0, 1))],
    [(-SH_C1, (1, 0, 0))],
    [(SH_C2[0], (1, 1, 0))],
    [(SH_C2[1], (0, 1, 1))],
    [(2 * SH_C2[2], (0, 0, 2)), (-SH_C2[2], (2, 0, 0)), (-SH_C2[2], (0, 2, 0))],
    [(SH_C2[3], (1, 0, 1))],
    [(SH_C2[4], (2, 0, 0)), (-SH_C2[4], (0, 2, 0))],
    [(3 * SH_C3[0], (2, 1, 0)), (-SH_C3[0], (0, 3, 0))],
    [(SH_C3[1], (1, 1, 1))],
    [(4 * SH_C3[2], (0, 1, 2)), (-SH_C3[2], (2, 1, 0)), (-SH_C3[2], (0, 3, 0))],
    [(2 * SH_C3[3], (0, 0, 3)), (-3 * SH_C3[3], (2, 0, 1)), (-3 * SH_C3[3], (0, 2, 1))],
    [(4 * SH_C3[4], (1, 0, 2)), (-SH_C3[4], (3, 0, 0)), (-SH_C3[4], (1, 2, 0))],
    [(SH_C3[5], (2, 0, 1)), (-SH_C3[5], (0, 2, 1))],
    [(SH_C3[6], (3, 0, 0)), (-3 * SH_C3[6], (1, 2, 0))],
]


def _powers(d: np.ndarray, top: int) -> list[np.ndarray]:
    # pw[p][..., axis] = d[..., axis] ** p
    pw = [np.ones_like(d)]
    for _ in range(top):
        pw.append(pw[-1] * d)
    return pw


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values, shape (..., (degree+1)**2)."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}]")
    d = np.asarray(dirs, dtype=np.float64)
    pw = _powers(d, 3)
    out = np.zeros(d.shape[:-1] + ((degree + 1) ** 2,))
    for i in range((degree + 1) ** 2):
        for c, (px, py, pz) in _BASIS[i]:
            out[..., i] += c * pw[px][..., 0] * pw[py][..., 1] * pw[pz][..., 2]
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Partial derivatives of each basis function, shape (..., K, 3)."""
    d = np.asarray(dirs, dtype=np.float64)
    pw = _powers(d, 3)
    k = (degree + 1) ** 2
    out = np.zeros(d.shape[:-1] + (k, 3))
    for i in range(k):
        for c, p in _BASIS[i]:
            for axis in range(3):
                if p[axis] == 0:
                    continue
                q = list(p)
                q[axis] -= 1
                out[..., i, axis] += c * p[axis] * pw[q[0]][..., 0] * pw[q[1]][..., 1] * pw[q[2]][..., 2]
    return out


def sh_to_rgb_raw(sh: np.ndarray, dirs: np.ndarray, degree: int) -> np.ndarray:
    """Unclamped color: sum_k basis_k(dir) * sh_k + 0.5, shape (..., 3)."""
    basis = sh_basis(dirs, degree)
    return np.einsum("...k,...kc->...c", basis, np.asarray(sh, dtype=np.float64)) + 0.5


def evaluate_sh(sh: np.ndarray, view_dir: np.ndarray, degree: int | None = None) -> np.ndarray:
    """View-dependent RGB in [0, 1] from SH coefficients shaped (K, 3) or (N, K, 3)."""
    sh = np.asarray(sh, dtype=np.float64)
    if degree is None:
        degree = int(round(np.sqrt(sh.shape[-2]))) - 1
    return np.clip(sh_to_rgb_raw(sh, view_dir, degree), 0.0, 1.0)


def rgb_to_sh_dc(rgb) -> np.ndarray:
    """DC coefficient producing a given view-independent color."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0
