"""DCT / DFT decompositions with low-frequency masks.

Comparison engines for the frequency-selective editing loop: instead of
wavelet subbands, a gradient is projected onto a low- or high-frequency
set of global transform coefficients.

Indexing conventions:

* dft2/idft2 use the unitary FFT (1/sqrt(HW) both ways).  Bin (i, j)
  carries the signed frequency pair (sy(i), sx(j)) with
  s(i) = i for i <= n/2 and i - n otherwise; Nyquist is n // 2.
* dct2/idct2 are the orthonormal DCT-II / DCT-III pair; bin index k
  corresponds to frequency k / 2 cycles, Nyquist index n - 1.

A mask built with ``cutoff`` keeps bins whose normalized frequency
magnitude (|s| / Nyquist for the DFT, k / (n - 1) for the DCT) is
<= cutoff; ``rect`` tests each axis separately, ``radial`` the
root-sum-square.  DFT masks are symmetric under the conjugate-symmetry
index map by construction, so masked real gradients stay real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MASK_SHAPES = ("rect", "radial")


@lru_cache(maxsize=None)
def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = math.sqrt(2.0 / n) * np.cos(math.pi * k * (2 * i + 1) / (2 * n))
    m[0, :] = 1.0 / math.sqrt(n)
    return m


def dct2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    dh = _dct_matrix(x.shape[-2])
    dw = _dct_matrix(x.shape[-1])
    return dh @ x @ dw.T


def idct2(coeff: np.ndarray) -> np.ndarray:
    coeff = np.asarray(coeff, dtype=np.float64)
    dh = _dct_matrix(coeff.shape[-2])
    dw = _dct_matrix(coeff.shape[-1])
    return dh.T @ coeff @ dw


def dft2(x: np.ndarray) -> np.ndarray:
    return np.fft.fft2(np.asarray(x, dtype=np.float64), axes=(-2, -1), norm="ortho")


def idft2(spec: np.ndarray) -> np.ndarray:
    out = np.fft.ifft2(spec, axes=(-2, -1), norm="ortho")
    return np.ascontiguousarray(out.real)


def _signed_freq(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n)


@dataclass(frozen=True)
class SpectralMask:
    """Low-frequency bin selector shared by the DCT and DFT paths.

    ``mask`` is the {0,1} grid in DFT layout (the type's stored field);
    the DCT-layout variant is materialized from the same parameters.
    """

    height: int
    width: int
    cutoff: float
    shape: str
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = self.mask[0]
        h, w = self.height, self.width
        mirrored = m[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
        if not np.array_equal(m, mirrored):
            raise ValueError("mask is not conjugate-symmetric; masked updates would go complex")

    def dft_grid(self) -> np.ndarray:
        return self.mask[0]

    def dct_grid(self) -> np.ndarray:
        ny = max(self.height - 1, 1)
        nx = max(self.width - 1, 1)
        fy = (np.arange(self.height) / ny)[:, None]
        fx = (np.arange(self.width) / nx)[None, :]
        return _threshold(fy, fx, self.cutoff, self.shape)


def _threshold(fy: np.ndarray, fx: np.ndarray, cutoff: float, shape: str) -> np.ndarray:
    if shape == "rect":
        keep = (np.abs(fy) <= cutoff) & (np.abs(fx) <= cutoff)
    else:
        keep = np.sqrt(fy * fy + fx * fx) <= cutoff
    return keep.astype(np.float64)


def build_lowpass_mask(height: int, width: int, cutoff: float,
                       shape: str = "rect") -> SpectralMask:
    if not 0.0 < cutoff <= 1.0:
        raise ValueError(f"cutoff must be in (0, 1], got {cutoff}")
    if shape not in MASK_SHAPES:
        raise ValueError(f"mask shape must be one of {MASK_SHAPES}, got {shape!r}")
    ny = max(height // 2, 1)
    nx = max(width // 2, 1)
    fy = (_signed_freq(height) / ny)[:, None]
    fx = (_signed_freq(width) / nx)[None, :]
    grid = _threshold(fy, fx, cutoff, shape)
    return SpectralMask(height=height, width=width, cutoff=cutoff,
                        shape=shape, mask=grid[None, :, :])


def masked_spectral_gradient(grad: np.ndarray, mask: SpectralMask,
                             transform: str, keep: str) -> np.ndarray:
    """Project a gradient onto the kept frequency set.

    keep="low" zeroes every bin outside the mask (only low frequencies
    update); keep="high" zeroes the masked low bins.  The projection is
    linear, idempotent, and self-adjoint.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape[-2] != mask.height or grad.shape[-1] != mask.width:
        raise ValueError(f"gradient {grad.shape[-2:]} does not match mask "
                         f"{(mask.height, mask.width)}")
    if keep not in ("low", "high"):
        raise ValueError(f"keep must be 'low' or 'high', got {keep!r}")
    if transform == "dct":
        sel = mask.dct_grid()
        coeff = dct2(grad)
        kept = coeff * sel if keep == "low" else coeff * (1.0 - sel)
        return idct2(kept)
    if transform == "dft":
        sel = mask.dft_grid()
        spec = dft2(grad)
        kept = spec * sel if keep == "low" else spec * (1.0 - sel)
        return idft2(kept)
    raise ValueError(f"transform must be 'dct' or 'dft', got {transform!r}")
