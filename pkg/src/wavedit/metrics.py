"""Fidelity metrics and subband energy reports."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import require_same_shape
from .subband import FrequencyState

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2  # (K1 * L)^2 with L = 1
SSIM_C2 = 0.03**2


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _corr_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode 2-D correlation by shifted-slice accumulation."""
    h, w = img.shape
    kh, kw = kernel.shape
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros((oh, ow))
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * img[i:i + oh, j:j + ow]
    return out


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity, per channel then averaged.

    Gaussian 11x11 window (sigma 1.5), stabilizers for unit dynamic range,
    windows restricted to positions where the full kernel fits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require_same_shape(a, b)
    if a.shape[-2] < SSIM_WINDOW or a.shape[-1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_window()
    scores = []
    for c in range(a.shape[0]):
        x, y = a[c], b[c]
        mu_x = _corr_valid(x, kernel)
        mu_y = _corr_valid(y, kernel)
        sxx = _corr_valid(x * x, kernel) - mu_x * mu_x
        syy = _corr_valid(y * y, kernel) - mu_y * mu_y
        sxy = _corr_valid(x * y, kernel) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sxy + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; +inf when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass(frozen=True)
class SubbandEnergyReport:
    entries: tuple       # ((key, energy, fraction), ...) in subband order
    total: float
    empty: bool          # True when total energy is exactly 0

    def fraction(self, key) -> float:
        for k, _, frac in self.entries:
            if k == key:
                return frac
        raise KeyError(key)


def subband_energy(state: FrequencyState) -> SubbandEnergyReport:
    energies = [(key, float(np.sum(state.band(key) ** 2))) for key in state.keys()]
    total = math.fsum(e for _, e in energies)
    empty = total == 0.0
    entries = tuple(
        (key, e, 0.0 if empty else e / total) for key, e in energies
    )
    return SubbandEnergyReport(entries=entries, total=total, empty=empty)
