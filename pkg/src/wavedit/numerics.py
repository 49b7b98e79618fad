"""Grid conventions, inner products, optimizers, and the finite-difference oracle.

A "grid" throughout this package is a float64 ndarray of shape
(channels, height, width), C-contiguous, row-major within each channel.
Latents, images, feature planes, and gradients all use this carrier.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


class ShapeMismatch(ValueError):
    pass


def as_grid(x, copy: bool = False) -> np.ndarray:
    a = np.array(x, dtype=np.float64, copy=copy) if copy else np.asarray(x, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"grid must be 3-d (C, H, W), got shape {a.shape}")
    return np.ascontiguousarray(a)


def zeros_grid(c: int, h: int, w: int) -> np.ndarray:
    return np.zeros((c, h, w), dtype=np.float64)


def require_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")


def require_finite(a: np.ndarray, what: str = "grid") -> None:
    if not np.isfinite(a).all():
        raise ValueError(f"{what} contains non-finite values")


def inner_product(a: np.ndarray, b: np.ndarray) -> float:
    """<a, b> accumulated in fixed index order (exact summation via fsum)."""
    require_same_shape(a, b)
    return math.fsum((np.asarray(a, dtype=np.float64) * b).ravel())


class Optimizer:
    """SGD or bias-corrected Adam over named parameters.

    Moment slots are keyed by parameter name; a parameter whose key is
    never stepped keeps no state at all, so skipping a frozen parameter
    leaves its moments (and bias-correction counter) untouched.
    """

    def __init__(self, kind: str = "sgd", step_size: float = 0.1,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        self.kind = kind
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._slots: dict = {}

    def step(self, key, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        require_same_shape(param, grad)
        if self.kind == "sgd":
            return param - self.step_size * grad
        m, v, t = self._slots.get(key, (np.zeros_like(param), np.zeros_like(param), 0))
        t += 1
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self._slots[key] = (m, v, t)
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        return param - self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                         h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar functional, entry by entry.

    The testing oracle for every hand-derived adjoint in this package; f
    must be pure and deterministic.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError("objective returned a non-finite value")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
