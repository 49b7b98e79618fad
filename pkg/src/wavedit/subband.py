"""Frequency-domain optimization state with selective freezing.

The optimized variable of the 2-D editing loop is a set of wavelet
subbands rather than the latent itself.  A freeze policy marks subbands
whose gradient is stopped; frozen bands are preserved structurally: the
routed gradient for them is the exact zero grid, the update step skips
them entirely (no optimizer-moment drift), and the returned state aliases
the previous band array, so preservation is bit-exact by construction
rather than numerically approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Optimizer, ShapeMismatch, require_finite, require_same_shape
from .wavelet import (
    ORIENTATIONS,
    Subbands2D,
    daubechies_filters,
    wavedec2,
    waverec2,
    waverec2_adjoint,
)


@dataclass(frozen=True)
class FreezePolicy:
    """Per-subband stop-gradient table: True = frozen."""

    freeze_low: bool
    freeze_detail: tuple  # J triples of (hl, lh, hh) booleans, finest first

    @classmethod
    def none(cls, levels: int) -> "FreezePolicy":
        return cls(False, tuple((False, False, False) for _ in range(levels)))

    @classmethod
    def high(cls, levels: int) -> "FreezePolicy":
        """Freeze every detail band; only the low band updates."""
        return cls(False, tuple((True, True, True) for _ in range(levels)))

    @classmethod
    def low(cls, levels: int) -> "FreezePolicy":
        """Freeze the low band; only detail bands update."""
        return cls(True, tuple((False, False, False) for _ in range(levels)))

    @classmethod
    def preset(cls, name: str, levels: int) -> "FreezePolicy":
        table = {"none": cls.none, "freeze-high": cls.high, "freeze-low": cls.low}
        if name not in table:
            raise ValueError(f"unknown policy {name!r}; expected one of {sorted(table)}")
        return table[name](levels)

    @property
    def levels(self) -> int:
        return len(self.freeze_detail)

    def is_frozen(self, key) -> bool:
        if key == ("low",):
            return self.freeze_low
        lvl, orient = key
        return self.freeze_detail[lvl - 1][ORIENTATIONS.index(orient)]

    def check_matches(self, levels: int) -> None:
        if self.levels != levels:
            raise ValueError(
                f"policy has {self.levels} detail levels, state has {levels}"
            )


@dataclass(frozen=True)
class FrequencyState:
    """Wavelet subbands plus the transform metadata needed to invert them."""

    subbands: Subbands2D
    filter_index: int
    levels: int
    latent_shape: tuple  # (C, H, W)

    def keys(self):
        return self.subbands.keys()

    def band(self, key) -> np.ndarray:
        return self.subbands.band(key)


def decompose_latent(z: np.ndarray, filter_index: int, levels: int) -> FrequencyState:
    z = np.asarray(z, dtype=np.float64)
    require_finite(z, "latent")
    f = daubechies_filters(filter_index)
    sub = wavedec2(z, f, levels)
    return FrequencyState(subbands=sub, filter_index=filter_index,
                          levels=levels, latent_shape=z.shape)


def reconstruct_latent(state: FrequencyState) -> np.ndarray:
    f = daubechies_filters(state.filter_index)
    return waverec2(state.subbands, f)


def route_gradient(state: FrequencyState, grad_z: np.ndarray,
                   policy: FreezePolicy) -> Subbands2D:
    """Pull a latent-space gradient back onto the subbands, zeroing frozen ones.

    The pullback is the exact adjoint of reconstruction; frozen subbands
    come back as exact zero grids (not merely small).
    """
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != tuple(state.latent_shape):
        raise ShapeMismatch(
            f"gradient shape {grad_z.shape} != latent shape {state.latent_shape}"
        )
    policy.check_matches(state.levels)
    f = daubechies_filters(state.filter_index)
    routed = waverec2_adjoint(grad_z, f, state.levels)
    zeroed = {
        key: np.zeros_like(routed.band(key))
        for key in routed.keys()
        if policy.is_frozen(key)
    }
    return routed.replace_bands(zeroed)


def apply_update(state: FrequencyState, grads: Subbands2D,
                 opt: Optimizer) -> FrequencyState:
    """One optimizer step per subband.

    A subband whose gradient is the exact zero grid is passed through
    untouched: same array object, no optimizer slot created or advanced.
    """
    updated = {}
    for key in state.keys():
        g = grads.band(key)
        p = state.band(key)
        require_same_shape(p, g)
        if not g.any():
            continue
        updated[key] = opt.step(key, p, g)
    if not updated:
        return state
    return FrequencyState(
        subbands=state.subbands.replace_bands(updated),
        filter_index=state.filter_index,
        levels=state.levels,
        latent_shape=state.latent_shape,
    )
