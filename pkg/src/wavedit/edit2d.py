"""The 2-D frequency-selective editing loop.

decompose -> iterate { reconstruct, score, route, update } -> reconstruct.

At this scale the codec is the identity: the grid handed in (an image in
[0,1] or any latent) is optimized directly.  The run is a pure function
of (source grid, config, seed); noise and timestep draws come from
labeled PRNG sub-streams so traces are bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Optimizer
from .prng import Prng, sample_gaussian
from .score import DEFAULT_T_RANGE, ProviderError, draw_timestep
from .subband import (
    FreezePolicy,
    FrequencyState,
    apply_update,
    decompose_latent,
    reconstruct_latent,
    route_gradient,
)


@dataclass
class EditConfig:
    filter_index: int = 3
    levels: int = 3
    policy: FreezePolicy | None = None  # default: nothing frozen
    steps: int = 500
    optimizer: str = "sgd"
    step_size: float = 0.1
    seed: int = 0
    t_range: tuple = DEFAULT_T_RANGE
    trace_every: int = 50  # snapshot cadence; norms are recorded every step

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    def resolved_policy(self) -> FreezePolicy:
        policy = self.policy or FreezePolicy.none(self.levels)
        policy.check_matches(self.levels)
        return policy


@dataclass
class TraceStep:
    step: int
    timestep: int
    grad_norms: dict  # subband key -> L2 norm of the routed gradient


@dataclass
class Snapshot:
    step: int
    state: FrequencyState
    latent: np.ndarray


@dataclass
class EditTrace:
    policy: FreezePolicy
    steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)


@dataclass
class Edit2DResult:
    z_out: np.ndarray
    trace: EditTrace


class EditAborted(RuntimeError):
    """Provider failure mid-run; carries the partial trace."""

    def __init__(self, step: int, cause: ProviderError, trace: EditTrace):
        super().__init__(f"provider failed at step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.trace = trace


def _grad_norms(grads, state: FrequencyState) -> dict:
    return {key: float(np.sqrt(np.sum(grads.band(key) ** 2)))
            for key in state.keys()}


def run_edit_2d(z_src: np.ndarray, provider, cfg: EditConfig) -> Edit2DResult:
    z_src = np.asarray(z_src, dtype=np.float64)
    policy = cfg.resolved_policy()
    state = decompose_latent(z_src, cfg.filter_index, cfg.levels)
    opt = Optimizer(cfg.optimizer, cfg.step_size)
    root = Prng(cfg.seed)
    noise = root.split("noise")
    tstream = root.split("timestep")
    trace = EditTrace(policy=policy)

    for step in range(1, cfg.steps + 1):
        z_hat = reconstruct_latent(state)
        t = draw_timestep(tstream, cfg.t_range)
        eps = sample_gaussian(noise, z_src.shape)
        try:
            grad_z = provider.gradient(z_hat, z_src, t=t, eps=eps)
        except ProviderError as exc:
            raise EditAborted(step, exc, trace) from exc
        grads = route_gradient(state, grad_z, policy)
        trace.steps.append(TraceStep(step=step, timestep=t,
                                     grad_norms=_grad_norms(grads, state)))
        state = apply_update(state, grads, opt)
        if cfg.trace_every and (step % cfg.trace_every == 0 or step == cfg.steps):
            trace.snapshots.append(Snapshot(step=step, state=state,
                                            latent=reconstruct_latent(state)))

    return Edit2DResult(z_out=reconstruct_latent(state), trace=trace)


# ---------------------------------------------------------------------------
# Trace export


def _key_row(key, levels: int):
    """CSV (level, orientation) labels; the low band reports level=J."""
    if key == ("low",):
        return levels, "low"
    return key[0], key[1]


def export_trace(trace: EditTrace, out_dir) -> dict:
    """Write the per-step norm CSV and per-snapshot coefficient maps.

    Returns {"csv": path, "snapshots": [paths...], "states": [paths...]}.
    Coefficient maps are normalized to [0, 255] per band with the
    (min, max) recorded in a JSON sidecar; the raw 64-bit states are
    written alongside as containers (the images are a lossy view only).
    """
    from .container import save_state
    from .imageio import write_image  # local import: keeps codec deps out of the loop

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "subband_grad_norms.csv"
    levels = trace.policy.levels
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "level", "orientation", "grad_l2", "frozen"])
        for rec in trace.steps:
            for key, norm in rec.grad_norms.items():
                lvl, orient = _key_row(key, levels)
                writer.writerow([rec.step, lvl, orient, repr(norm),
                                 trace.policy.is_frozen(key)])

    written = []
    states = []
    for snap in trace.snapshots:
        meta = {}
        for key in snap.state.keys():
            band = snap.state.band(key)
            lvl, orient = _key_row(key, levels)
            name = f"step{snap.step:05d}_L{lvl}_{orient}"
            lo, hi = float(band.min()), float(band.max())
            meta[name] = {"min": lo, "max": hi}
            img_path = out / f"{name}.ppm"
            write_image(normalize_band(band), img_path)
            written.append(img_path)
        with open(out / f"step{snap.step:05d}_scaling.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        state_path = out / f"step{snap.step:05d}_state.fbds"
        save_state(snap.state, state_path)
        states.append(state_path)

    return {"csv": csv_path, "snapshots": written, "states": states}


def normalize_band(band: np.ndarray) -> np.ndarray:
    """Min-max map to [0,1] for visualization; constant bands map to 0.5."""
    lo, hi = float(band.min()), float(band.max())
    if band.ndim == 2:
        band = band[None]
    if math.isclose(lo, hi):
        vis = np.full_like(band, 0.5)
    else:
        vis = (band - lo) / (hi - lo)
    if vis.shape[0] == 3:
        return vis
    return np.repeat(vis.mean(axis=0, keepdims=True), 3, axis=0)
