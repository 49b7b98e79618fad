"""Frequency-decomposed triplane texture fields.

A texture field is three axis-aligned feature planes (XY, XZ, ZY), each
stored as wavelet subbands and reconstructed before sampling.  A surface
point x in [-1,1]^3 projects onto each plane (bilinear, align-corners);
the three C-vectors are concatenated in the fixed order xy, xz, zy and
decoded to RGB by a small MLP (ReLU hidden layers, sigmoid output).

Gradients flow by hand-written reverse passes: MLP backward, bilinear
scatter-add adjoint into the planes (sequential, deterministic
accumulation), then the exact reconstruction adjoint into the subbands.
During editing the MLP is frozen and only plane subbands move, so the
freeze policy semantics of the 2-D loop carry over unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .mesh import GBuffer, TriangleMesh, render_gbuffer, sample_texture
from .numerics import Optimizer, require_same_shape
from .prng import Prng, sample_gaussian, sample_uniform
from .score import DEFAULT_T_RANGE, ProviderError, draw_timestep
from .subband import FreezePolicy, FrequencyState, decompose_latent
from .wavelet import daubechies_filters, waverec2, waverec2_adjoint

log = logging.getLogger(__name__)

PLANE_NAMES = ("xy", "xz", "zy")
# (column axis, row axis) of each plane in world coordinates (x=0, y=1, z=2)
_PLANE_AXES = {"xy": (0, 1), "xz": (0, 2), "zy": (2, 1)}


@dataclass(frozen=True)
class FrequencyTriplane:
    plane_xy: FrequencyState
    plane_xz: FrequencyState
    plane_zy: FrequencyState

    def __post_init__(self):
        shapes = {s.latent_shape for s in self.states()}
        meta = {(s.filter_index, s.levels) for s in self.states()}
        if len(shapes) != 1 or len(meta) != 1:
            raise ValueError("all three planes must share (C,H,W), filter, and levels")

    def states(self):
        return (self.plane_xy, self.plane_xz, self.plane_zy)

    def state(self, name: str) -> FrequencyState:
        return dict(zip(PLANE_NAMES, self.states()))[name]

    def replace(self, name: str, state: FrequencyState) -> "FrequencyTriplane":
        updated = dict(zip(PLANE_NAMES, self.states()))
        updated[name] = state
        return FrequencyTriplane(updated["xy"], updated["xz"], updated["zy"])

    @property
    def channels(self) -> int:
        return self.plane_xy.latent_shape[0]

    @property
    def levels(self) -> int:
        return self.plane_xy.levels

    @property
    def filter_index(self) -> int:
        return self.plane_xy.filter_index


def init_triplane(prng: Prng, channels: int = 16, size: int = 128,
                  filter_index: int = 3, levels: int = 2,
                  init_scale: float = 0.05) -> FrequencyTriplane:
    """Small random planes, decomposed into subbands; draws consume the
    prng plane by plane in the order xy, xz, zy."""
    states = []
    for _ in PLANE_NAMES:
        plane = init_scale * sample_gaussian(prng, (channels, size, size))
        states.append(decompose_latent(plane, filter_index, levels))
    return FrequencyTriplane(*states)


def reconstruct_planes(ft: FrequencyTriplane):
    f = daubechies_filters(ft.filter_index)
    return tuple(waverec2(s.subbands, f) for s in ft.states())


# ---------------------------------------------------------------------------
# Bilinear plane sampling and its adjoint


def _plane_lookup(plane: np.ndarray, col_coord: np.ndarray, row_coord: np.ndarray):
    """Align-corners bilinear gather; coords in [-1,1] (clamped with a debug note)."""
    _, h, w = plane.shape
    if np.any(col_coord < -1.0) or np.any(col_coord > 1.0) \
            or np.any(row_coord < -1.0) or np.any(row_coord > 1.0):
        log.debug("plane sample coordinates outside [-1,1]; clamping")
    u = (np.clip(col_coord, -1.0, 1.0) + 1.0) / 2.0 * (w - 1)
    v = (np.clip(row_coord, -1.0, 1.0) + 1.0) / 2.0 * (h - 1)
    x0 = np.clip(np.floor(u).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(v).astype(int), 0, h - 2)
    fx = u - x0
    fy = v - y0
    return x0, y0, fx, fy


def _sample_plane(plane: np.ndarray, col_coord, row_coord) -> np.ndarray:
    x0, y0, fx, fy = _plane_lookup(plane, col_coord, row_coord)
    return ((1 - fy) * (1 - fx) * plane[:, y0, x0]
            + (1 - fy) * fx * plane[:, y0, x0 + 1]
            + fy * (1 - fx) * plane[:, y0 + 1, x0]
            + fy * fx * plane[:, y0 + 1, x0 + 1])


def _sample_plane_adjoint(plane_shape, col_coord, row_coord,
                          grad_feat: np.ndarray) -> np.ndarray:
    """Transpose of _sample_plane: scatter-add the four tap weights."""
    grad = np.zeros(plane_shape)
    x0, y0, fx, fy = _plane_lookup(grad, col_coord, row_coord)
    sl = slice(None)
    np.add.at(grad, (sl, y0, x0), (1 - fy) * (1 - fx) * grad_feat)
    np.add.at(grad, (sl, y0, x0 + 1), (1 - fy) * fx * grad_feat)
    np.add.at(grad, (sl, y0 + 1, x0), fy * (1 - fx) * grad_feat)
    np.add.at(grad, (sl, y0 + 1, x0 + 1), fy * fx * grad_feat)
    return grad


def sample_triplane(planes, x) -> np.ndarray:
    """Concatenated feature at point(s) x; planes are the reconstructed grids.

    x may be (3,) or (N, 3); returns (3C,) or (N, 3C), ordered xy, xz, zy.
    """
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    feats = []
    for plane, name in zip(planes, PLANE_NAMES):
        ca, ra = _PLANE_AXES[name]
        feats.append(_sample_plane(plane, pts[:, ca], pts[:, ra]))  # (C, N)
    out = np.concatenate(feats, axis=0).T  # (N, 3C)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# MLP decoder


@dataclass
class MlpDecoder:
    """[3C -> 64 -> 64 -> 3]; ReLU hidden, sigmoid output."""

    weights: list  # [(W, b), ...] with W (fan_in, fan_out)

    def __post_init__(self):
        for w, b in self.weights:
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("decoder weights must be finite")

    @classmethod
    def create(cls, prng: Prng, feature_dim: int, hidden: int = 64) -> "MlpDecoder":
        """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) init, drawn layer by
        layer (weights row-major, then bias)."""
        dims = [feature_dim, hidden, hidden, 3]
        weights = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(1.0 / fan_in)
            w = sample_uniform(prng, (fan_in, fan_out), -bound, bound)
            b = sample_uniform(prng, (fan_out,), -bound, bound)
            weights.append((w, b))
        return cls(weights=weights)

    @property
    def feature_dim(self) -> int:
        return self.weights[0][0].shape[0]

    def forward(self, feats: np.ndarray, want_cache: bool = False):
        """feats (N, 3C) -> rgb (N, 3) in (0, 1)."""
        if feats.shape[-1] != self.feature_dim:
            raise ValueError(f"feature dim {feats.shape[-1]} != {self.feature_dim}")
        pre = []
        post = [feats]
        h = feats
        for i, (w, b) in enumerate(self.weights):
            z = h @ w + b
            pre.append(z)
            h = _sigmoid(z) if i == len(self.weights) - 1 else np.maximum(z, 0.0)
            post.append(h)
        return (h, pre, post) if want_cache else h

    def backward(self, pre, post, grad_out: np.ndarray):
        """Gradients of a scalar loss wrt weights and the input features."""
        out = post[-1]
        delta = grad_out * out * (1.0 - out)  # sigmoid'
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            w, _ = self.weights[i]
            grads[i] = (post[i].T @ delta, delta.sum(axis=0))
            delta = delta @ w.T
            if i > 0:
                delta = delta * (pre[i - 1] > 0.0)
        return grads, delta  # delta is now dL/dfeatures


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def decode_color(feature: np.ndarray, mlp: MlpDecoder) -> np.ndarray:
    """Single-feature convenience wrapper around the batched forward pass."""
    return mlp.forward(np.asarray(feature, dtype=np.float64)[None, :])[0]


# ---------------------------------------------------------------------------
# Rendering and its reverse pass


def render_view(ft: FrequencyTriplane, mlp: MlpDecoder, gbuf: GBuffer,
                planes=None) -> np.ndarray:
    """(3, H, W) image; misses are black.  Planes are reconstructed once."""
    if planes is None:
        planes = reconstruct_planes(ft)
    h, w = gbuf.resolution
    image = np.zeros((3, h, w))
    rows, cols = gbuf.hit_indices()
    if rows.size == 0:
        return image
    pts = gbuf.positions[:, rows, cols].T  # (N, 3)
    feats = sample_triplane(planes, pts)
    rgb = mlp.forward(feats)
    image[:, rows, cols] = rgb.T
    return image


def backprop_render(ft: FrequencyTriplane, mlp: MlpDecoder, gbuf: GBuffer,
                    grad_image: np.ndarray, planes=None):
    """Exact reverse of render_view for a scalar loss.

    Returns ({plane name: Subbands2D gradient}, mlp gradients).  Pixel
    contributions are scattered in row-major hit order, so accumulation
    is deterministic.  Pass the planes from the matching render_view call
    to skip re-reconstructing them.
    """
    if planes is None:
        planes = reconstruct_planes(ft)
    h, w = gbuf.resolution
    if grad_image.shape != (3, h, w):
        require_same_shape(grad_image, np.empty((3, h, w)))
    f = daubechies_filters(ft.filter_index)
    rows, cols = gbuf.hit_indices()
    mlp_zero = [(np.zeros_like(wt), np.zeros_like(b)) for wt, b in mlp.weights]
    if rows.size == 0:
        zero_bands = {name: waverec2_adjoint(np.zeros(st.latent_shape), f, st.levels)
                      for name, st in zip(PLANE_NAMES, ft.states())}
        return zero_bands, mlp_zero

    pts = gbuf.positions[:, rows, cols].T
    feats = sample_triplane(planes, pts)
    _, pre, post = mlp.forward(feats, want_cache=True)
    grad_rgb = grad_image[:, rows, cols].T  # (N, 3)
    mlp_grads, grad_feats = mlp.backward(pre, post, grad_rgb)

    c = ft.channels
    plane_grads = {}
    for k, (plane, name) in enumerate(zip(planes, PLANE_NAMES)):
        ca, ra = _PLANE_AXES[name]
        gfeat = grad_feats[:, k * c:(k + 1) * c].T  # (C, N)
        gplane = _sample_plane_adjoint(plane.shape, pts[:, ca], pts[:, ra], gfeat)
        plane_grads[name] = waverec2_adjoint(gplane, f, ft.levels)
    return plane_grads, mlp_grads


# ---------------------------------------------------------------------------
# Fitting and editing loops


@dataclass
class FitResult:
    triplane: FrequencyTriplane
    mlp: MlpDecoder
    losses: list


class FitDiverged(RuntimeError):
    pass


def _target_colors(mesh_texture: np.ndarray, gbuf: GBuffer) -> np.ndarray:
    rows, cols = gbuf.hit_indices()
    return sample_texture(mesh_texture, gbuf.uv[:, rows, cols])  # (3, N)


def init_fit(ft: FrequencyTriplane, mlp: MlpDecoder, mesh: TriangleMesh,
             texture: np.ndarray, cameras, steps: int = 2000,
             step_size: float = 0.02) -> FitResult:
    """Fit planes + MLP so renders match the mesh's own texture (mean L1).

    The |.| subgradient at 0 is taken as 0.  Cameras are visited
    round-robin; G-buffers and target colors are computed once per camera.
    """
    if not cameras:
        raise ValueError("need at least one camera")
    gbufs = [render_gbuffer(mesh, cam) for cam in cameras]
    targets = [_target_colors(texture, gb) for gb in gbufs]
    opt = Optimizer("adam", step_size)
    losses = []
    for step in range(steps):
        view = step % len(gbufs)
        gbuf = gbufs[view]
        rows, cols = gbuf.hit_indices()
        if rows.size == 0:
            continue
        planes = reconstruct_planes(ft)
        render = render_view(ft, mlp, gbuf, planes=planes)
        resid = render[:, rows, cols] - targets[view]
        loss = float(np.mean(np.abs(resid)))
        losses.append(loss)
        if not math.isfinite(loss):
            raise FitDiverged(f"loss became non-finite at step {step}")
        grad_image = np.zeros_like(render)
        grad_image[:, rows, cols] = np.sign(resid) / resid.size
        plane_grads, mlp_grads = backprop_render(ft, mlp, gbuf, grad_image,
                                                 planes=planes)
        ft = _step_planes(ft, plane_grads, opt)
        mlp = MlpDecoder(weights=[
            (opt.step(("mlp", i, "w"), wt, gw), opt.step(("mlp", i, "b"), b, gb))
            for i, ((wt, b), (gw, gb)) in enumerate(zip(mlp.weights, mlp_grads))
        ])
    return FitResult(triplane=ft, mlp=mlp, losses=losses)


def _step_planes(ft: FrequencyTriplane, plane_grads: dict, opt: Optimizer,
                 policy: FreezePolicy | None = None) -> FrequencyTriplane:
    for name in PLANE_NAMES:
        state = ft.state(name)
        grads = plane_grads[name]
        updated = {}
        for key in state.keys():
            if policy is not None and policy.is_frozen(key):
                continue
            g = grads.band(key)
            if not g.any():
                continue
            updated[key] = opt.step((name, key), state.band(key), g)
        if updated:
            ft = ft.replace(name, FrequencyState(
                subbands=state.subbands.replace_bands(updated),
                filter_index=state.filter_index,
                levels=state.levels,
                latent_shape=state.latent_shape,
            ))
    return ft


@dataclass
class TextureEditConfig:
    steps: int = 500
    optimizer: str = "adam"
    step_size: float = 0.01
    seed: int = 0
    t_range: tuple = DEFAULT_T_RANGE

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class TextureEditResult:
    triplane: FrequencyTriplane
    mlp: MlpDecoder  # unchanged; editing freezes the decoder
    renders: list    # final render per camera


class TextureEditAborted(RuntimeError):
    def __init__(self, step: int, cause: ProviderError):
        super().__init__(f"provider failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


def run_texture_edit(ft: FrequencyTriplane, mlp: MlpDecoder, mesh: TriangleMesh,
                     cameras, provider, policy: FreezePolicy,
                     cfg: TextureEditConfig) -> TextureEditResult:
    """Score-driven texture editing with subband freezing.

    Each step renders one camera (round-robin), asks the provider for an
    image-space gradient (identity codec), backpropagates it to the plane
    subbands, zeroes frozen bands, and steps the rest.  The MLP decoder
    never changes, so the frequency semantics of the planes stay fixed.
    """
    policy.check_matches(ft.levels)
    gbufs = [render_gbuffer(mesh, cam) for cam in cameras]
    source_renders = [render_view(ft, mlp, gb) for gb in gbufs]
    opt = Optimizer(cfg.optimizer, cfg.step_size) if cfg.steps else None
    root = Prng(cfg.seed)
    noise = root.split("texture-noise")
    tstream = root.split("texture-timestep")

    for step in range(1, cfg.steps + 1):
        view = (step - 1) % len(gbufs)
        gbuf = gbufs[view]
        planes = reconstruct_planes(ft)
        render = render_view(ft, mlp, gbuf, planes=planes)
        t = draw_timestep(tstream, cfg.t_range)
        eps = sample_gaussian(noise, render.shape)
        try:
            grad_image = provider.gradient(render, source_renders[view], t=t, eps=eps)
        except ProviderError as exc:
            raise TextureEditAborted(step, exc) from exc
        plane_grads, _ = backprop_render(ft, mlp, gbuf, grad_image, planes=planes)
        ft = _step_planes(ft, plane_grads, opt, policy=policy)

    renders = [render_view(ft, mlp, gb) for gb in gbufs]
    return TextureEditResult(triplane=ft, mlp=mlp, renders=renders)


# ---------------------------------------------------------------------------
# Texture baking


def bake_texture(ft: FrequencyTriplane, mlp: MlpDecoder, mesh: TriangleMesh,
                 height: int, width: int) -> np.ndarray:
    """Evaluate the field at texel surface positions -> (3, H, W) texture.

    Each triangle is rasterized in UV space (same texel-center convention
    as sample_texture); texels covered by several triangles keep the last
    one in face order.  Uncovered texels stay black.
    """
    planes = reconstruct_planes(ft)
    out = np.zeros((3, height, width))
    xs = np.arange(width)
    ys = np.arange(height)
    for face in mesh.faces:
        uv = mesh.uvs[face[:, 1]]  # (3, 2)
        tri_x = uv[:, 0] * (width - 1)
        tri_y = (1.0 - uv[:, 1]) * (height - 1)
        x_lo = max(int(np.floor(tri_x.min())), 0)
        x_hi = min(int(np.ceil(tri_x.max())), width - 1)
        y_lo = max(int(np.floor(tri_y.min())), 0)
        y_hi = min(int(np.ceil(tri_y.max())), height - 1)
        if x_hi < x_lo or y_hi < y_lo:
            continue
        gx, gy = np.meshgrid(xs[x_lo:x_hi + 1], ys[y_lo:y_hi + 1])
        denom = ((tri_y[1] - tri_y[2]) * (tri_x[0] - tri_x[2])
                 + (tri_x[2] - tri_x[1]) * (tri_y[0] - tri_y[2]))
        if abs(denom) < 1e-12:
            continue
        w0 = ((tri_y[1] - tri_y[2]) * (gx - tri_x[2])
              + (tri_x[2] - tri_x[1]) * (gy - tri_y[2])) / denom
        w1 = ((tri_y[2] - tri_y[0]) * (gx - tri_x[2])
              + (tri_x[0] - tri_x[2]) * (gy - tri_y[2])) / denom
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        verts = mesh.vertices[face[:, 0]]  # (3, 3)
        pts = (w0[inside][:, None] * verts[0]
               + w1[inside][:, None] * verts[1]
               + w2[inside][:, None] * verts[2])
        feats = sample_triplane(planes, pts)
        rgb = mlp.forward(feats)
        out[:, gy[inside], gx[inside]] = rgb.T
    return out
