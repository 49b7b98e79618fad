"""Triangle meshes, OBJ ingestion, and G-buffer rendering.

The renderer intentionally stops at geometry: for each pixel it reports
whether a ray hit the mesh, the surface position in the normalized
[-1,1]^3 space, and the interpolated UV.  Color comes from the texture
field elsewhere; there is no shading.  Intersection is Moller-Trumbore
with a 1e-9 determinant epsilon, nearest positive hit, backface culling
off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DET_EPS = 1e-9


class ObjParseError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    uvs: np.ndarray       # (T, 2), each in [0,1]^2
    faces: np.ndarray     # (F, 3, 2) int: [corner][vertex index, uv index]

    def __post_init__(self):
        if self.faces.shape[0] < 1:
            raise ValueError("mesh needs at least one face")

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def parse_obj(text: str) -> TriangleMesh:
    """Parse the v / vt / f subset; polygons are fan-triangulated.

    Faces must reference texture coordinates (`f v/vt` or `f v/vt/vn`);
    negative OBJ indices resolve from the end of the current list.
    """
    vertices: list = []
    uvs: list = []
    faces: list = []

    def resolve(idx_str: str, count: int, lineno: int, kind: str) -> int:
        try:
            idx = int(idx_str)
        except ValueError:
            raise ObjParseError(f"line {lineno}: bad {kind} index {idx_str!r}") from None
        if idx == 0:
            raise ObjParseError(f"line {lineno}: OBJ indices are 1-based, got 0")
        resolved = idx - 1 if idx > 0 else count + idx
        if not 0 <= resolved < count:
            raise ObjParseError(f"line {lineno}: {kind} index {idx} out of range "
                                f"(have {count})")
        return resolved

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        if tag == "v":
            if len(args) < 3:
                raise ObjParseError(f"line {lineno}: vertex needs 3 coordinates")
            vertices.append([float(v) for v in args[:3]])
        elif tag == "vt":
            if len(args) < 2:
                raise ObjParseError(f"line {lineno}: texcoord needs 2 coordinates")
            uvs.append([float(v) for v in args[:2]])
        elif tag == "f":
            if len(args) < 3:
                raise ObjParseError(f"line {lineno}: face needs >= 3 corners")
            corners = []
            for token in args:
                fields = token.split("/")
                v_idx = resolve(fields[0], len(vertices), lineno, "vertex")
                if len(fields) < 2 or not fields[1]:
                    raise ObjParseError(
                        f"line {lineno}: face corner {token!r} has no texture "
                        "coordinate (textured faces required)")
                t_idx = resolve(fields[1], len(uvs), lineno, "uv")
                corners.append((v_idx, t_idx))
            for i in range(1, len(corners) - 1):  # fan rule
                faces.append([corners[0], corners[i], corners[i + 1]])
        # other tags (vn, o, g, s, usemtl, mtllib, ...) are ignored

    if not faces:
        raise ObjParseError("no faces found")
    return TriangleMesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        uvs=np.asarray(uvs, dtype=np.float64) if uvs else np.zeros((0, 2)),
        faces=np.asarray(faces, dtype=np.int64),
    )


def load_obj(path) -> TriangleMesh:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_obj(fh.read())


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Uniformly scale and center so the bounding box fits [-1, 1]^3."""
    lo, hi = mesh.bounds
    half = (hi - lo) / 2.0
    extent = float(half.max())
    if extent <= 0.0:
        raise ValueError("degenerate mesh: zero extent on every axis")
    center = (hi + lo) / 2.0
    return TriangleMesh(
        vertices=(mesh.vertices - center) / extent,
        uvs=mesh.uvs,
        faces=mesh.faces,
    )


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    up: tuple = (0.0, 1.0, 0.0)
    fov_deg: float = 45.0
    resolution: tuple = (64, 64)  # (H, W)

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov must be in (0, 180), got {self.fov_deg}")
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera position coincides with look-at point")

    def rays(self):
        """Pinhole rays through pixel centers; returns (origin, dirs (H,W,3))."""
        h, w = self.resolution
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("up vector is parallel to the view direction")
        right /= nr
        up = np.cross(right, fwd)
        tan_half = math.tan(math.radians(self.fov_deg) / 2.0)
        aspect = w / h
        # pixel centers; +y in image goes down, +y in camera goes up
        xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * tan_half * aspect
        ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * tan_half
        dirs = (fwd[None, None, :]
                + xs[None, :, None] * right[None, None, :]
                + ys[:, None, None] * up[None, None, :])
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return pos, dirs


@dataclass(frozen=True)
class GBuffer:
    hit_mask: np.ndarray   # (1, H, W), {0,1}
    positions: np.ndarray  # (3, H, W), zeros where no hit
    uv: np.ndarray         # (2, H, W), zeros where no hit

    @property
    def resolution(self):
        return self.hit_mask.shape[1:]

    def hit_indices(self):
        """(rows, cols) of hit pixels in row-major order (deterministic)."""
        return np.nonzero(self.hit_mask[0] > 0.5)


def render_gbuffer(mesh: TriangleMesh, camera: Camera) -> GBuffer:
    h, w = camera.resolution
    origin, dirs = camera.rays()
    rays = dirs.reshape(-1, 3)
    n = rays.shape[0]

    best_t = np.full(n, np.inf)
    best_pos = np.zeros((n, 3))
    best_uv = np.zeros((n, 2))
    hit = np.zeros(n, dtype=bool)

    v = mesh.vertices
    for face in mesh.faces:
        p0, p1, p2 = v[face[0, 0]], v[face[1, 0]], v[face[2, 0]]
        uv0, uv1, uv2 = (mesh.uvs[face[i, 1]] for i in range(3))
        e1 = p1 - p0
        e2 = p2 - p0
        pvec = np.cross(rays, e2)
        det = pvec @ e1
        ok = np.abs(det) > DET_EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - p0
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1)
        bv = (rays @ qvec) * inv
        t = (e2 @ qvec) * inv
        accept = ok & (u >= 0.0) & (bv >= 0.0) & (u + bv <= 1.0) & (t > DET_EPS)
        closer = accept & (t < best_t)
        if not closer.any():
            continue
        idx = np.nonzero(closer)[0]
        ti = t[idx]
        ui = u[idx]
        vi = bv[idx]
        best_t[idx] = ti
        best_pos[idx] = (1.0 - ui - vi)[:, None] * p0 + ui[:, None] * p1 + vi[:, None] * p2
        best_uv[idx] = (1.0 - ui - vi)[:, None] * uv0 + ui[:, None] * uv1 + vi[:, None] * uv2
        hit[idx] = True

    mask = hit.reshape(h, w).astype(np.float64)[None]
    pos = np.where(hit[:, None], best_pos, 0.0).reshape(h, w, 3).transpose(2, 0, 1)
    uv = np.where(hit[:, None], best_uv, 0.0).reshape(h, w, 2).transpose(2, 0, 1)
    return GBuffer(hit_mask=mask, positions=np.ascontiguousarray(pos),
                   uv=np.ascontiguousarray(uv))


def sample_texture(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup with clamp-to-edge addressing.

    uv (0,0) is the center of the bottom-left texel and (1,1) the center
    of the top-right one (v axis points up, image rows point down).
    uv may be (2,) or (2, N); returns (C,) or (C, N).
    """
    tex = np.asarray(tex, dtype=np.float64)
    c, th, tw = tex.shape
    uv = np.asarray(uv, dtype=np.float64)
    single = uv.ndim == 1
    if single:
        uv = uv[:, None]
    x = np.clip(uv[0], 0.0, 1.0) * (tw - 1)
    y = (1.0 - np.clip(uv[1], 0.0, 1.0)) * (th - 1)
    x0 = np.clip(np.floor(x).astype(int), 0, max(tw - 2, 0))
    y0 = np.clip(np.floor(y).astype(int), 0, max(th - 2, 0))
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    fx = x - x0
    fy = y - y0
    out = ((1 - fy) * (1 - fx) * tex[:, y0, x0]
           + (1 - fy) * fx * tex[:, y0, x1]
           + fy * (1 - fx) * tex[:, y1, x0]
           + fy * fx * tex[:, y1, x1])
    return out[:, 0] if single else out


# ---------------------------------------------------------------------------
# Procedural test meshes (closed-form geometry for tests and demos)


def make_quad(z: float = 0.0, extent: float = 1.0) -> TriangleMesh:
    """Two-triangle square in the z = const plane, UVs spanning [0,1]^2."""
    e = extent
    vertices = np.array([[-e, -e, z], [e, -e, z], [e, e, z], [-e, e, z]])
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    faces = np.array([
        [[0, 0], [1, 1], [2, 2]],
        [[0, 0], [2, 2], [3, 3]],
    ], dtype=np.int64)
    return TriangleMesh(vertices=vertices, uvs=uvs, faces=faces)


def make_uv_sphere(radius: float = 1.0, n_lat: int = 16, n_lon: int = 32) -> TriangleMesh:
    """Latitude/longitude sphere; uv = (lon/2pi, 1 - lat/pi)."""
    verts = []
    uvs = []
    for i in range(n_lat + 1):
        theta = math.pi * i / n_lat  # 0 at north pole
        for j in range(n_lon + 1):  # duplicated seam column keeps uv continuous
            phi = 2.0 * math.pi * j / n_lon
            verts.append([radius * math.sin(theta) * math.cos(phi),
                          radius * math.cos(theta),
                          radius * math.sin(theta) * math.sin(phi)])
            uvs.append([j / n_lon, 1.0 - i / n_lat])
    faces = []
    cols = n_lon + 1
    for i in range(n_lat):
        for j in range(n_lon):
            a = i * cols + j
            b = a + 1
            c = a + cols
            d = c + 1
            if i > 0:
                faces.append([[a, a], [b, b], [c, c]])
            if i < n_lat - 1:
                faces.append([[b, b], [d, d], [c, c]])
    return TriangleMesh(vertices=np.asarray(verts, dtype=np.float64),
                        uvs=np.asarray(uvs, dtype=np.float64),
                        faces=np.asarray(faces, dtype=np.int64))


def make_torus(major: float = 0.7, minor: float = 0.3,
               n_major: int = 32, n_minor: int = 16) -> TriangleMesh:
    verts = []
    uvs = []
    for i in range(n_major + 1):
        phi = 2.0 * math.pi * i / n_major
        for j in range(n_minor + 1):
            psi = 2.0 * math.pi * j / n_minor
            r = major + minor * math.cos(psi)
            verts.append([r * math.cos(phi), minor * math.sin(psi), r * math.sin(phi)])
            uvs.append([i / n_major, j / n_minor])
    faces = []
    cols = n_minor + 1
    for i in range(n_major):
        for j in range(n_minor):
            a = i * cols + j
            b = a + cols
            faces.append([[a, a], [b, b], [a + 1, a + 1]])
            faces.append([[b, b], [b + 1, b + 1], [a + 1, a + 1]])
    return TriangleMesh(vertices=np.asarray(verts, dtype=np.float64),
                        uvs=np.asarray(uvs, dtype=np.float64),
                        faces=np.asarray(faces, dtype=np.int64))
