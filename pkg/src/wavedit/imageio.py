"""Image I/O: binary PPM (P6) natively, 8-bit RGB PNG through Pillow.

Pixel values map to [0,1] by /255 on read; writes quantize with
round(clip(v, 0, 1) * 255), so write-then-read is bit-exact for data that
was 8-bit to begin with.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _to_bytes(grid: np.ndarray) -> np.ndarray:
    a = np.asarray(grid, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ImageFormatError(f"expected a (3, H, W) grid, got shape {a.shape}")
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(grid: np.ndarray, path) -> None:
    data = _to_bytes(grid)
    _, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.transpose(1, 2, 0).tobytes())


def _read_ppm_tokens(raw: bytes, count: int):
    """Header tokens, skipping whitespace and # comments."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(raw):
            raise ImageFormatError("truncated PPM header")
        ch = raw[i:i + 1]
        if ch.isspace():
            i += 1
        elif ch == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace():
                j += 1
            tokens.append(raw[i:j])
            i = j
    return tokens, i + 1  # single whitespace byte after maxval


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        kind = raw[:2].decode("ascii", "replace")
        raise ImageFormatError(f"unsupported PPM flavor {kind!r} (only binary P6)")
    tokens, offset = _read_ppm_tokens(raw, 4)
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 supported, got {maxval}")
    expected = w * h * 3
    payload = raw[offset:offset + expected]
    if len(payload) != expected:
        raise ImageFormatError(f"truncated PPM payload: {len(payload)}/{expected} bytes")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_png(grid: np.ndarray, path) -> None:
    from PIL import Image

    data = _to_bytes(grid)
    Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ImageFormatError(f"only 8-bit RGB PNG supported, got mode {img.mode!r}")
        data = np.asarray(img, dtype=np.uint8)
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(grid: np.ndarray, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(grid, path)
    elif path.suffix.lower() == ".png":
        write_png(grid, path)
    else:
        raise ImageFormatError(f"unsupported image extension {path.suffix!r}")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    raise ImageFormatError(f"unsupported image extension {path.suffix!r}")
