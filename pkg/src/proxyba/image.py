"""Grayscale images, bilinear sampling and gradients.

Points handed to the public functions are normalized camera coordinates;
the intrinsics of the image map them to pixels (``u`` is the column, ``v``
the row).  The ``*_px`` helpers work directly in pixels, never raise, and
return a validity mask instead, which is what the vectorized solvers use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OutOfBounds


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def to_pixel(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([self.fx * x[..., 0] + self.cx, self.fy * x[..., 1] + self.cy], axis=-1)

    def to_normalized(self, uv):
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def as_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class Image:
    data: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError("expected a 2-D grayscale array")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class PatchPattern:
    """Integer pixel offsets sampled around each anchor."""

    offsets: np.ndarray = field(default_factory=lambda: _square_offsets(1))

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=int).reshape(-1, 2)
        if not np.any(np.all(off == 0, axis=1)):
            raise ValueError("patch pattern must contain the (0, 0) offset")
        if len({tuple(o) for o in off}) != len(off):
            raise ValueError("patch offsets must be distinct")
        object.__setattr__(self, "offsets", off)

    @classmethod
    def square(cls, radius=1):
        return cls(_square_offsets(radius))

    @property
    def radius(self):
        return int(np.abs(self.offsets).max())

    @property
    def center_index(self):
        """Position of the ``(0, 0)`` offset, i.e. the anchor pixel itself."""
        return int(np.flatnonzero(np.all(self.offsets == 0, axis=1))[0])

    def __len__(self):
        return len(self.offsets)


def _square_offsets(radius):
    r = np.arange(-radius, radius + 1)
    du, dv = np.meshgrid(r, r)
    return np.stack([du.ravel(), dv.ravel()], axis=1)


# --------------------------------------------------------------------------
# pixel-space kernels
# --------------------------------------------------------------------------

def bilinear_px(data, u, v, frame=None):
    """Bilinear sample of ``data`` at pixel coordinates.

    ``data`` is ``(H, W)`` or a stack ``(F, H, W)`` indexed by ``frame``.
    Returns ``(values, valid)``; invalid entries are sampled at a clamped
    location and should be ignored.
    """
    H, W = data.shape[-2:]
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    valid = (u >= 0) & (u <= W - 2) & (v >= 0) & (v <= H - 2)
    uc = np.clip(u, 0.0, W - 2)
    vc = np.clip(v, 0.0, H - 2)
    u0 = np.floor(uc).astype(np.intp)
    v0 = np.floor(vc).astype(np.intp)
    a = uc - u0
    b = vc - v0
    flat = data.reshape(-1)
    base = v0 * W + u0
    if frame is not None:
        base = base + np.asarray(frame, dtype=np.intp) * (H * W)
    i00 = flat[base]
    i01 = flat[base + 1]
    i10 = flat[base + W]
    i11 = flat[base + W + 1]
    top = i00 + a * (i01 - i00)
    bottom = i10 + a * (i11 - i10)
    return top + b * (bottom - top), valid


def gradient_px(data, u, v, frame=None):
    """Half-pixel central differences of the bilinear interpolant.

    Returns ``(du, dv, valid)`` in intensity per pixel.
    """
    ip, vp = bilinear_px(data, u + 0.5, v, frame)
    im, vm = bilinear_px(data, u - 0.5, v, frame)
    jp, wp = bilinear_px(data, u, v + 0.5, frame)
    jm, wm = bilinear_px(data, u, v - 0.5, frame)
    return ip - im, jp - jm, vp & vm & wp & wm


# --------------------------------------------------------------------------
# public, normalized-coordinate API
# --------------------------------------------------------------------------

def sample_bilinear(img, point):
    uv = img.intrinsics.to_pixel(point)
    value, valid = bilinear_px(img.data, uv[..., 0], uv[..., 1])
    if not np.all(valid):
        raise OutOfBounds(f"sample outside image bounds at pixel {uv[~valid][0]}")
    return value


def image_gradient(img, point):
    """Gradient with respect to normalized coordinates, shape ``(..., 2)``."""
    uv = img.intrinsics.to_pixel(point)
    gu, gv, valid = gradient_px(img.data, uv[..., 0], uv[..., 1])
    if not np.all(valid):
        raise OutOfBounds(f"gradient footprint outside image at pixel {uv[~valid][0]}")
    k = img.intrinsics
    return np.stack([k.fx * gu, k.fy * gv], axis=-1)


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------

def to_uint8(data):
    return np.clip(np.rint(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)


def quantize(data, bit_depth=8):
    """Round intensities in [0, 1] to the levels of an unsigned integer image."""
    if bit_depth not in (8, 16):
        raise ValueError("bit depth must be 8 or 16")
    maxval = (1 << bit_depth) - 1
    return np.rint(np.clip(data, 0.0, 1.0) * maxval) / maxval


def write_pgm(path, data, bit_depth=8):
    """Write intensities in [0, 1] as a binary PGM (P5), 8 or 16 bits per sample."""
    if bit_depth == 8:
        pixels = to_uint8(data)
    elif bit_depth == 16:
        pixels = np.rint(np.clip(np.asarray(data), 0.0, 1.0) * 65535.0).astype(">u2")
    else:
        raise ValueError("bit depth must be 8 or 16")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{(1 << bit_depth) - 1}\n".encode("ascii"))
        fh.write(pixels.tobytes())


def _pgm_tokens(buf):
    """Yield header tokens and the offset right after the last one."""
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_pgm(path):
    buf = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(buf)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    pixels = np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset)
    return pixels.reshape(h, w).astype(float) / maxval


def read_png(path):
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=float)
            return arr / (65535.0 if arr.max() > 255 else 255.0)
        return np.asarray(im.convert("L"), dtype=float) / 255.0


def load_image(path, intrinsics):
    path = Path(path)
    if path.suffix.lower() == ".png":
        data = read_png(path)
    else:
        data = read_pgm(path)
    return Image(data, intrinsics)
