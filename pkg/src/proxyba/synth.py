"""Synthetic image sequences with exact ground truth.

The scene is a surface described in the reference camera frame, either a
fronto-parallel plane or a smooth heightfield ``Z = depth + amplitude * s(X, Y)``.
Its texture is projected from the reference camera: a surface point shows the
texture value at its reference-image location.  Every frame (the reference
included) is rendered by casting rays through a grid of sub-pixel samples,
intersecting them with the surface and averaging the texture looked up at
the reference projection of the hit points.  Because all frames sample the
same continuous texture, the images agree with the warp model up to the
box-filter footprint and 8-bit quantization.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import SpecInfeasible
from .geometry import Pose, se3_exp, so3_exp
from .image import (Image, Intrinsics, PatchPattern, bilinear_px, load_image, quantize,
                    read_pgm, read_png)
from .problem import ProblemState


@dataclass
class SceneSpec:
    width: int = 640
    height: int = 480
    fx: float = 1200.0
    fy: float = 1200.0
    cx: float | None = None
    cy: float | None = None
    n_frames: int = 20
    n_points: int = 200
    geometry: str = "heightfield"        # "heightfield" | "plane"
    depth: float = 1.0
    amplitude: float = 0.1
    relief_wavelength: float = 1.2       # scene units
    trajectory: str = "orbit"            # "orbit" | "dolly"
    extent: float = 10.0                 # degrees (orbit) or scene units (dolly)
    direction: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    texture: str = "noise"               # "noise" or a path to a PNG/PGM
    texture_scales: list = field(default_factory=lambda: [4.0, 8.0, 16.0])
    contrast: float = 0.03
    texture_resolution: int = 2          # texels per reference pixel
    supersample: int = 2                 # samples per pixel along each axis
    patch_radius: int = 1
    margin: int = 4
    min_distance: int = 12               # corner non-maximum suppression window (pixels)
    pixel_noise: float = 0.0
    quantize: bool = True
    bit_depth: int = 16                  # 8 or 16 bits per stored sample
    seed: int = 0

    def __post_init__(self):
        if self.cx is None:
            self.cx = (self.width - 1) / 2.0
        if self.cy is None:
            self.cy = (self.height - 1) / 2.0

    @property
    def intrinsics(self):
        return Intrinsics(self.fx, self.fy, self.cx, self.cy)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Scene:
    spec: SceneSpec
    images: list          # frame 0 is the reference
    poses: Pose           # (F,) world(reference) -> camera, frame 0 identity
    inv_depths: np.ndarray
    anchors: np.ndarray   # (N, 2) reference pixels

    @property
    def intrinsics(self):
        return self.images[0].intrinsics

    def problem(self, poses=None, inv_depths=None, pattern=None):
        poses = self.poses if poses is None else poses
        inv_depths = self.inv_depths if inv_depths is None else inv_depths
        pattern = pattern or PatchPattern.square(self.spec.patch_radius)
        return ProblemState(self.images[0], self.images[1:], self.anchors,
                            poses[1:], inv_depths, pattern)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

class _Surface:
    def __init__(self, spec, rng):
        self.depth = spec.depth
        if spec.geometry == "plane":
            self.amp = np.zeros(0)
            self.k = np.zeros((0, 2))
            self.phase = np.zeros(0)
        elif spec.geometry == "heightfield":
            n = 4
            angles = rng.uniform(0, np.pi, n)
            freq = 2 * np.pi / spec.relief_wavelength * rng.uniform(0.7, 1.3, n)
            self.k = np.stack([np.cos(angles), np.sin(angles)], axis=1) * freq[:, None]
            w = rng.uniform(0.5, 1.0, n)
            self.amp = spec.amplitude * w / w.sum()
            self.phase = rng.uniform(0, 2 * np.pi, n)
        else:
            raise ValueError(f"unknown geometry {spec.geometry!r}")

    def height(self, X, Y):
        """Surface depth and its partial derivatives at ``(X, Y)``."""
        Z = np.full(np.shape(X), self.depth)
        ZX = np.zeros(np.shape(X))
        ZY = np.zeros(np.shape(X))
        for a, (kx, ky), ph in zip(self.amp, self.k, self.phase):
            arg = kx * X + ky * Y + ph
            Z += a * np.sin(arg)
            c = a * np.cos(arg)
            ZX += c * kx
            ZY += c * ky
        return Z, ZX, ZY

    def intersect(self, C, D, s=None, iterations=20, tol=1e-8):
        """Ray parameter ``s`` with ``C + s D`` on the surface (Newton).

        ``s`` optionally warm-starts the iteration, e.g. from a neighbouring ray.
        """
        if s is None:
            s = (self.depth - C[2]) / D[2]
        if not len(self.amp):
            return (self.depth - C[2]) / D[2]
        for _ in range(iterations):
            X = C[0] + s * D[0]
            Y = C[1] + s * D[1]
            Z, ZX, ZY = self.height(X, Y)
            f = C[2] + s * D[2] - Z
            fp = D[2] - ZX * D[0] - ZY * D[1]
            step = f / fp
            s = s - step
            # quadratic convergence: the error left after this step is ~step**2
            if np.max(np.abs(step)) < tol:
                break
        return s

    def reference_depth(self, x, y):
        zero = np.zeros(3)
        return self.intersect(zero, np.stack([x, y, np.ones_like(x)]))


def trajectory(spec):
    """World-to-camera poses of every frame; frame 0 is the identity."""
    F = spec.n_frames
    frac = np.arange(F) / max(F - 1, 1)
    poses = []
    if spec.trajectory == "orbit":
        center = np.array([0.0, 0.0, spec.depth])
        for a in np.deg2rad(spec.extent) * frac:
            R = so3_exp(np.array([0.0, -a, 0.0]))
            poses.append(Pose(R, center - R @ center))
    elif spec.trajectory == "dolly":
        direction = np.asarray(spec.direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        for s in spec.extent * frac:
            # camera moves by +s along direction, so scene points move the other way
            poses.append(Pose(np.eye(3), -s * direction))
    else:
        raise ValueError(f"unknown trajectory {spec.trajectory!r}")
    return Pose.stack(poses)


# --------------------------------------------------------------------------
# texture
# --------------------------------------------------------------------------

class _Texture:
    """Texture over reference normalized coordinates, sampled bilinearly."""

    def __init__(self, spec, rng):
        self.res = spec.texture_resolution
        self.border_u = spec.width // 4
        self.border_v = spec.height // 4
        self.K = spec.intrinsics
        if spec.texture == "noise":
            shape = ((spec.height + 2 * self.border_v) * self.res,
                     (spec.width + 2 * self.border_u) * self.res)
            acc = np.zeros(shape)
            for scale in spec.texture_scales:
                layer = ndimage.gaussian_filter(rng.standard_normal(shape), scale * self.res,
                                                mode="wrap")
                acc += layer / layer.std()
            acc = (acc - acc.mean()) / acc.std()
            self.data = np.clip(0.5 + spec.contrast * acc, 0.02, 0.98)
        else:
            path = Path(spec.texture)
            src = read_png(path) if path.suffix.lower() == ".png" else read_pgm(path)
            shape = ((spec.height + 2 * self.border_v) * self.res,
                     (spec.width + 2 * self.border_u) * self.res)
            zoom = (shape[0] / src.shape[0], shape[1] / src.shape[1])
            self.data = np.clip(ndimage.zoom(src, zoom, order=1, mode="nearest"), 0.0, 1.0)

    def lookup(self, x, y):
        u = self.K.fx * x + self.K.cx
        v = self.K.fy * y + self.K.cy
        tu = (u + self.border_u) * self.res + (self.res - 1) / 2.0
        tv = (v + self.border_v) * self.res + (self.res - 1) / 2.0
        value, valid = bilinear_px(self.data, tu, tv)
        return value, valid


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _render_frame(spec, surface, texture, pose):
    ss = spec.supersample
    offsets = (np.arange(ss) + 0.5) / ss - 0.5
    u = np.arange(spec.width, dtype=float)
    v = np.arange(spec.height, dtype=float)
    acc = np.zeros((spec.height, spec.width))
    Rt = pose.R.T
    C = -Rt @ pose.t
    K = spec.intrinsics
    s = None
    for dv in offsets:
        for du in offsets:
            x = ((u + du - K.cx) / K.fx)[None, :]
            y = ((v + dv - K.cy) / K.fy)[:, None]
            D = Rt[:, 0, None, None] * x + Rt[:, 1, None, None] * y + Rt[:, 2, None, None]
            s = surface.intersect(C, D, s)
            P = C[:, None, None] + s * D
            value, valid = texture.lookup(P[0] / P[2], P[1] / P[2])
            if not np.all(valid) or np.any(s <= 0):
                raise SpecInfeasible("a frame sees beyond the textured region")
            acc += value
    return acc / ss**2


def _corner_scores(img, sigma=1.5):
    gy, gx = np.gradient(img)
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    tr = 0.5 * (sxx + syy)
    return tr - np.sqrt(np.maximum(tr * tr - (sxx * syy - sxy * sxy), 0.0))


def _candidates(spec, ref):
    score = _corner_scores(ref)
    peaks = score == ndimage.maximum_filter(score, size=spec.min_distance)
    m = spec.patch_radius + spec.margin + 1
    peaks[:m] = peaks[-m:] = False
    peaks[:, :m] = peaks[:, -m:] = False
    vv, uu = np.nonzero(peaks & (score > 0))
    order = np.argsort(-score[vv, uu], kind="stable")
    return np.stack([uu[order], vv[order]], axis=1).astype(float)


def _visibility(spec, poses, anchors, inv_depths):
    """First out-of-view (frame, anchor) per candidate; -1 when visible everywhere."""
    K = spec.intrinsics
    lo = spec.patch_radius + spec.margin
    offsets = PatchPattern.square(spec.patch_radius).offsets
    x = K.to_normalized(anchors[:, None, :] + offsets[None])
    xh = np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)
    first_bad = np.full(len(anchors), -1)
    for f in range(len(poses)):
        p = np.einsum("ij,nkj->nki", poses.R[f], xh) + inv_depths[:, None, None] * poses.t[f]
        z = p[..., 2]
        zs = np.where(z > 1e-12, z, 1.0)
        u = K.fx * p[..., 0] / zs + K.cx
        v = K.fy * p[..., 1] / zs + K.cy
        ok = (z > 1e-12) & (u >= lo) & (u <= spec.width - 1 - lo) & \
             (v >= lo) & (v <= spec.height - 1 - lo)
        bad = ~ok.all(axis=1) & (first_bad < 0)
        first_bad[bad] = f
    return first_bad


def render_sequence(spec: SceneSpec) -> Scene:
    """Render all frames and sample anchors at strong reference corners."""
    rng = np.random.default_rng(spec.seed)
    surface = _Surface(spec, rng)
    texture = _Texture(spec, rng)
    poses = trajectory(spec)
    K = spec.intrinsics

    ref = _render_frame(spec, surface, texture, poses[0])
    cand = _candidates(spec, ref)
    xn = K.to_normalized(cand)
    cand_d = 1.0 / surface.reference_depth(xn[:, 0], xn[:, 1])
    first_bad = _visibility(spec, poses, cand, cand_d)
    keep = np.flatnonzero(first_bad < 0)
    if len(keep) < spec.n_points:
        hidden = np.flatnonzero(first_bad >= 0)
        if hidden.size:
            i = hidden[0]
            u, v = cand[i]
            raise SpecInfeasible(
                f"anchor at pixel ({u:.0f}, {v:.0f}) leaves the view of frame {first_bad[i]}; "
                f"only {len(keep)} of {spec.n_points} requested points stay visible")
        raise SpecInfeasible(f"only {len(keep)} corner candidates for {spec.n_points} points")
    keep = np.sort(keep[:spec.n_points])
    anchors = cand[keep]
    inv_depths = cand_d[keep]

    frames = [ref]
    for f in range(1, spec.n_frames):
        try:
            frames.append(_render_frame(spec, surface, texture, poses[f]))
        except SpecInfeasible as exc:
            raise SpecInfeasible(f"frame {f}: {exc}") from None
    noise_rng = np.random.default_rng([spec.seed, 1])
    images = []
    for data in frames:
        if spec.pixel_noise > 0:
            data = data + noise_rng.normal(0.0, spec.pixel_noise, data.shape)
        data = np.clip(data, 0.0, 1.0)
        if spec.quantize:
            data = quantize(data, spec.bit_depth)
        images.append(Image(data, K))

    # scale gauge: mean inverse depth of the anchors is one
    m = inv_depths.mean()
    poses = Pose(poses.R, poses.t * m)
    return Scene(spec, images, poses, inv_depths / m, anchors)


def perturb_parameters(poses, inv_depths, sigma, seed):
    """Gaussian noise on every free pose tangent coordinate and inverse depth.

    Frame 0 is the reference and stays at the identity.  Pose noise is
    applied as a left-multiplicative se(3) increment.
    """
    rng = np.random.default_rng(seed)
    F = len(poses)
    xi = rng.normal(0.0, 1.0, (F - 1, 6)) * sigma
    dn = rng.normal(0.0, 1.0, len(inv_depths)) * sigma
    noisy = se3_exp(xi).compose(poses[1:])
    R = np.concatenate([poses.R[:1], noisy.R])
    t = np.concatenate([poses.t[:1], noisy.t])
    return Pose(R, t), np.asarray(inv_depths, dtype=float) + dn


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def frame_name(f):
    return f"frame_{f:03d}.pgm"


def scene_document(scene):
    return {
        "width": scene.spec.width,
        "height": scene.spec.height,
        "intrinsics": scene.intrinsics.as_dict(),
        "patch_radius": scene.spec.patch_radius,
        "frames": [
            {"image": frame_name(f), "pose": scene.poses.matrix()[f].reshape(-1).tolist()}
            for f in range(len(scene.images))
        ],
        "points": [
            {"anchor": a.tolist(), "inv_depth": float(d)}
            for a, d in zip(scene.anchors, scene.inv_depths)
        ],
        "spec": asdict(scene.spec),
    }


def write_scene(scene, out_dir):
    from .image import write_pgm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f, img in enumerate(scene.images):
        write_pgm(out / frame_name(f), img.data, scene.spec.bit_depth)
    (out / "scene.json").write_text(json.dumps(scene_document(scene), indent=1))
    return out / "scene.json"


def load_scene(path):
    """Load a scene written by :func:`write_scene` (directory or JSON path)."""
    path = Path(path)
    if path.is_dir():
        path = path / "scene.json"
    doc = json.loads(path.read_text())
    K = Intrinsics(**doc["intrinsics"])
    images = [load_image(path.parent / fr["image"], K) for fr in doc["frames"]]
    poses = Pose.from_matrix(np.array([fr["pose"] for fr in doc["frames"]]).reshape(-1, 4, 4))
    anchors = np.array([p["anchor"] for p in doc["points"]], dtype=float)
    inv_depths = np.array([p["inv_depth"] for p in doc["points"]], dtype=float)
    spec = SceneSpec.from_dict(doc["spec"]) if "spec" in doc else SceneSpec(
        width=doc["width"], height=doc["height"], patch_radius=doc.get("patch_radius", 1))
    return Scene(spec, images, poses, inv_depths, anchors)
