"""Problem state and vectorized residual evaluation.

Residuals are laid out as ``(F, N, K)``: target frame, point, patch pixel.
The reference frame is the template and carries the identity pose, so it is
not part of ``poses``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyProblem, InvalidDepth, OutOfBounds
from .geometry import DEPTH_EPS, Pose, homogeneous
from .image import Image, PatchPattern, bilinear_px, gradient_px
from .robust import huber_loss


@dataclass
class ProblemState:
    """Everything the solvers need: images, anchors and current parameters.

    ``anchors`` are pixel coordinates in the reference image; with the
    default pattern they are integers so template samples fall on pixels.
    """

    reference: Image
    targets: list
    anchors: np.ndarray
    poses: Pose
    inv_depths: np.ndarray
    pattern: PatchPattern = field(default_factory=PatchPattern)

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 2)
        self.inv_depths = np.array(self.inv_depths, dtype=float).reshape(-1)
        self.poses = Pose(np.array(self.poses.R, dtype=float).reshape(-1, 3, 3),
                          np.array(self.poses.t, dtype=float).reshape(-1, 3))
        if len(self.targets) < 1 or len(self.anchors) < 1:
            raise ValueError("need at least one target frame and one point")
        if len(self.poses) != len(self.targets):
            raise ValueError("one pose per target frame required")
        if len(self.inv_depths) != len(self.anchors):
            raise ValueError("one inverse depth per anchor required")
        if np.any(self.inv_depths <= 0):
            raise InvalidDepth("inverse depths must be positive")
        shapes = {img.data.shape for img in self.targets}
        if len(shapes) != 1:
            raise ValueError("target images must share one size")
        self._cache = None

    # -- static data -------------------------------------------------------

    @property
    def n_frames(self):
        return len(self.targets)

    @property
    def n_points(self):
        return len(self.anchors)

    @property
    def template_pixels(self):
        return self.anchors[:, None, :] + self.pattern.offsets[None, :, :]

    @property
    def template_points(self):
        return self.reference.intrinsics.to_normalized(self.template_pixels)

    def cache(self):
        """Stacked targets, per-frame intrinsics and template samples."""
        if self._cache is None:
            px = self.template_pixels
            intensity, ok = bilinear_px(self.reference.data, px[..., 0], px[..., 1])
            gu, gv, gok = gradient_px(self.reference.data, px[..., 0], px[..., 1])
            if not np.all(ok & gok):
                bad = px[~(ok & gok)][0]
                raise OutOfBounds(f"template pixel {bad} too close to the reference border")
            k = self.reference.intrinsics
            self._cache = {
                "stack": np.stack([img.data for img in self.targets]),
                "fx": np.array([img.intrinsics.fx for img in self.targets])[:, None, None],
                "fy": np.array([img.intrinsics.fy for img in self.targets])[:, None, None],
                "cx": np.array([img.intrinsics.cx for img in self.targets])[:, None, None],
                "cy": np.array([img.intrinsics.cy for img in self.targets])[:, None, None],
                "x": self.template_points,
                "xh": homogeneous(self.template_points),
                "I0": intensity,
                "grad0": np.stack([k.fx * gu, k.fy * gv], axis=-1),
                "frame": np.arange(self.n_frames)[:, None, None],
            }
        return self._cache

    def copy(self):
        new = copy.copy(self)
        new.poses = Pose(self.poses.R.copy(), self.poses.t.copy())
        new.inv_depths = self.inv_depths.copy()
        return new

    def with_parameters(self, poses, inv_depths):
        new = copy.copy(self)
        new.poses = Pose(np.array(poses.R, dtype=float), np.array(poses.t, dtype=float))
        new.inv_depths = np.array(inv_depths, dtype=float)
        return new


@dataclass
class Residuals:
    r: np.ndarray        # (F, N, K), zero where invalid
    valid: np.ndarray    # (F, N, K)
    u: np.ndarray        # warped pixel coordinates
    v: np.ndarray
    point: np.ndarray    # pre-projection vectors, (F, N, K, 3)


def warp_all(state, R, t, d):
    c = state.cache()
    N, K = c["xh"].shape[:2]
    rot = np.matmul(c["xh"].reshape(1, N * K, 3), np.swapaxes(R, 1, 2)).reshape(len(R), N, K, 3)
    return rot + d[None, :, None, None] * t[:, None, None, :]


def evaluate(state, R=None, t=None, d=None):
    """Residuals ``I0(x) - I_f(W(x; p))`` for every template pixel and frame."""
    if R is None:
        R, t, d = state.poses.R, state.poses.t, state.inv_depths
    c = state.cache()
    p = warp_all(state, R, t, d)
    z = p[..., 2]
    front = z > DEPTH_EPS
    zs = np.where(front, z, 1.0)
    u = c["fx"] * (p[..., 0] / zs) + c["cx"]
    v = c["fy"] * (p[..., 1] / zs) + c["cy"]
    sample, inside = bilinear_px(c["stack"], u, v, c["frame"])
    valid = front & inside
    r = np.where(valid, c["I0"][None] - sample, 0.0)
    return Residuals(r, valid, u, v, p)


@dataclass
class EnergyEval:
    energy: float
    residuals: np.ndarray
    valid: np.ndarray

    @property
    def n_dropped(self):
        return int(self.valid.size - np.count_nonzero(self.valid))


def total_energy(r, valid, gamma):
    return float(np.sum(huber_loss(r[valid], gamma)))


def energy_eval(state, gamma=0.03):
    """Huber-robust photometric energy over all in-bounds residuals."""
    res = evaluate(state)
    if not np.any(res.valid):
        raise EmptyProblem("no residual is inside the image bounds")
    return EnergyEval(total_energy(res.r, res.valid, gamma), res.r, res.valid)


def anchor_pixels(state, R, t, d):
    """Projection of every anchor into every frame, in pixels, ``(F, N, 2)``."""
    c = state.cache()
    x = state.reference.intrinsics.to_normalized(state.anchors)
    p = np.einsum("fij,nj->fni", R, homogeneous(x)) + d[None, :, None] * t[:, None, :]
    z = p[..., 2]
    u = c["fx"][:, :, 0] * p[..., 0] / z + c["cx"][:, :, 0]
    v = c["fy"][:, :, 0] * p[..., 1] / z + c["cy"][:, :, 0]
    return np.stack([u, v], axis=-1)
