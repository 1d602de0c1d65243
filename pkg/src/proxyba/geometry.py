"""Rigid-body algebra, the projective warp and its Jacobians.

Conventions
-----------
* Image points ``x`` are normalized camera coordinates (pixels mapped through
  the inverse intrinsics); ``x~`` is ``[x, y, 1]``.
* A pose maps reference-camera coordinates into a target camera:
  ``X_f = R X + t``.
* A 6-vector tangent is ordered ``(omega, rho)``: rotation first, then
  translation.
* Parameter increments for a point-frame pair are 7-vectors
  ``(d_omega, d_t, d_invdepth)``.

Every function broadcasts over leading axes, so the solvers can evaluate all
residuals in one call; the scalar examples in the tests are just the
zero-batch case.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDepth, InvalidDepth

DEPTH_EPS = 1e-12
SMALL_ANGLE = 1e-8
# the V-matrix coefficients cancel badly long before SMALL_ANGLE
_SERIES_ANGLE = 1e-2


# --------------------------------------------------------------------------
# so(3) / se(3)
# --------------------------------------------------------------------------

def hat(w):
    """Skew-symmetric matrix of ``w`` (shape ``(..., 3)`` -> ``(..., 3, 3)``)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(W):
    W = np.asarray(W, dtype=float)
    return np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)


def _rotation_coeffs(angle):
    """sin(a)/a and (1 - cos a)/a^2, with series below SMALL_ANGLE."""
    small = angle < SMALL_ANGLE
    a = np.where(small, 1.0, angle)
    a2 = a * a
    s = np.where(small, 1.0 - angle**2 / 6.0, np.sin(a) / a)
    c = np.where(small, 0.5 - angle**2 / 24.0, 2.0 * np.sin(0.5 * a) ** 2 / a2)
    return s, c


def _coupling_coeff(angle):
    """(a - sin a)/a^3."""
    small = angle < _SERIES_ANGLE
    a = np.where(small, 1.0, angle)
    t2 = angle**2
    series = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    return np.where(small, series, (a - np.sin(a)) / a**3)


def _inverse_coupling_coeff(angle):
    """Coefficient of W^2 in the inverse V-matrix."""
    small = angle < _SERIES_ANGLE
    a = np.where(small, 1.0, angle)
    t2 = angle**2
    series = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    exact = (1.0 - a * np.sin(a) / (2.0 * (1.0 - np.cos(a)))) / a**2
    return np.where(small, series, exact)


def so3_exp(w):
    """Rodrigues' formula, batched."""
    w = np.asarray(w, dtype=float)
    angle = np.linalg.norm(w, axis=-1)
    W = hat(w)
    s, c = _rotation_coeffs(angle)
    return np.eye(3) + s[..., None, None] * W + c[..., None, None] * (W @ W)


def so3_log(R):
    """Angle-axis vector of a rotation matrix, valid up to and including pi."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    Rf = R.reshape(-1, 3, 3)
    w = 0.5 * vee(Rf - np.swapaxes(Rf, -1, -2))
    sin_a = np.linalg.norm(w, axis=-1)
    cos_a = 0.5 * (np.trace(Rf, axis1=-2, axis2=-1) - 1.0)
    angle = np.arctan2(sin_a, cos_a)

    out = np.empty_like(w)
    small = angle < SMALL_ANGLE
    out[small] = w[small] * (1.0 + angle[small, None] ** 2 / 6.0)
    regular = ~small & ((sin_a > 1e-6) | (cos_a > 0))
    out[regular] = w[regular] * (angle[regular] / sin_a[regular])[:, None]
    for i in np.flatnonzero(~small & ~regular):
        # near pi: axis from the symmetric part R = 2 a a^T - I (+ O(pi - angle))
        B = 0.5 * (Rf[i] + Rf[i].T) + (0.5 - 0.5 * cos_a[i]) * np.eye(3)
        B = B / (1.0 - cos_a[i])
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(B[k, k])
        if axis @ w[i] < 0:
            axis = -axis
        out[i] = angle[i] * axis / np.linalg.norm(axis)
    return out.reshape(batch + (3,))


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``X -> R X + t``; fields may carry leading batch axes."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))

    @classmethod
    def identity(cls, *batch):
        R = np.broadcast_to(np.eye(3), tuple(batch) + (3, 3)).copy()
        return cls(R, np.zeros(tuple(batch) + (3,)))

    @classmethod
    def stack(cls, poses):
        poses = list(poses)
        return cls(np.stack([p.R for p in poses]), np.stack([p.t for p in poses]))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[..., :3, :3], T[..., :3, 3])

    def __len__(self):
        return self.R.shape[0]

    def __getitem__(self, item):
        return Pose(self.R[item], self.t[item])

    def matrix(self):
        T = np.zeros(self.R.shape[:-2] + (4, 4))
        T[..., :3, :3] = self.R
        T[..., :3, 3] = self.t
        T[..., 3, 3] = 1.0
        return T

    def inverse(self):
        Rt = np.swapaxes(self.R, -1, -2)
        return Pose(Rt, -np.einsum("...ij,...j->...i", Rt, self.t))

    def compose(self, other):
        """``self * other`` (apply ``other`` first)."""
        return Pose(
            self.R @ other.R,
            np.einsum("...ij,...j->...i", self.R, other.t) + self.t,
        )

    def apply(self, X):
        return np.einsum("...ij,...j->...i", self.R, X) + self.t

    def log(self):
        return se3_log(self)


def se3_exp(theta):
    """Exponential map of a ``(omega, rho)`` tangent; batched over leading axes."""
    theta = np.asarray(theta, dtype=float)
    w, rho = theta[..., :3], theta[..., 3:]
    angle = np.linalg.norm(w, axis=-1)
    W = hat(w)
    W2 = W @ W
    s, c = _rotation_coeffs(angle)
    e = _coupling_coeff(angle)
    R = np.eye(3) + s[..., None, None] * W + c[..., None, None] * W2
    V = np.eye(3) + c[..., None, None] * W + e[..., None, None] * W2
    return Pose(R, np.einsum("...ij,...j->...i", V, rho))


def se3_log(pose):
    w = so3_log(pose.R)
    angle = np.linalg.norm(w, axis=-1)
    W = hat(w)
    Vinv = np.eye(3) - 0.5 * W + _inverse_coupling_coeff(angle)[..., None, None] * (W @ W)
    return np.concatenate([w, np.einsum("...ij,...j->...i", Vinv, pose.t)], axis=-1)


def boxplus(dtheta, pose, dd, d):
    """Left-multiplicative pose update and additive inverse-depth update."""
    return se3_exp(dtheta).compose(pose), d + dd


# --------------------------------------------------------------------------
# projection and the warp
# --------------------------------------------------------------------------

def homogeneous(x):
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def project(v):
    v = np.asarray(v, dtype=float)
    z = v[..., 2:3]
    if np.any(np.abs(z) < DEPTH_EPS):
        raise DegenerateDepth("point lies on the camera plane")
    return v[..., :2] / z


def _check_front(z):
    if np.any(z <= DEPTH_EPS):
        raise DegenerateDepth("pre-projection depth is not positive")


def warp_point(x, R, t, d):
    """Pre-projection vector ``R x~ + d t`` (no checks)."""
    return np.einsum("...ij,...j->...i", R, homogeneous(x)) + np.asarray(d)[..., None] * t


def project_warp(x, pose, d):
    """Project template point ``x`` with inverse depth ``d`` into a frame."""
    v = warp_point(x, pose.R, pose.t, d)
    _check_front(v[..., 2])
    return v[..., :2] / v[..., 2:3]


def projection_jacobian(v):
    """2x3 derivative of ``<v>``; equivalent to the quotient rule."""
    v = np.asarray(v, dtype=float)
    inv_z = 1.0 / v[..., 2]
    J = np.zeros(v.shape[:-1] + (2, 3))
    J[..., 0, 0] = inv_z
    J[..., 1, 1] = inv_z
    J[..., 0, 2] = -v[..., 0] * inv_z**2
    J[..., 1, 2] = -v[..., 1] * inv_z**2
    return J


@dataclass(frozen=True)
class WarpJacobian:
    """Image-point derivative (2x7) and pre-projection derivative (3x7)."""

    image: np.ndarray
    point: np.ndarray

    @property
    def depth_column(self):
        return self.image[..., :, 6]


def fc_warp_jacobian(x, pose, d):
    """Jacobian of :func:`project_warp` at the current parameters.

    Pose columns are with respect to a left-multiplicative se(3) increment
    ``exp(delta) * T``; the last column is the additive inverse depth.
    """
    d = np.asarray(d, dtype=float)
    v = warp_point(x, pose.R, pose.t, d)
    _check_front(v[..., 2])
    dv = np.zeros(v.shape[:-1] + (3, 7))
    dv[..., :, 0:3] = -hat(v)
    dv[..., :, 3:6] = d[..., None, None] * np.eye(3)
    dv[..., :, 6] = np.broadcast_to(pose.t, v.shape)
    return WarpJacobian(projection_jacobian(v) @ dv, dv)


# --------------------------------------------------------------------------
# proxy templates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProxyConstants:
    """Frozen linearization point of one template pixel in one frame."""

    R0: np.ndarray
    t0: np.ndarray
    d0: np.ndarray
    zbar0: np.ndarray
    M: np.ndarray

    def __getitem__(self, item):
        return ProxyConstants(self.R0[item], self.t0[item], self.d0[item],
                              self.zbar0[item], self.M[item])


def _t_column(t):
    """Matrix whose only non-zero column is the third one, equal to ``t``."""
    out = np.zeros(np.shape(t)[:-1] + (3, 3))
    out[..., :, 2] = t
    return out


def make_proxy_constants(x, pose0, d0):
    """Freeze ``R0, t0, d0`` and derive the proxy depth and ``M``.

    ``zbar0`` is the metric depth of the point in the proxy frame,
    ``[(1/d0) R0 x~ + t0]_z``; with it ``phi(x; 0) == x`` holds exactly.
    """
    R0 = np.asarray(pose0.R, dtype=float)
    t0 = np.asarray(pose0.t, dtype=float)
    d0 = np.asarray(d0, dtype=float)
    if np.any(d0 <= 0):
        raise InvalidDepth("initial inverse depth must be positive")
    v = warp_point(x, R0, t0, d0)
    _check_front(v[..., 2])
    zbar0 = v[..., 2] / d0
    M = np.swapaxes(R0, -1, -2) @ (zbar0[..., None, None] * np.eye(3) - _t_column(t0))
    shape = v.shape[:-1]
    return ProxyConstants(
        np.broadcast_to(R0, shape + (3, 3)).copy(),
        np.broadcast_to(t0, shape + (3,)).copy(),
        np.broadcast_to(d0, shape).copy(),
        zbar0,
        M,
    )


def _incremented(pc, dp):
    dp = np.asarray(dp, dtype=float)
    R = so3_exp(dp[..., 0:3]) @ pc.R0
    t = pc.t0 + dp[..., 3:6]
    d = pc.d0 + dp[..., 6]
    return R, t, d


def proxy_warp_grad_form(x, pc, dp):
    """``<M (R' x~ + d' t')>`` with ``R' = dR R0, t' = t0 + dt, d' = d0 + dd``."""
    R, t, d = _incremented(pc, dp)
    v = np.einsum("...ij,...j->...i", pc.M, warp_point(x, R, t, d))
    _check_front(v[..., 2])
    return v[..., :2] / v[..., 2:3]


def proxy_warp_update_form(x, pc, dp):
    """``<R0^T ((1/d') R' x~ + dt)>``, the small-update approximation.

    It drops the ratio between the proxy depth and the depth of the
    incremented point.  With ``t0 == 0`` that ratio cancels under projection
    and both forms coincide; otherwise they differ at first order in ``dp``
    (proportional to ``t0``).  Its purpose is to read off parameter updates,
    see :func:`apply_ic_update`.
    """
    dp = np.asarray(dp, dtype=float)
    R, _, d = _incremented(pc, dp)
    if np.any(d <= 0):
        raise InvalidDepth("incremented inverse depth must be positive")
    u = np.einsum("...ij,...j->...i", R, homogeneous(x)) / d[..., None] + dp[..., 3:6]
    v = np.einsum("...ji,...j->...i", pc.R0, u)
    _check_front(v[..., 2])
    return v[..., :2] / v[..., 2:3]


def ic_point_jacobian(x, pc):
    """3x7 derivative of the internal transform ``phi*`` at zero increment."""
    xh = homogeneous(x)
    R0x = np.einsum("...ij,...j->...i", pc.R0, xh)
    d_inner = np.zeros(R0x.shape[:-1] + (3, 7))
    d_inner[..., :, 0:3] = -hat(R0x)
    d_inner[..., :, 3:6] = pc.d0[..., None, None] * np.eye(3)
    d_inner[..., :, 6] = pc.t0
    return pc.M @ d_inner


def ic_jacobian_row(x, pc):
    """Analytic ``d phi / d dp`` at ``dp = 0``.

    At zero increment ``phi*`` equals ``zbar0 * x~``, so the quotient rule is
    evaluated there directly.  The depth column is ``M t0`` pushed through
    it and vanishes exactly when ``t0 == 0``.
    """
    dphi = ic_point_jacobian(x, pc)
    v0 = pc.zbar0[..., None] * homogeneous(x)
    _check_front(v0[..., 2])
    return WarpJacobian(projection_jacobian(v0) @ dphi, dphi)


def ic_update_pose(R_k, t_k, R0, d_omega, d_t):
    """Pose part of the inverse compositional warp update."""
    dR = so3_exp(d_omega)
    R0t = np.swapaxes(R0, -1, -2)
    A = R_k @ R0t
    R_new = A @ np.swapaxes(dR, -1, -2) @ R0
    t_new = t_k - np.einsum("...ij,...j->...i", A, d_t)
    return R_new, t_new


def ic_update_depth(d_k, d0, d_d):
    d_new = (d0 - d_d) / d0 * d_k
    return d_new


def apply_ic_update(pose_k, d_k, pc, dp):
    """Compose the inverted proxy increment ``phi(x; -dp)`` into the warp.

    Raises :class:`InvalidDepth` rather than clamping; callers damp the step.
    """
    dp = np.asarray(dp, dtype=float)
    if np.any(pc.d0 - dp[..., 6] <= 0):
        raise InvalidDepth("d0 - dd must be positive")
    R, t = ic_update_pose(pose_k.R, pose_k.t, pc.R0, dp[..., 0:3], dp[..., 3:6])
    d = ic_update_depth(np.asarray(d_k, dtype=float), pc.d0, dp[..., 6])
    if np.any(d <= 0):
        raise InvalidDepth("updated inverse depth is not positive")
    return Pose(R, t), d
