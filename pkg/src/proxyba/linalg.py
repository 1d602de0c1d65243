"""Arrow-structured normal equations and their Schur-complement solve.

Unknowns are ordered poses first (6 per frame), then one inverse depth per
point.  Pose blocks of different frames never couple, and neither do depths
of different points, so the depth block is diagonal and is eliminated first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import SingularHessian


@dataclass
class BlockHessian:
    pose: np.ndarray      # (F, 6, 6)
    depth: np.ndarray     # (N,)
    coupling: np.ndarray  # (F, N, 6)
    damping: float = 0.0

    @classmethod
    def from_jacobian(cls, J, w, damping=0.0):
        """Accumulate ``J^T W J`` from per-residual rows ``J`` of shape (F, N, K, 7)."""
        F, N, K = w.shape
        Jp = J[..., :6]
        Jd = J[..., 6]
        wJp = Jp * w[..., None]
        pose = np.matmul(np.swapaxes(wJp.reshape(F, N * K, 6), 1, 2), Jp.reshape(F, N * K, 6))
        return cls(
            pose=pose,
            depth=(w * Jd * Jd).sum(axis=(0, 2)),
            coupling=(wJp * Jd[..., None]).sum(axis=2),
            damping=damping,
        )

    @property
    def n_frames(self):
        return self.pose.shape[0]

    @property
    def n_points(self):
        return self.depth.shape[0]

    def dense(self, damped=True):
        F, N = self.n_frames, self.n_points
        n = 6 * F + N
        H = np.zeros((n, n))
        for f in range(F):
            H[6 * f:6 * f + 6, 6 * f:6 * f + 6] = self.pose[f]
        H[6 * F:, 6 * F:] = np.diag(self.depth)
        B = self.coupling.transpose(0, 2, 1).reshape(6 * F, N)
        H[:6 * F, 6 * F:] = B
        H[6 * F:, :6 * F] = B.T
        if damped:
            H[np.diag_indices(n)] += self.damping
        return H


def gradient_vector(J, w, r):
    """``g = J^T W r`` split into pose (F, 6) and depth (N,) parts."""
    F, N, K = r.shape
    wr = w * r
    g_pose = np.matmul(wr.reshape(F, 1, N * K), J[..., :6].reshape(F, N * K, 6))[:, 0]
    g_depth = (J[..., 6] * wr).sum(axis=(0, 2))
    return g_pose, g_depth


class SchurFactor:
    """Cholesky factor of the reduced pose system, reusable across right-hand sides."""

    def __init__(self, H: BlockHessian):
        lam = H.damping
        F = H.n_frames
        depth = H.depth + lam
        if np.any(depth <= 0):
            raise SingularHessian("depth block is not positive definite")
        self.depth_inv = 1.0 / depth
        self.B = H.coupling.transpose(0, 2, 1).reshape(6 * F, -1)
        S = -(self.B * self.depth_inv) @ self.B.T
        for f in range(F):
            S[6 * f:6 * f + 6, 6 * f:6 * f + 6] += H.pose[f]
        S[np.diag_indices(6 * F)] += lam
        try:
            self.cho = cho_factor(S, lower=True, check_finite=True)
        except LinAlgError as exc:
            raise SingularHessian(str(exc)) from exc
        self.n_frames = F

    def solve(self, g_pose, g_depth):
        """Solve ``(H + lambda I) x = -g``; returns ``(dpose (F, 6), ddepth (N,))``."""
        gp = np.asarray(g_pose).reshape(-1)
        gd = np.asarray(g_depth)
        rhs = -gp + self.B @ (self.depth_inv * gd)
        dpose = cho_solve(self.cho, rhs, check_finite=False)
        ddepth = self.depth_inv * (-gd - self.B.T @ dpose)
        return dpose.reshape(self.n_frames, 6), ddepth


def solve_dense(H: BlockHessian, g_pose, g_depth):
    """Reference solve on the assembled matrix; meant for small problems."""
    A = H.dense()
    g = np.concatenate([np.asarray(g_pose).reshape(-1), np.asarray(g_depth)])
    x = np.linalg.solve(A, -g)
    F = H.n_frames
    return x[:6 * F].reshape(F, 6), x[6 * F:]
