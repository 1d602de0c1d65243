"""Finite-difference verification of the analytic Jacobians.

Each check draws random configurations, evaluates the analytic derivative
and compares it with central differences of the function it differentiates.
Errors are relative Frobenius norms, ``|A - N| / |N|``, maximized over the
sweep.  A separate table confirms where the depth derivative is *meant* to
vanish: the forward warp at the identity pose, and the proxy warp when the
initial translation is zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Pose,
    fc_warp_jacobian,
    ic_jacobian_row,
    make_proxy_constants,
    project_warp,
    proxy_warp_grad_form,
    se3_exp,
    so3_exp,
)
from .image import Image, Intrinsics, image_gradient

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    samples: int

    def passed(self, tolerance):
        return self.max_rel_error <= tolerance


@dataclass
class DegeneracyRow:
    case: str
    max_abs_depth_column: float
    min_abs_depth_column: float
    expected_zero: bool

    @property
    def status(self):
        if self.expected_zero:
            return "degenerate (expected)" if self.max_abs_depth_column == 0.0 else "UNEXPECTED"
        return "observable" if self.min_abs_depth_column > 0.0 else "UNEXPECTED"


def rel_error(analytic, numeric):
    num = np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(num, np.finfo(float).tiny))


def central_difference(f, n, h=FD_STEP):
    """Columns ``(f(e_i h) - f(-e_i h)) / 2h`` for an ``n``-vector argument."""
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        cols.append((f(e) - f(-e)) / (2 * h))
    return np.stack(cols, axis=-1)


# --------------------------------------------------------------------------
# random configurations
# --------------------------------------------------------------------------

def random_point(rng):
    return rng.uniform(-0.4, 0.4, 2)


def random_pose(rng, min_translation=0.0, rotation_scale=0.2):
    R = so3_exp(rng.normal(0.0, rotation_scale, 3))
    while True:
        t = rng.uniform(-0.4, 0.4, 3)
        if np.linalg.norm(t) >= min_translation:
            return Pose(R, t)


def random_configuration(rng, min_translation=0.0):
    """A point, pose and inverse depth with the warped point well in front."""
    while True:
        x = random_point(rng)
        pose = random_pose(rng, min_translation)
        d = rng.uniform(0.3, 2.0)
        v = pose.R @ np.append(x, 1.0) + d * pose.t
        if v[2] > 0.2:
            return x, pose, d


# --------------------------------------------------------------------------
# individual checks
# --------------------------------------------------------------------------

def fd_fc_jacobian(x, pose, d, h=FD_STEP):
    def f(dp):
        return project_warp(x, se3_exp(dp[:6]).compose(pose), d + dp[6])
    return central_difference(f, 7, h)


def fd_ic_jacobian(x, pc, h=FD_STEP):
    return central_difference(lambda dp: proxy_warp_grad_form(x, pc, dp), 7, h)


def check_fc(rng, samples):
    worst = 0.0
    for _ in range(samples):
        x, pose, d = random_configuration(rng)
        analytic = fc_warp_jacobian(x, pose, d).image
        worst = max(worst, rel_error(analytic, fd_fc_jacobian(x, pose, d)))
    return CheckResult("FC warp Jacobian (2x7)", worst, samples)


def check_ic(rng, samples, min_translation=0.1):
    worst = 0.0
    worst_depth = 0.0
    for _ in range(samples):
        x, pose, d = random_configuration(rng, min_translation)
        pc = make_proxy_constants(x, pose, d)
        analytic = ic_jacobian_row(x, pc).image
        numeric = fd_ic_jacobian(x, pc)
        worst = max(worst, rel_error(analytic, numeric))
        worst_depth = max(worst_depth, rel_error(analytic[:, 6], numeric[:, 6]))
    return [CheckResult("IC proxy Jacobian (2x7)", worst, samples),
            CheckResult("IC proxy depth column", worst_depth, samples)]


def quadratic_image(rng, height=40, width=50):
    """Samples of a random quadratic and its exact pixel-space gradient.

    Half-pixel central differences of the bilinear interpolant reproduce the
    gradient of a quadratic exactly, so the check isolates the chain rule
    through the intrinsics.
    """
    c = rng.normal(0.0, 1.0, 6) * np.array([1.0, 1e-2, 1e-2, 1e-4, 1e-4, 1e-4])

    def f(u, v):
        return c[0] + c[1] * u + c[2] * v + c[3] * u * u + c[4] * v * v + c[5] * u * v

    vv, uu = np.mgrid[0:height, 0:width].astype(float)
    return f(uu, vv), f


def check_image_gradient(rng, samples):
    worst = 0.0
    for _ in range(samples):
        data, f = quadratic_image(rng)
        H, W = data.shape
        k = Intrinsics(rng.uniform(200, 800), rng.uniform(200, 800),
                       rng.uniform(0.4, 0.6) * W, rng.uniform(0.4, 0.6) * H)
        img = Image(data, k)
        uv = np.array([rng.uniform(2, W - 3), rng.uniform(2, H - 3)])
        x = k.to_normalized(uv)
        analytic = image_gradient(img, x)

        def g(dx):
            p = k.to_pixel(x + dx)
            return np.array([f(p[0], p[1])])

        numeric = central_difference(g, 2, 1e-6)[0]
        worst = max(worst, rel_error(analytic, numeric))
    return CheckResult("image gradient (1x2)", worst, samples)


def degeneracy_table(rng, samples):
    """Depth-column magnitudes where they must vanish, and where they must not."""
    fc_zero, ic_zero, ic_live = [], [], []
    for _ in range(samples):
        x = random_point(rng)
        d = rng.uniform(0.3, 2.0)
        fc_zero.append(np.abs(fc_warp_jacobian(x, Pose.identity(), d).depth_column).max())
        pose = Pose(so3_exp(rng.normal(0.0, 0.2, 3)), np.zeros(3))
        ic_zero.append(np.abs(ic_jacobian_row(x, make_proxy_constants(x, pose, d)).depth_column).max())
        x, pose, d = random_configuration(rng, 0.1)
        ic_live.append(np.linalg.norm(
            ic_jacobian_row(x, make_proxy_constants(x, pose, d)).depth_column))
    return [
        DegeneracyRow("FC warp, identity pose", max(fc_zero), min(fc_zero), True),
        DegeneracyRow("IC proxy, t0 = 0", max(ic_zero), min(ic_zero), True),
        DegeneracyRow("IC proxy, |t0| >= 0.1", max(ic_live), min(ic_live), False),
    ]


def run_gradcheck(seed=0, samples=200):
    rng = np.random.default_rng(seed)
    results = [check_fc(rng, samples)]
    results += check_ic(rng, samples)
    results.append(check_image_gradient(rng, samples))
    return results, degeneracy_table(rng, samples)
