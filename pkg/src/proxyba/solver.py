"""Forwards and inverse compositional photometric bundle adjustment.

Both solvers run damped Gauss-Newton on the Huber-weighted photometric
energy.  The forwards compositional (FC) solver linearizes the warp at the
current estimate and rebuilds the Jacobian and Hessian every iteration.  The
inverse compositional (IC) solver linearizes a proxy warp around the
initialization once; afterwards each iteration only re-evaluates residuals,
reweights the gradient and back-substitutes through the stored factor.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDepth, SingularHessian
from .geometry import (
    Pose,
    ic_update_depth,
    ic_update_pose,
    make_proxy_constants,
    se3_exp,
)
from .image import gradient_px
from .linalg import BlockHessian, SchurFactor, gradient_vector
from .problem import evaluate, total_energy
from .robust import huber_weight


@dataclass
class SolverConfig:
    gamma: float = 0.03
    threshold_px: float = 5e-3
    max_iterations: int = 200
    # Levenberg damping: initial value and floor; x10 on a rejected step
    damping: float = 1e-6
    max_bad_steps: int = 15
    normalize_depth: bool = True
    # IC only: relative energy increase still accepted.  The IC fixed point
    # solves J0^T W r = 0 with the frozen proxy Jacobian, which is not exactly
    # the energy minimizer when residuals do not vanish; demanding strict
    # descent near it only inflates the damping.
    ic_energy_rtol: float = 1e-3
    # IC only: rebuild the Hessian with fresh Huber weights every iteration
    refresh_hessian: bool = False

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.threshold_px <= 0:
            raise ValueError("threshold must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration")


@dataclass
class IterationRecord:
    iteration: int
    energy: float
    max_update_px: float
    wall_ms: float
    hessian_builds: int
    hessian_factorizations: int
    damping: float
    R: np.ndarray
    t: np.ndarray
    inv_depths: np.ndarray

    @property
    def poses(self):
        return Pose(self.R, self.t)


@dataclass
class SolveReport:
    method: str
    records: list = field(default_factory=list)
    status: str = "running"
    n_dropped: int = 0
    damping_retries: int = 0     # rejected steps retried with more damping
    final_state: object = None

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def diverged(self):
        return self.status == "diverged"

    @property
    def iterations(self):
        return self.records[-1].iteration if self.records else 0

    @property
    def energy(self):
        return self.records[-1].energy

    @property
    def hessian_builds(self):
        return self.records[-1].hessian_builds

    @property
    def hessian_factorizations(self):
        return self.records[-1].hessian_factorizations

    @property
    def wall_ms(self):
        return self.records[-1].wall_ms


class _Clock:
    def __init__(self):
        self.start = time.perf_counter()

    def ms(self):
        return 1e3 * (time.perf_counter() - self.start)


def _normalize_gauge(t, d):
    m = d.mean()
    return t * m, d / m


def _max_update_px(state, res0, res1, active_pairs):
    """Largest displacement of a reprojected anchor between two evaluations."""
    k = state.pattern.center_index
    step = np.hypot(res1.u[..., k] - res0.u[..., k], res1.v[..., k] - res0.v[..., k])
    step = step[active_pairs]
    return float(step.max()) if step.size else 0.0


def _record(report, clock, it, energy, step_px, builds, facts, lam, R, t, d):
    report.records.append(IterationRecord(
        it, energy, step_px, clock.ms(), builds, facts, lam, R.copy(), t.copy(), d.copy()))


def _factorize(H, lam):
    """Factor with damping ``lam``, raising it until Cholesky succeeds."""
    attempts = 0
    while True:
        H.damping = lam
        try:
            return SchurFactor(H), lam, attempts + 1
        except SingularHessian:
            attempts += 1
            lam = max(lam * 10.0, 1e-6)
            if attempts > 30:
                raise


def _finish(report, state, R, t, d, valid):
    report.final_state = state.with_parameters(Pose(R, t), d)
    report.n_dropped = int(valid.size - np.count_nonzero(valid))
    return report


# --------------------------------------------------------------------------
# forwards compositional
# --------------------------------------------------------------------------

def build_fc_system(state, R, t, d, res, gamma, damping=0.0):
    """Jacobian rows and Hessian linearized at the current parameters."""
    c = state.cache()
    gu, gv, gok = gradient_px(c["stack"], res.u, res.v, c["frame"])
    valid = res.valid & gok
    # a = grad I_f . d<v>/dv, then the row is -a . dv/d(omega, rho, d)
    # with dv/domega = -[v]x, dv/drho = d I and dv/dd = t (see fc_warp_jacobian)
    v = res.point
    inv_z = 1.0 / np.where(valid, v[..., 2], 1.0)
    gx = c["fx"] * gu * inv_z
    gy = c["fy"] * gv * inv_z
    a = np.stack([gx, gy, -(gx * v[..., 0] + gy * v[..., 1]) * inv_z], axis=-1)
    J = np.empty(v.shape[:-1] + (7,))
    J[..., 0:3] = -np.cross(v, a)
    J[..., 3:6] = -d[None, :, None, None] * a
    J[..., 6] = -np.einsum("fnki,fi->fnk", a, t)
    J[~valid] = 0.0
    w = huber_weight(res.r, gamma) * valid
    return J, w, BlockHessian.from_jacobian(J, w, damping)


def fc_solve(state, config=None):
    """Forwards compositional Gauss-Newton; returns a :class:`SolveReport`."""
    config = config or SolverConfig()
    state.cache()
    clock = _Clock()
    report = SolveReport("fc")
    R, t, d = state.poses.R.copy(), state.poses.t.copy(), state.inv_depths.copy()
    res = evaluate(state, R, t, d)
    energy = total_energy(res.r, res.valid, config.gamma)
    lam = config.damping
    builds = facts = 0
    _record(report, clock, 0, energy, np.nan, builds, facts, lam, R, t, d)

    for it in range(1, config.max_iterations + 1):
        J, w, H = build_fc_system(state, R, t, d, res, config.gamma)
        builds += 1
        if not np.any(J):
            report.status = "converged"
            report.records[-1].max_update_px = 0.0
            break
        gp, gd = gradient_vector(J, w, res.r)
        active_pairs = res.valid.any(axis=2)
        bad = 0
        while True:
            factor, lam, n = _factorize(H, lam)
            facts += n
            dpose, ddepth = factor.solve(gp, gd)
            T = se3_exp(dpose).compose(Pose(R, t))
            R1, t1, d1 = T.R, T.t, d + ddepth
            accepted = False
            if np.all(d1 > 0):
                res1 = evaluate(state, R1, t1, d1)
                step_px = _max_update_px(state, res, res1, active_pairs)
                energy1 = total_energy(res1.r, res1.valid, config.gamma)
                accepted = energy1 <= energy or step_px < config.threshold_px
            if accepted:
                lam = max(lam / 10.0, config.damping)
                break
            bad += 1
            if bad > config.max_bad_steps:
                report.status = "diverged"
                return _finish(report, state, R, t, d, res.valid)
            report.damping_retries += 1
            lam = max(lam * 10.0, 1e-6)
        if config.normalize_depth:
            # a pure gauge move: the warped pixels, hence res1, are unchanged
            t1, d1 = _normalize_gauge(t1, d1)
        R, t, d, res, energy = R1, t1, d1, res1, energy1
        _record(report, clock, it, energy, step_px, builds, facts, lam, R, t, d)
        if step_px < config.threshold_px:
            report.status = "converged"
            break
    else:
        report.status = "max_iterations"
    return _finish(report, state, R, t, d, res.valid)


# --------------------------------------------------------------------------
# inverse compositional with proxy templates
# --------------------------------------------------------------------------

@dataclass
class ICSystem:
    """Frozen linearization of the IC problem at the initialization."""

    J: np.ndarray         # (F, N, K, 7)
    active: np.ndarray    # (F, N, K)
    hessian: BlockHessian
    R0: np.ndarray
    t0: np.ndarray
    d0: np.ndarray
    x: np.ndarray         # template points, (N, K, 2)
    initial: object       # Residuals at the initialization

    @property
    def proxy(self):
        """Per-residual :class:`ProxyConstants`, batched ``(F, N, K)``."""
        pose0 = Pose(self.R0[:, None, None], self.t0[:, None, None])
        return make_proxy_constants(self.x[None], pose0, self.d0[None, :, None])

    def gradient(self, res, gamma):
        active = self.active & res.valid
        w = huber_weight(res.r, gamma) * active
        return gradient_vector(self.J, w, res.r)


def ic_rows(state, R0, t0, d0):
    """Rows ``grad I0 . d phi / d dp`` at ``dp = 0`` for every residual.

    Same quantity as chaining the template gradient with
    :func:`ic_jacobian_row`, written out so no per-residual 3x3 ``M`` is
    formed.  With ``b = grad I0 . d<v>/dv`` at ``v = zbar0 x~`` the row is
    ``c = M^T b``, followed by the inner derivatives ``-[R0 x~]x``, ``d0 I``
    and ``t0``.
    """
    c = state.cache()
    xh, x, g = c["xh"], c["x"], c["grad0"]
    N, K = x.shape[:2]
    F = len(R0)
    R0x = np.matmul(xh.reshape(1, N * K, 3), np.swapaxes(R0, 1, 2)).reshape(F, N, K, 3)
    zbar0 = R0x[..., 2] / d0[None, :, None] + t0[:, None, None, 2]
    # zbar0 * b, which is free of the proxy depth
    bh = np.stack([g[..., 0], g[..., 1], -(g[..., 0] * x[..., 0] + g[..., 1] * x[..., 1])], axis=-1)
    Rb = np.matmul(bh.reshape(1, N * K, 3), np.swapaxes(R0, 1, 2)).reshape(F, N, K, 3)
    cvec = Rb
    cvec[..., 2] -= np.einsum("fnki,fi->fnk", Rb, t0) / zbar0
    J = np.empty((F, N, K, 7))
    J[..., 0:3] = np.cross(R0x, cvec)
    J[..., 3:6] = d0[None, :, None, None] * cvec
    J[..., 6] = np.einsum("fnki,fi->fnk", cvec, t0)
    return J


def build_ic_system(state, gamma=0.03, damping=0.0):
    """Constant Jacobian rows ``grad I0 . d phi / d dp`` and ``H = J^T W0 J``."""
    c = state.cache()
    R0, t0, d0 = state.poses.R.copy(), state.poses.t.copy(), state.inv_depths.copy()
    zero_t = np.flatnonzero(~np.any(t0, axis=1))
    if zero_t.size:
        warnings.warn(
            f"frames {zero_t.tolist()} start with zero translation; their proxy depth "
            "derivatives vanish", RuntimeWarning, stacklevel=2)
    res = evaluate(state, R0, t0, d0)
    if np.any(res.point[..., 2] <= 0):
        raise InvalidDepth("a template point is behind a camera at the initialization")
    J = ic_rows(state, R0, t0, d0)
    active = res.valid.copy()
    w0 = huber_weight(res.r, gamma) * active
    H = BlockHessian.from_jacobian(J, w0, damping)
    dead = np.flatnonzero(H.depth == 0)
    if dead.size:
        warnings.warn(f"points {dead.tolist()} have no depth information in the Hessian",
                      RuntimeWarning, stacklevel=2)
    return ICSystem(J, active, H, R0, t0, d0, c["x"], res)


def ic_candidate(system, R, t, d, dpose, ddepth):
    R1, t1 = ic_update_pose(R, t, system.R0, dpose[:, :3], dpose[:, 3:])
    d1 = ic_update_depth(d, system.d0, ddepth)
    return R1, t1, d1


def ic_solve(state, config=None):
    """Inverse compositional Gauss-Newton with proxy templates."""
    config = config or SolverConfig()
    state.cache()
    clock = _Clock()
    report = SolveReport("ic")
    system = build_ic_system(state, config.gamma)
    builds = 1
    lam = config.damping
    factor, lam, facts = _factorize(system.hessian, lam)
    R, t, d = system.R0.copy(), system.t0.copy(), system.d0.copy()
    res = system.initial
    active = system.active
    energy = total_energy(res.r, active, config.gamma)
    _record(report, clock, 0, energy, np.nan, builds, facts, lam, R, t, d)
    if not np.any(system.J):
        report.status = "converged"
        report.records[-1].max_update_px = 0.0
        return _finish(report, state, R, t, d, active)

    for it in range(1, config.max_iterations + 1):
        w = huber_weight(res.r, config.gamma) * active
        gp, gd = gradient_vector(system.J, w, res.r)
        if config.refresh_hessian and it > 1:
            system.hessian = BlockHessian.from_jacobian(system.J, w, lam)
            builds += 1
            factor, lam, n = _factorize(system.hessian, lam)
            facts += n
        active_pairs = active.any(axis=2)
        bad = 0
        while True:
            dpose, ddepth = factor.solve(gp, gd)
            accepted = False
            if np.all(system.d0 - ddepth > 0):
                R1, t1, d1 = ic_candidate(system, R, t, d, dpose, ddepth)
                res1 = evaluate(state, R1, t1, d1)
                step_px = _max_update_px(state, res, res1, active_pairs)
                active1 = active & res1.valid
                energy1 = total_energy(res1.r, active1, config.gamma)
                accepted = (energy1 <= energy * (1.0 + config.ic_energy_rtol)
                            or step_px < config.threshold_px)
            if accepted:
                break
            bad += 1
            if bad > config.max_bad_steps:
                report.status = "diverged"
                return _finish(report, state, R, t, d, active)
            report.damping_retries += 1
            lam = max(lam * 10.0, 1e-6)
            factor, lam, n = _factorize(system.hessian, lam)
            facts += n
        if config.normalize_depth:
            t1, d1 = _normalize_gauge(t1, d1)
        R, t, d, res, active, energy = R1, t1, d1, res1, active1, energy1
        _record(report, clock, it, energy, step_px, builds, facts, lam, R, t, d)
        if step_px < config.threshold_px:
            report.status = "converged"
            break
    else:
        report.status = "max_iterations"
    return _finish(report, state, R, t, d, active)
