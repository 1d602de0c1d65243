"""Parameter errors against ground truth and per-iteration metric rows.

Errors are measured in the tangent space: for every target frame the 6-vector
``log(T_est * T_gt^-1)`` is split into its rotation and translation parts.
Before comparing, the estimate is brought into the ground-truth gauge: the
reference frame is pinned by construction, and scale is fixed by rescaling
the inverse depths to unit mean (translations scale the other way).
"""
from __future__ import annotations

import numpy as np

from .geometry import Pose, se3_log

CSV_COLUMNS = (
    "iter",
    "energy",
    "rot_rms",
    "trans_rms",
    "idepth_rms",
    "wall_ms",
    "hessian_builds",
    "hessian_factorizations",
)


def gauge_align(poses, inv_depths):
    """Rescale so the inverse depths have unit mean; the warp is unchanged."""
    d = np.asarray(inv_depths, dtype=float)
    m = d.mean()
    return Pose(poses.R, poses.t * m), d / m


def parameter_rms(poses, inv_depths, gt_poses, gt_inv_depths):
    """``(rot_rms, trans_rms, idepth_rms)`` of target-frame poses and depths.

    ``poses`` and ``gt_poses`` hold the target frames only (the reference is
    the identity in both).
    """
    poses, d = gauge_align(poses, inv_depths)
    gt_poses, gt_d = gauge_align(gt_poses, gt_inv_depths)
    xi = se3_log(poses.compose(gt_poses.inverse()))
    rot = float(np.sqrt(np.mean(xi[:, :3] ** 2)))
    trans = float(np.sqrt(np.mean(xi[:, 3:] ** 2)))
    idepth = float(np.sqrt(np.mean((d - gt_d) ** 2)))
    return rot, trans, idepth


def trace_rows(report, gt_poses, gt_inv_depths, deterministic=False):
    """One metrics row per recorded iteration (iteration 0 is the start)."""
    rows = []
    for rec in report.records:
        rot, trans, idepth = parameter_rms(rec.poses, rec.inv_depths, gt_poses, gt_inv_depths)
        rows.append({
            "iter": rec.iteration,
            "energy": rec.energy,
            "rot_rms": rot,
            "trans_rms": trans,
            "idepth_rms": idepth,
            "wall_ms": 0.0 if deterministic else rec.wall_ms,
            "hessian_builds": rec.hessian_builds,
            "hessian_factorizations": rec.hessian_factorizations,
        })
    return rows
