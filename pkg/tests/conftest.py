"""Shared fixtures: small rendered scenes and a tiny hand-built problem."""
from __future__ import annotations

import time

import numpy as np
import pytest

from proxyba.geometry import Pose, se3_exp
from proxyba.image import Image, Intrinsics, PatchPattern
from proxyba.problem import ProblemState
from proxyba.synth import SceneSpec, render_sequence

SMALL_SPEC = dict(width=200, height=150, fx=500.0, fy=500.0, n_frames=6, n_points=40,
                  min_distance=8)


@pytest.fixture(scope="session")
def small_spec():
    return SceneSpec(**SMALL_SPEC)


@pytest.fixture(scope="session")
def small_scene(small_spec):
    return render_sequence(small_spec)


@pytest.fixture(scope="session")
def default_scene():
    """The default 20-frame, 200-point scene (about 15 s to render)."""
    start = time.perf_counter()
    scene = render_sequence(SceneSpec())
    scene.render_seconds = time.perf_counter() - start
    return scene


def smooth_image(shape, seed, fx):
    """A smooth random intensity pattern (sum of a few sinusoids)."""
    rng = np.random.default_rng(seed)
    H, W = shape
    vv, uu = np.mgrid[0:H, 0:W].astype(float)
    out = np.full(shape, 0.5)
    for _ in range(6):
        k = rng.normal(0.0, 0.15, 2)
        out += 0.05 * np.sin(k[0] * uu + k[1] * vv + rng.uniform(0, 2 * np.pi))
    return Image(out, Intrinsics(fx, fx, (W - 1) / 2, (H - 1) / 2))


def tiny_problem(n_targets=2, n_points=3, radius=0, seed=0):
    """A few smooth images, anchors near the centre and non-trivial poses."""
    rng = np.random.default_rng(seed)
    shape = (48, 56)
    ref = smooth_image(shape, seed, 50.0)
    targets = [smooth_image(shape, seed + 1 + f, 50.0) for f in range(n_targets)]
    anchors = np.stack([rng.integers(18, 38, n_points), rng.integers(16, 32, n_points)], axis=1)
    xi = np.concatenate([rng.normal(0, 0.02, (n_targets, 3)),
                         rng.uniform(0.05, 0.1, (n_targets, 3)) * rng.choice([-1, 1], (n_targets, 3))],
                        axis=1)
    poses = se3_exp(xi)
    d = rng.uniform(0.5, 1.5, n_points)
    return ProblemState(ref, targets, anchors, poses, d, PatchPattern.square(radius))


@pytest.fixture
def tiny():
    return tiny_problem()


def identity_poses(n):
    return Pose.identity(n)


# --------------------------------------------------------------------------
# acceptance report: one line per criterion at the end of the run
# --------------------------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
