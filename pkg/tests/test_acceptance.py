"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still shows its measured value.
"""
from __future__ import annotations

import hashlib
import json
import time

import numpy as np
import pytest

from conftest import SMALL_SPEC, record_criterion, tiny_problem
from proxyba import cli
from proxyba.bench import initial_state
from proxyba.checks import fd_ic_jacobian, random_configuration, rel_error, run_gradcheck
from proxyba.geometry import (
    Pose,
    fc_warp_jacobian,
    ic_jacobian_row,
    make_proxy_constants,
    project_warp,
    proxy_warp_grad_form,
    so3_exp,
)
from proxyba.linalg import SchurFactor
from proxyba.metrics import parameter_rms
from proxyba.problem import energy_eval
from proxyba.robust import huber_weight
from proxyba.solver import SolverConfig, build_ic_system, fc_solve, ic_solve
from test_geometry import first_order_inverse_errors, inverse_warp_at_depth
from test_problem import naive_energy
from test_robust import GAMMA, SAMPLES, irls_location
from test_solver import dense_ic_step

SIGMA = 1e-3
THRESHOLD_PX = 5e-3
TIMING_REPEATS = 3


def test_criterion_01_identity_depth_column_is_exactly_zero():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        x = rng.uniform(-0.5, 0.5, 2)
        d = rng.uniform(0.05, 5.0)
        col = fc_warp_jacobian(x, Pose.identity(), d).depth_column
        worst = max(worst, float(np.abs(col).max()))
    elapsed = time.perf_counter() - start
    ok = worst == 0.0 and elapsed < 1.0
    record_criterion(1, ok, f"max |dW/dd| = {worst:g} over 1000 samples, {elapsed:.3f} s")
    assert ok


def test_criterion_02_proxy_depth_column_is_observable():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst, smallest = 0.0, np.inf
    for _ in range(1000):
        x, pose0, d0 = random_configuration(rng, min_translation=0.1)
        pc = make_proxy_constants(x, pose0, d0)
        col = ic_jacobian_row(x, pc).depth_column
        smallest = min(smallest, float(np.linalg.norm(col)))
        worst = max(worst, rel_error(col, fd_ic_jacobian(x, pc)[:, 6]))
    elapsed = time.perf_counter() - start
    ok = smallest > 0 and worst <= 1e-4 and elapsed < 5.0
    record_criterion(2, ok, f"min |col| = {smallest:.3e}, max rel. err = {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_03_all_jacobians_pass_gradcheck():
    results, _ = run_gradcheck(seed=0, samples=500)
    worst = max(r.max_rel_error for r in results)
    ok = all(r.passed(1e-4) for r in results)
    detail = ", ".join(f"{r.name}: {r.max_rel_error:.1e}" for r in results)
    record_criterion(3, ok, detail)
    assert ok, worst


def test_criterion_04_identity_and_composition():
    rng = np.random.default_rng(4)
    phi_err = template_err = 0.0
    slopes = []
    steps = np.array([1e-2, 1e-3, 1e-4])
    for _ in range(200):
        x = rng.uniform(-0.4, 0.4, 2)
        pose0 = Pose(so3_exp(rng.normal(0, 0.1, 3)), rng.uniform(-0.3, 0.3, 3))
        d0 = rng.uniform(0.3, 2.0)
        pc = make_proxy_constants(x, pose0, d0)
        phi_err = max(phi_err, float(np.abs(proxy_warp_grad_form(x, pc, np.zeros(7)) - x).max()))
        y = project_warp(x, pose0, d0)
        back = inverse_warp_at_depth(y, pose0, pc.zbar0)
        template_err = max(template_err, float(np.abs(project_warp(back, pose0, d0) - y).max()))
        u = rng.normal(size=7)
        errors = first_order_inverse_errors(x, pose0, d0, u / np.linalg.norm(u), steps)
        slopes.append(np.polyfit(np.log10(steps), np.log10(errors), 1)[0])
    slopes = np.array(slopes)
    ok = phi_err <= 1e-12 and template_err <= 1e-10 and np.all(np.abs(slopes - 2.0) <= 0.1)
    record_criterion(4, ok, f"|phi(x;0)-x| = {phi_err:.1e}, |W'(y;p0)-y| = {template_err:.1e}, "
                            f"slopes in [{slopes.min():.3f}, {slopes.max():.3f}]")
    assert ok


# --------------------------------------------------------------------------
# criteria 5-7: one default-scene run, seed 0
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_run(default_scene):
    start = time.perf_counter()
    state = initial_state(default_scene, SIGMA, seed=0)
    config = SolverConfig(threshold_px=THRESHOLD_PX)
    fc = fc_solve(state.copy(), config)
    ic = ic_solve(state.copy(), config)
    # runtime covers rendering the scene as well as both solves
    elapsed = time.perf_counter() - start + default_scene.render_seconds
    return default_scene, state, config, fc, ic, elapsed


def test_criterion_05_default_scene_convergence(default_run):
    scene, _, _, fc, ic, elapsed = default_run
    gt = scene.poses[1:], scene.inv_depths
    rms = {r.method: parameter_rms(r.records[-1].poses, r.records[-1].inv_depths, *gt)
           for r in (fc, ic)}
    gap = abs(ic.energy - fc.energy) / min(ic.energy, fc.energy)
    ok = (fc.converged and ic.converged and max(rms["fc"]) <= 1e-3 and max(rms["ic"]) <= 1e-3
          and gap <= 0.01 and elapsed < 120)
    record_criterion(5, ok, f"F={len(scene.images)}, N={len(scene.anchors)}; "
                            f"fc {fc.status} in {fc.iterations} it, rms {max(rms['fc']):.2e}; "
                            f"ic {ic.status} in {ic.iterations} it, rms {max(rms['ic']):.2e}; "
                            f"energy gap {100 * gap:.2f}%; {elapsed:.1f} s")
    assert ok


def test_criterion_06_hessian_counts(default_run):
    _, _, _, fc, ic, _ = default_run
    ok = (ic.hessian_builds == 1
          and ic.hessian_factorizations <= 1 + ic.damping_retries
          and fc.hessian_builds == fc.iterations)
    record_criterion(6, ok, f"ic builds {ic.hessian_builds}, factorizations "
                            f"{ic.hessian_factorizations} (retries {ic.damping_retries}); "
                            f"fc builds {fc.hessian_builds} for {fc.iterations} iterations")
    assert ok


def test_criterion_07_ic_is_at_least_twice_as_fast(default_run):
    scene, state, config, fc, ic, _ = default_run
    assert len(scene.images) >= 20 and len(scene.anchors) >= 200
    fc_ms = [fc.wall_ms] + [fc_solve(state.copy(), config).wall_ms for _ in range(TIMING_REPEATS - 1)]
    ic_ms = [ic.wall_ms] + [ic_solve(state.copy(), config).wall_ms for _ in range(TIMING_REPEATS - 1)]
    ratio = min(ic_ms) / min(fc_ms)
    ok = ratio <= 0.5
    record_criterion(7, ok, f"ic {min(ic_ms):.1f} ms vs fc {min(fc_ms):.1f} ms "
                            f"(best of {TIMING_REPEATS}), ratio {ratio:.2f}")
    assert ok


# --------------------------------------------------------------------------
# criteria 8-10
# --------------------------------------------------------------------------

def test_criterion_08_solver_matches_dense_oracle():
    state = tiny_problem(n_targets=2, n_points=3, radius=0, seed=5)
    damping = 1e-3
    system = build_ic_system(state, GAMMA)
    system.hessian.damping = damping
    gp, gd = system.gradient(system.initial, GAMMA)
    dpose, ddepth = SchurFactor(system.hessian).solve(gp, gd)
    ref_pose, ref_depth = dense_ic_step(state, GAMMA, damping)
    step_err = max(np.abs(dpose - ref_pose).max(), np.abs(ddepth - ref_depth).max())
    energy_err = 0.0
    for radius in (0, 1):
        big = tiny_problem(n_targets=3, n_points=6, radius=radius, seed=8)
        energy_err = max(energy_err, abs(energy_eval(big, GAMMA).energy - naive_energy(big, GAMMA)))
    ok = step_err <= 1e-10 and energy_err <= 1e-12
    record_criterion(8, ok, f"IC step vs dense: {step_err:.1e}; energy vs double loop: {energy_err:.1e}")
    assert ok


def test_criterion_09_huber_irls():
    from scipy.optimize import minimize_scalar

    from proxyba.robust import huber_loss

    mu = irls_location(SAMPLES, GAMMA)
    golden = minimize_scalar(lambda m: huber_loss(SAMPLES - m, GAMMA).sum(),
                             bracket=(0.0, 0.1, 0.2), method="golden", tol=1e-14).x
    w = float(huber_weight(2 * GAMMA, GAMMA))
    ok = abs(mu - golden) <= 1e-8 and w == 0.5
    record_criterion(9, ok, f"IRLS vs golden section: {abs(mu - golden):.1e}; w(2 gamma) = {w}")
    assert ok


def test_criterion_10_deterministic_runs(tmp_path):
    cfg = tmp_path / "scene.json"
    cfg.write_text(json.dumps(SMALL_SPEC))
    digests = []
    for _ in range(2):
        # two identical invocations; the second overwrites the first
        assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "scene"),
                         "--deterministic"]) == 0
        assert cli.main(["solve", "--scene", str(tmp_path / "scene"), "--solver", "both",
                         "--deterministic", "--out", str(tmp_path / "out")]) == 0
        files = sorted((tmp_path / "out").glob("*.csv")) + sorted((tmp_path / "out").glob("*.json"))
        digests.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in files})
    ok = digests[0] == digests[1] and len(digests[0]) == 5
    record_criterion(10, ok, f"{len(digests[0])} CSV/JSON files, identical SHA-256: {digests[0] == digests[1]}")
    assert ok
