"""Command-line interface: ``generate``, ``solve`` and ``gradcheck``.

Exit codes: 0 success, 1 check failure, 2 infeasible configuration,
3 divergence (the partial trace is still written).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import ExperimentConfig, run_experiment
from .checks import run_gradcheck
from .errors import ProxyBAError, SpecInfeasible
from .synth import SceneSpec, render_sequence, write_scene

EXIT_OK, EXIT_CHECK, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 1, 2, 3


def _load_json(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValueError(f"config file {p} does not exist")
    return json.loads(p.read_text())


def _overrides(args, names):
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def cmd_generate(args):
    data = _load_json(args.config)
    data.update(_overrides(args, ["seed"]))
    spec = SceneSpec.from_dict(data)
    try:
        scene = render_sequence(spec)
    except SpecInfeasible as exc:
        print(f"infeasible scene: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    path = write_scene(scene, args.out)
    print(f"wrote {len(scene.images)} frames, {len(scene.anchors)} points -> {path}")
    return EXIT_OK


def cmd_solve(args):
    data = _load_json(args.config)
    data.update(_overrides(args, ["scene", "solver", "sigma", "seed", "gamma",
                                  "threshold", "max_iterations", "out"]))
    if args.deterministic:
        data["deterministic"] = True
    config = ExperimentConfig.from_dict(data)
    if not Path(config.scene).exists():
        raise ValueError(f"scene {config.scene} does not exist")
    try:
        runs, summary = run_experiment(config)
    except ProxyBAError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for name, s in summary["solvers"].items():
        print(f"{name}: {s['status']} after {s['iterations']} iterations, energy {s['energy']:.6g}, "
              f"rot_rms {s['rot_rms']:.3g}, trans_rms {s['trans_rms']:.3g}, "
              f"idepth_rms {s['idepth_rms']:.3g}, {s['wall_ms']:.1f} ms, "
              f"hessian builds {s['hessian_builds']}, factorizations {s['hessian_factorizations']}")
    if summary.get("ic_over_fc_wall") is not None:
        print(f"ic/fc wall-clock ratio: {summary['ic_over_fc_wall']:.3f}")
    if any(run.report.diverged for run in runs):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_gradcheck(args):
    data = _load_json(args.config)
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    samples = args.samples if args.samples is not None else data.get("samples", 500)
    tol = args.tolerance if args.tolerance is not None else data.get("tolerance", 1e-4)
    results, table = run_gradcheck(seed, samples)
    ok = True
    print(f"{'check':<28} {'max rel. error':>14}  status (tolerance {tol:g}, {samples} samples)")
    for r in results:
        passed = r.passed(tol)
        ok &= passed
        print(f"{r.name:<28} {r.max_rel_error:>14.3e}  {'pass' if passed else 'FAIL'}")
    print()
    print(f"{'depth column':<28} {'max |.|':>10} {'min |.|':>10}  status")
    for row in table:
        ok &= row.status != "UNEXPECTED"
        print(f"{row.case:<28} {row.max_abs_depth_column:>10.3e} "
              f"{row.min_abs_depth_column:>10.3e}  {row.status}")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    parser = argparse.ArgumentParser(prog="proxyba", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic scene")
    g.add_argument("--config", help="JSON file with scene settings")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", default="scene", help="output directory")
    g.add_argument("--deterministic", action="store_true",
                   help="accepted for symmetry; rendering is always deterministic")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="perturb a scene and run the solvers")
    s.add_argument("--config", help="JSON file with experiment settings")
    s.add_argument("--scene", help="scene directory or scene.json")
    s.add_argument("--solver", choices=["fc", "ic", "both"])
    s.add_argument("--sigma", type=float, help="perturbation standard deviation")
    s.add_argument("--seed", type=int, help="perturbation seed")
    s.add_argument("--gamma", type=float, help="Huber threshold")
    s.add_argument("--threshold", type=float, help="convergence threshold in pixels")
    s.add_argument("--max-iterations", type=int, dest="max_iterations")
    s.add_argument("--out", help="output directory")
    s.add_argument("--deterministic", action="store_true",
                   help="write wall_ms = 0 so outputs are bit-reproducible")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("gradcheck", help="finite-difference check of the Jacobians")
    c.add_argument("--config", help="JSON file with seed/samples/tolerance")
    c.add_argument("--seed", type=int)
    c.add_argument("--samples", type=int)
    c.add_argument("--tolerance", type=float)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
