"""Photometric bundle adjustment with forwards and inverse compositional solvers."""
from .errors import (Diverged, DegenerateDepth, EmptyProblem, InvalidDepth, OutOfBounds,
                     ProxyBAError, SingularHessian, SpecInfeasible)
from .geometry import (Pose, fc_warp_jacobian, ic_jacobian_row, make_proxy_constants,
                       project_warp, proxy_warp_grad_form, proxy_warp_update_form, se3_exp,
                       se3_log, so3_exp, so3_log)
from .image import Image, Intrinsics, PatchPattern, image_gradient, sample_bilinear
from .metrics import parameter_rms
from .problem import ProblemState, energy_eval, evaluate
from .robust import huber_loss, huber_weight
from .solver import SolveReport, SolverConfig, fc_solve, ic_solve
from .synth import Scene, SceneSpec, load_scene, perturb_parameters, render_sequence, write_scene

__all__ = [
    "Diverged", "DegenerateDepth", "EmptyProblem", "InvalidDepth", "OutOfBounds",
    "ProxyBAError", "SingularHessian", "SpecInfeasible",
    "Pose", "fc_warp_jacobian", "ic_jacobian_row", "make_proxy_constants", "project_warp",
    "proxy_warp_grad_form", "proxy_warp_update_form", "se3_exp", "se3_log", "so3_exp", "so3_log",
    "Image", "Intrinsics", "PatchPattern", "image_gradient", "sample_bilinear",
    "parameter_rms", "ProblemState", "energy_eval", "evaluate", "huber_loss", "huber_weight",
    "SolveReport", "SolverConfig", "fc_solve", "ic_solve",
    "Scene", "SceneSpec", "load_scene", "perturb_parameters", "render_sequence", "write_scene",
]
