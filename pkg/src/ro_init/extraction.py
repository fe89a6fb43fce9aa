"""From a relaxed solution to a pose or trajectory estimate with a certificate."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .eig import sym_eig
from .lie import Pose, Twist, exp_se, log_se, project_to_rotation, rotz
from .local import LmState, lm_solve
from .objective import EXACT, FIRST_ORDER, map_cost
from .qcqp import StateLayout, Variant, build, lift_state
from .redundancy import attach, cached_basis, memo_face
from .relaxation import solve_relaxation
from .scenario import Mode, Scenario
from .sdp import SdpSolution, SdpStatus

F_EIG_CAP = 16.0
STATIC_THRESHOLD = 7.0
DYNAMIC_THRESHOLD = 5.0


class HomogenizationCollapse(ValueError):
    """The dominant eigenvector has (almost) no weight on the h entry."""


class NotSolved(ValueError):
    pass


@dataclass(frozen=True)
class Certificate:
    f_eig: float
    duality_gap_rel: float
    relaxation_gap: float
    rank1: bool
    threshold: float
    lower_bound_ok: bool = True


@dataclass(eq=False)
class EstimateReport:
    mode: Mode
    pose: Pose
    twist: Optional[Twist]
    certificate: Certificate
    position_error: Optional[float]
    rotation_error: Optional[float]
    sdp_cost: float
    map_cost: float
    status: SdpStatus
    timing: dict = field(default_factory=dict)
    solution: Optional[SdpSolution] = field(default=None, repr=False)
    relaxed_pose: Optional[Pose] = None
    relaxed_twist: Optional[Twist] = None

    def trajectory(self, n_steps: int, dt_r: float) -> list:
        return trajectory(self.pose, self.twist, n_steps, dt_r)


def f_eig(eigenvalues) -> float:
    """log10(e1 / e2) of descending eigenvalues, capped at 16."""
    e1 = float(eigenvalues[0])
    e2 = float(eigenvalues[1]) if len(eigenvalues) > 1 else 0.0
    if e1 <= 0.0:
        return -F_EIG_CAP
    # below n * eps the second eigenvalue is round-off from the eigensolver
    if e2 <= len(eigenvalues) * np.finfo(float).eps * e1:
        return F_EIG_CAP
    return min(F_EIG_CAP, math.log10(e1 / e2))


def threshold_for(variant: Variant) -> float:
    return STATIC_THRESHOLD if variant is Variant.STATIC else DYNAMIC_THRESHOLD


def _dominant(X: np.ndarray, h: int):
    ev, V = sym_eig(X)
    x = math.sqrt(max(ev[0], 0.0)) * V[:, 0]
    if abs(x[h]) < 1e-6:
        raise HomogenizationCollapse(f"h entry of the dominant eigenvector is {x[h]:.2e}")
    return x / x[h], ev


def vector_estimate(layout: StateLayout, x: np.ndarray):
    """(Pose, Twist or None) read from a lifted vector with h = 1."""
    d = layout.dim
    v = layout.variant
    if v is Variant.DYNAMIC25:
        cs = x[layout.slot("R")]
        yaw = math.atan2(cs[1], cs[0])
        pose = Pose(rotz(yaw), x[layout.slot("p")])
        twist = Twist([0.0, 0.0, x[layout.index("w")]], x[layout.slot("v")])
        return pose, twist
    if v is Variant.DYNAMIC_EXACT:
        R = project_to_rotation(x[layout.slot("R1")].reshape(d, d, order="F"))
        pose = Pose(R, x[layout.slot("p1")])
        dR = project_to_rotation(x[layout.slot("dR")].reshape(d, d, order="F"))
        step = log_se(Pose(dR, x[layout.slot("dp")]))
        return pose, step.scaled(1.0 / layout.dt_r)
    R = project_to_rotation(x[layout.slot("R")].reshape(d, d, order="F"))
    pose = Pose(R, x[layout.slot("p")])
    if v is Variant.STATIC:
        return pose, None
    return pose, Twist(x[layout.slot("w")], x[layout.slot("v")])


def relaxation_model(layout: StateLayout) -> str:
    """Motion model whose MAP problem the layout's relaxation bounds."""
    return FIRST_ORDER if layout.variant in (Variant.DYNAMIC, Variant.DYNAMIC25) else EXACT


def feasible_lift(layout: StateLayout, scenario: Scenario, x: np.ndarray) -> np.ndarray:
    """Nearest point of the relaxation's feasible set, via the decoded estimate."""
    pose, twist = vector_estimate(layout, x)
    return lift_state(layout, scenario, pose, twist, model=relaxation_model(layout))


def extract(solution: SdpSolution, layout: StateLayout):
    """(Pose, Twist or None, Certificate) from a relaxed solution."""
    if solution.status is not SdpStatus.OPTIMAL and not solution.rel_gap < 1e-4:
        raise NotSolved(f"solver status {solution.status.value} with rel_gap {solution.rel_gap:.2e}")
    x, ev = _dominant(solution.X, layout.h)
    pose, twist = vector_estimate(layout, x)
    cert = certify(solution, None, threshold_for(layout.variant), eigenvalues=ev)
    return pose, twist, cert


def certify(
    solution: SdpSolution,
    map_cost_at_extraction: Optional[float],
    threshold: float = STATIC_THRESHOLD,
    eigenvalues=None,
    tol: float = 1e-7,
) -> Certificate:
    p, d = solution.primal_obj, solution.dual_obj
    scale = max(1.0, abs(p))
    ev = sym_eig(solution.X)[0] if eigenvalues is None else eigenvalues
    fe = f_eig(ev)
    relax = 0.0 if map_cost_at_extraction is None else abs(map_cost_at_extraction - p) / scale
    ok = map_cost_at_extraction is None or map_cost_at_extraction >= p - tol * (1.0 + abs(p))
    return Certificate(
        f_eig=fe,
        duality_gap_rel=abs(p - d) / scale,
        relaxation_gap=relax,
        rank1=fe >= threshold,
        threshold=threshold,
        lower_bound_ok=ok,
    )


def trajectory(pose: Pose, twist: Optional[Twist], n_steps: int, dt_r: float) -> list:
    """Poses at every step of a constant-velocity window."""
    if twist is None:
        return [pose] * n_steps
    return [pose @ exp_se(twist, k * dt_r) for k in range(n_steps)]


def pose_errors(scenario: Scenario, pose: Pose, twist: Optional[Twist]) -> tuple:
    """Mean position and rotation error against the scenario's ground truth."""
    truth = scenario.truth
    est = trajectory(pose, twist, scenario.n_steps, scenario.dt_r)
    gt = truth.poses_at_steps
    pos = [float(np.linalg.norm(g.translation - e.translation)) for g, e in zip(gt, est)]
    d = pose.dim
    rot = [float(np.linalg.norm(g.rotation.T @ e.rotation - np.eye(d))) for g, e in zip(gt, est)]
    return float(np.mean(pos)), float(np.mean(rot))


def prepare(scenario: Scenario, exact: bool = False, use_cache: bool = True):
    """(problem, FaceBasis or None, timing) for a scenario.

    The approximation-free layout is too large for a full constraint basis;
    it gets its constraints on the face of its lifts instead.
    """
    timing = {}
    t0 = time.perf_counter()
    problem = build(scenario, exact=exact)
    timing["build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    face = None
    if problem.layout.variant is Variant.DYNAMIC_EXACT:
        face, cached = memo_face(scenario, problem.layout, use_cache=use_cache)
        timing["discover_cached"] = cached
    else:
        basis, cached = cached_basis(scenario, problem.layout, use_cache=use_cache)
        problem = attach(problem, basis)
        timing["discover_cached"] = cached
    timing["discover"] = time.perf_counter() - t0
    return problem, face, timing


def estimate(
    scenario: Scenario,
    exact: bool = False,
    refine: Optional[bool] = None,
    use_cache: bool = True,
    prepared=None,
    max_iter: int = 100,
    tol: float = 1e-9,
) -> EstimateReport:
    """Relax, solve, extract and (optionally) polish with LM on the exact cost."""
    if prepared is None:
        problem, face, timing = prepare(scenario, exact=exact, use_cache=use_cache)
    else:
        problem, face = prepared
        timing = {"build": 0.0, "discover": 0.0, "discover_cached": True}
    layout = problem.layout
    t0 = time.perf_counter()
    result = solve_relaxation(
        problem,
        lambda x: feasible_lift(layout, scenario, x),
        U=None if face is None else face.U,
        span=None if face is None else face.moment_span,
        max_iter=max_iter,
        tol=tol,
    )
    sol = result.solution
    timing["sdp"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    x, ev = _dominant(sol.X, layout.h)
    pose, twist = vector_estimate(layout, x)
    model = relaxation_model(layout)
    at_extraction = map_cost(scenario, scenario.measurements, pose, twist, model)
    cert = certify(sol, at_extraction, threshold_for(layout.variant), eigenvalues=ev)
    relaxed = (pose, twist)
    if refine is None:
        refine = scenario.mode.is_dynamic
    if refine:
        rep = lm_solve(scenario, scenario.measurements, LmState(pose, twist, scenario.mode))
        pose, twist = rep.final_state.pose, rep.final_state.twist
    timing["extract"] = time.perf_counter() - t0
    pos_err = rot_err = None
    if scenario.truth is not None:
        pos_err, rot_err = pose_errors(scenario, pose, twist)
    return EstimateReport(
        mode=scenario.mode,
        pose=pose,
        twist=twist,
        certificate=cert,
        position_error=pos_err,
        rotation_error=rot_err,
        sdp_cost=sol.primal_obj,
        map_cost=map_cost(scenario, scenario.measurements, pose, twist, EXACT),
        status=sol.status,
        timing=timing,
        solution=sol,
        relaxed_pose=relaxed[0],
        relaxed_twist=relaxed[1],
    )
