"""Levenberg-Marquardt on the pose (and twist) manifold.

The pose is updated by right multiplication, ``T <- T exp(delta)``, and the
twist additively. In 2.5D the yaw is a plain angle with an additive update.
Residuals are ``r_i - |a_j - q_i|^2`` where ``q_i`` is the world position of
the measured tag; their Jacobians are assembled in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lie import Pose, Twist, exp_se, hat2, hat3, project_to_rotation, rotz
from .objective import EXACT, FIRST_ORDER, cost_weight
from .scenario import Mode, SamplerConfig, Scenario, sample_pose, sample_twist

_SMALL = 1e-4
_RENORMALIZE_EVERY = 50
_J2 = hat2(1.0)


@dataclass(frozen=True, eq=False)
class LmState:
    pose: Pose
    twist: Optional[Twist]
    mode: Mode

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode.is_dynamic and self.twist is None:
            raise ValueError("dynamic states need a twist")
        if self.mode is Mode.DYNAMIC25 and not np.allclose(self.pose.rotation[2], [0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("2.5D states rotate about z only")


@dataclass(eq=False)
class LmReport:
    final_state: LmState
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list = field(default_factory=list)


def n_params(mode: Mode, d: int) -> int:
    if mode is Mode.STATIC:
        return 3 if d == 2 else 6
    return 6 if mode is Mode.DYNAMIC else 8


def _planar(theta: float):
    """R(theta), V(theta) and their derivatives in theta."""
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    dR = np.array([[-s, -c], [c, -s]])
    if abs(theta) < _SMALL:
        t2 = theta * theta
        a, b = 1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0
        da, db = -theta / 3.0 + theta * t2 / 30.0, 0.5 - t2 / 8.0
    else:
        a, b = s / theta, (1.0 - c) / theta
        da = (theta * c - s) / (theta * theta)
        db = (theta * s - 1.0 + c) / (theta * theta)
    V = np.array([[a, -b], [b, a]])
    dV = np.array([[da, -db], [db, da]])
    return R, dR, V, dV


def _body_points(scenario: Scenario, twist: Optional[Twist], k: np.ndarray, l: np.ndarray, model: str):
    """Tag positions in the initial body frame and their twist Jacobians.

    Returns ``b`` (M x d) and ``db`` (M x d x n_twist), ``n_twist`` being 3
    for planar windows, 4 in 2.5D (yaw rate and linear velocity) and 0 for
    static scenarios.
    """
    u = scenario.tags[l]
    d = scenario.dimension
    M = len(k)
    if twist is None or not scenario.mode.is_dynamic:
        return u.copy(), np.zeros((M, d, 0))
    c = np.array([scenario.step_time(int(kk)) for kk in k])
    if scenario.mode is Mode.DYNAMIC:
        w, v = float(twist.angular[0]), twist.linear
        vz = None
    else:
        w, v = float(twist.angular[2]), twist.linear[:2]
        vz = float(twist.linear[2])
    nt = 3 if vz is None else 4
    b = np.zeros((M, d))
    db = np.zeros((M, d, nt))
    for i in range(M):
        ci = c[i]
        uxy = u[i, :2]
        if model == FIRST_ORDER:
            b[i, :2] = uxy + ci * (w * (_J2 @ uxy) + v)
            db[i, :2, 0] = ci * (_J2 @ uxy)
            db[i, :2, 1:3] = ci * np.eye(2)
        elif model == EXACT:
            R, dR, V, dV = _planar(ci * w)
            b[i, :2] = R @ uxy + ci * (V @ v)
            db[i, :2, 0] = ci * (dR @ uxy + ci * (dV @ v))
            db[i, :2, 1:3] = ci * V
        else:
            raise ValueError(f"unknown motion model {model!r}")
        if vz is not None:
            b[i, 2] = u[i, 2] + ci * vz
            db[i, 2, 3] = ci
    return b, db


def _index(measurements):
    k = np.array([m.k for m in measurements], dtype=int)
    j = np.array([m.j for m in measurements], dtype=int)
    l = np.array([m.l for m in measurements], dtype=int)
    r = np.array([m.value for m in measurements], dtype=float)
    return k, j, l, r


def residuals_and_jacobian(scenario: Scenario, measurements, state: LmState, model: str = EXACT):
    """Unweighted residuals and their Jacobian in the local parameters."""
    k, j, l, r = _index(measurements)
    pose = state.pose
    R, p = pose.rotation, pose.translation
    d = scenario.dimension
    b, db = _body_points(scenario, state.twist, k, l, model)
    q = b @ R.T + p
    diff = scenario.anchors[j] - q
    e = r - np.einsum("ij,ij->i", diff, diff)
    g = 2.0 * diff  # de/dq
    M = len(e)
    mode = state.mode
    J = np.zeros((M, n_params(mode, d)))
    if mode is Mode.DYNAMIC25:
        # yaw, p (3), yaw rate, v (3)
        Jz = hat3([0.0, 0.0, 1.0])
        J[:, 0] = np.einsum("ij,ij->i", g, b @ (R @ Jz).T)
        J[:, 1:4] = g
        J[:, 4:8] = np.einsum("ij,jk,ikt->it", g, R, db)
        return e, J
    if d == 2:
        # right perturbation: q = R exp(delta) b + p
        J[:, 0] = np.einsum("ij,ij->i", g, b @ (R @ _J2).T)
        J[:, 1:3] = g @ R
        if mode is Mode.DYNAMIC:
            J[:, 3:6] = np.einsum("ij,jk,ikt->it", g, R, db)
        return e, J
    gR = g @ R
    J[:, 0:3] = np.cross(b, gR)
    J[:, 3:6] = gR
    return e, J


def _retract(state: LmState, delta: np.ndarray) -> LmState:
    pose, twist, mode = state.pose, state.twist, state.mode
    d = pose.dim
    if mode is Mode.DYNAMIC25:
        R, p = pose.rotation, pose.translation
        yaw = np.arctan2(R[1, 0], R[0, 0]) + delta[0]
        w = twist.angular + np.array([0.0, 0.0, delta[4]])
        return LmState(Pose(rotz(yaw), p + delta[1:4]), Twist(w, twist.linear + delta[5:8]), mode)
    k = 3 if d == 2 else 6
    new_pose = pose @ exp_se(Twist.from_vector(delta[:k], d))
    new_twist = twist
    if mode is Mode.DYNAMIC:
        new_twist = Twist(twist.angular + delta[k : k + 1], twist.linear + delta[k + 1 : k + 3])
    return LmState(new_pose, new_twist, mode)


def _renormalize(state: LmState) -> LmState:
    pose = Pose(project_to_rotation(state.pose.rotation), state.pose.translation)
    return LmState(pose, state.twist, state.mode)


def lm_solve(
    scenario: Scenario,
    measurements,
    init: LmState,
    max_iter: int = 200,
    g_tol: float = 1e-10,
    lambda0: float = 1e-3,
    model: str = EXACT,
) -> LmReport:
    """Minimize the weighted squared-range MAP cost from ``init``."""
    measurements = scenario.measurements if measurements is None else tuple(measurements)
    if init.mode is not scenario.mode:
        raise ValueError(f"initial state is {init.mode.value}, scenario is {scenario.mode.value}")
    w = cost_weight(scenario, len(measurements))
    state = init
    e, J = residuals_and_jacobian(scenario, measurements, state, model)
    cost = w * float(e @ e)
    trace = [cost]
    lam = lambda0
    converged = False
    it = 0
    steps = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * w * (J.T @ e)
        if np.max(np.abs(grad)) < g_tol:
            converged = True
            it -= 1
            break
        H = J.T @ J
        D = np.maximum(np.diag(H), 1e-12 * max(1.0, np.max(np.diag(H))))
        accepted = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(H + lam * np.diag(D), -(J.T @ e))
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = _retract(state, delta)
            e_new, J_new = residuals_and_jacobian(scenario, measurements, trial, model)
            cost_new = w * float(e_new @ e_new)
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        steps += 1
        if steps % _RENORMALIZE_EVERY == 0:
            trial = _renormalize(trial)
            e_new, J_new = residuals_and_jacobian(scenario, measurements, trial, model)
            cost_new = w * float(e_new @ e_new)
        decrease = cost - cost_new
        state, e, J, cost = trial, e_new, J_new, cost_new
        trace.append(cost)
        lam = max(lam / 3.0, 1e-12)
        if decrease <= 1e-12 * max(cost, 1e-300) or cost == 0.0:
            converged = True
            break
    return LmReport(final_state=state, final_cost=cost, iterations=it, converged=converged, cost_trace=trace)


def sampler_for(scenario: Scenario) -> SamplerConfig:
    """Pose and twist distributions matching the scenario's dimension and mode."""
    return SamplerConfig(
        scenario.dimension,
        scenario.mode,
        len(scenario.anchors),
        tuple(tuple(t) for t in scenario.tags),
        scenario.sigma_r,
        scenario.t_v,
        scenario.dt_r,
    )


def random_init(scenario: Scenario, rng_seed) -> LmState:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    config = sampler_for(scenario)
    pose = sample_pose(config, rng)
    twist = sample_twist(config, rng) if scenario.mode.is_dynamic else None
    return LmState(pose, twist, scenario.mode)


def state_from_truth(scenario: Scenario) -> LmState:
    truth = scenario.truth
    if truth is None:
        raise ValueError("scenario carries no ground truth")
    twist = truth.twist if scenario.mode.is_dynamic else None
    return LmState(truth.initial_pose, twist, scenario.mode)
