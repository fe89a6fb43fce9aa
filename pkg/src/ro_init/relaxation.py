"""Relaxation solves for structured range-only QCQPs.

Two reformulations keep the interior-point iterations well conditioned.

Face restriction: every feasible lift lies in a fixed subspace (the linear
lever-arm identities hold exactly), so every ``x x^T`` lives on the face
``X = U Y U^T`` of the PSD cone. Solving over ``Y`` gives a problem with a
strictly feasible point and far fewer constraints.

Recentering: the cost matrix is huge compared to its optimum (residuals are
differences of squared ranges of tens of meters), so a direct solve only
resolves the optimum to about 1e-12 of the data scale. Substituting
``x = T x'`` with ``T = [c, s V]`` (``c`` a feasible lift near the optimum,
``V`` the orthogonal complement, ``s`` a cost-normalizing scale) is a
congruence of the whole problem; its optimum is the same point but the cost
now has unit scale and the optimum sits next to ``e_1 e_1^T``. The first
column of the transformed cost factor is the residual vector at ``c``, which
is formed directly instead of through the large entries of ``Q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, TextIO

import numpy as np

from . import sdp
from .qcqp import QcqpProblem
from .sdp import SdpInstance, SdpSolution, SdpStatus, smat, svec

Center = Callable[[np.ndarray], np.ndarray]
_STATUS_ORDER = {SdpStatus.OPTIMAL: 0, SdpStatus.MAX_ITER: 1, SdpStatus.NUMERICAL_FAILURE: 2}


@dataclass(frozen=True, eq=False)
class FaceProblem:
    """The relaxation restricted to the face spanned by feasible lifts."""

    U: np.ndarray  # n x r, orthonormal columns
    G: np.ndarray  # cost factor in face coordinates
    A: np.ndarray  # (m, r, r) constraints, homogenization first
    b: np.ndarray
    cost_full: np.ndarray  # cost factor in lifted coordinates

    @property
    def r(self) -> int:
        return self.U.shape[1]


@dataclass(eq=False)
class RelaxationResult:
    solution: SdpSolution
    face_dim: int
    rounds: list = field(default_factory=list)


def lift_range(samples: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the span of sampled lifts (rows of ``samples``)."""
    X = samples / np.linalg.norm(samples, axis=1, keepdims=True)
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    return Vt[: int(np.sum(s > tol * s[0]))].T


def _span_range(span: np.ndarray, n: int, tol: float = 1e-10) -> np.ndarray:
    mats = smat(span, n)
    K = np.einsum("kij,kjl->il", mats, mats)
    ev, evec = np.linalg.eigh((K + K.T) / 2.0)
    return evec[:, ev > tol * ev[-1]]


def face_problem(
    problem: QcqpProblem,
    U: Optional[np.ndarray] = None,
    span: Optional[np.ndarray] = None,
) -> FaceProblem:
    """Restrict a problem to the face of its feasible lifts.

    ``U`` defaults to the common range of the attached moment span; problems
    without one need it supplied (see ``lift_range``). ``span`` is a moment
    span already in face coordinates; with it the constraints are its
    complement and the problem's own constraint list is ignored.
    """
    n = problem.n
    if span is not None and U is None:
        raise ValueError("a face-coordinate span needs its lift basis U")
    if U is None:
        if problem.moment_span is None:
            raise ValueError("problem has no moment span; pass the lift range explicitly")
        U = _span_range(problem.moment_span, n)
    r = U.shape[1]
    A0 = U.T @ problem.A0 @ U
    if span is not None:
        Q, _ = np.linalg.qr(span.T, mode="complete")
        B = smat(Q[:, span.shape[0] :].T, r)
    elif problem.moment_span is not None:
        # constraints are everything orthogonal to the restricted moment span
        red = svec(np.matmul(np.matmul(U.T, smat(problem.moment_span, n)), U))
        _, s, Vt = np.linalg.svd(red, full_matrices=True)
        k = int(np.sum(s > 1e-10 * s[0]))
        B = smat(Vt[k:], r)
    else:
        mats = np.array([c.matrix for c in problem.constraints]).reshape(-1, n, n)
        B = np.matmul(np.matmul(U.T, mats), U)
    A = np.concatenate([A0[None], B])
    Af = svec(A)
    b = np.zeros(len(A))
    b[0] = 1.0
    rows, coef, _, _ = sdp._orthonormalize(Af, b, full=False)
    G = problem.cost_rows if problem.cost_rows is not None else _factor(problem.Q)
    return FaceProblem(U=U, G=G @ U, A=smat(rows, r), b=coef, cost_full=G)


def _factor(Q: np.ndarray) -> np.ndarray:
    ev, V = np.linalg.eigh(Q)
    ev = np.clip(ev, 0.0, None)
    return (V * np.sqrt(ev)).T


def _congruence(face: FaceProblem, center: Optional[np.ndarray]):
    """(T, T^-1, transformed cost factor) for a lift ``center`` (or plain scaling)."""
    r = face.r
    if center is None:
        T = np.eye(r)
        s = 1.0 / max(np.linalg.norm(face.G, 2), 1e-300)
        return s * T, T / s, s * face.G
    c = face.U.T @ center
    # orthonormal complement of c by a Householder reflection
    e = np.zeros(r)
    e[0] = 1.0
    u = c / np.linalg.norm(c)
    v = u - e if u[0] < 0.0 else u + e
    H = np.eye(r) - 2.0 * np.outer(v, v) / (v @ v)
    V = H[:, 1:]
    GV = face.G @ V
    s = 1.0 / max(np.linalg.norm(GV, 2), 1e-300)
    T = np.column_stack([c, s * V])
    Ti = np.vstack([c / (c @ c), V.T / s])
    Gt = np.column_stack([face.cost_full @ center, s * GV])
    return T, Ti, Gt


def solve_face(
    face: FaceProblem,
    center: Optional[np.ndarray] = None,
    max_iter: int = 100,
    tol: float = 1e-9,
    log: Optional[TextIO] = None,
) -> tuple:
    """Solve the face problem in coordinates centered at ``center``.

    Returns ``(Y, Z, core)``: primal and dual slack in face coordinates plus the
    solution of the transformed problem (its objectives are the originals).
    """
    T, Ti, Gt = _congruence(face, center)
    Ct = Gt.T @ Gt
    At = np.matmul(np.matmul(T.T, face.A), T)
    inst = SdpInstance((Ct + Ct.T) / 2.0, tuple((At + np.swapaxes(At, 1, 2)) / 2.0), face.b)
    core = sdp.solve(inst, max_iter=max_iter, tol=tol, log=log, form="standard")
    Y = T @ core.X @ T.T
    Z = Ti.T @ core.S @ Ti
    return (Y + Y.T) / 2.0, (Z + Z.T) / 2.0, core


def _lift(face: FaceProblem, M: np.ndarray) -> np.ndarray:
    X = face.U @ M @ face.U.T
    return (X + X.T) / 2.0


def dominant_lift(X: np.ndarray, h: int) -> Optional[np.ndarray]:
    """Scaled dominant eigenvector with unit homogenization entry, if any."""
    ev, V = np.linalg.eigh((X + X.T) / 2.0)
    x = V[:, -1] * np.sqrt(max(ev[-1], 0.0))
    if not np.all(np.isfinite(x)) or abs(x[h]) < 1e-6:
        return None
    return x / x[h]


def solve_relaxation(
    problem: QcqpProblem,
    center: Center,
    U: Optional[np.ndarray] = None,
    span: Optional[np.ndarray] = None,
    max_rounds: int = 4,
    max_iter: int = 100,
    tol: float = 1e-9,
    log: Optional[TextIO] = None,
    warmup_tol: float = 1e-4,
) -> RelaxationResult:
    """Solve the problem's relaxation, recentering on extracted estimates.

    ``center`` maps a relaxed vector (h entry 1) to a nearby feasible lift.
    The first solve uses plain scaling; each further round recenters at the
    lift extracted from the previous one, until a round reaches ``tol``.
    The first solve only supplies a center, so it stops at ``warmup_tol``.
    """
    face = face_problem(problem, U, span)
    h = problem.layout.h
    rounds = []
    best = None
    c = None
    for k in range(max_rounds + 1):
        if log is not None:
            log.write(f"# round {k}\n")
        warmup = k == 0 and max_rounds > 0
        Y, Z, core = solve_face(face, c, max_iter=max_iter, tol=max(tol, warmup_tol) if warmup else tol, log=log)
        err = max(core.primal_feas, core.dual_feas, core.rel_gap)
        if warmup and core.status is SdpStatus.OPTIMAL and err > tol:
            core.status = SdpStatus.MAX_ITER
        rounds.append(
            {
                "round": k,
                "status": core.status.value,
                "primal_obj": core.primal_obj,
                "dual_obj": core.dual_obj,
                "rel_gap": core.rel_gap,
                "iterations": core.iterations,
            }
        )
        rank = (_STATUS_ORDER[core.status], err)
        if best is None or rank < best[0]:
            best = (rank, Y, Z, core)
        if k > 0 and core.status is SdpStatus.OPTIMAL:
            break
        x = dominant_lift(_lift(face, Y), h)
        if x is None:
            break
        c = center(x)
    _, Y, Z, core = best
    X = _lift(face, Y)
    S = _lift(face, Z)
    if span is None:
        C, A, b = problem.sdp_data()
        Af = svec(np.array(A))
        feas = np.linalg.norm(Af @ svec(X) - b) / (1.0 + np.linalg.norm(b))
        dual = lambda: sdp._recover_y(Af, C, S)
        dropped = len(A) - face.A.shape[0]
    else:
        # the face constraints stand in for the full set: report against them
        Af = svec(face.A)
        feas = np.linalg.norm(Af @ svec(Y) - face.b) / (1.0 + np.linalg.norm(face.b))
        Cf = face.G.T @ face.G
        dual = lambda: sdp._recover_y(Af, (Cf + Cf.T) / 2.0, Z)
        dropped = 0
    sol = SdpSolution(
        X=X,
        S=S,
        primal_obj=core.primal_obj,
        dual_obj=core.dual_obj,
        status=core.status,
        iterations=sum(r["iterations"] for r in rounds),
        primal_feas=float(feas),
        dual_feas=core.dual_feas,
        rel_gap=core.rel_gap,
        dropped=dropped,
        form="face",
        history=rounds,
    )
    sol._dual = dual
    return RelaxationResult(solution=sol, face_dim=face.r, rounds=rounds)
