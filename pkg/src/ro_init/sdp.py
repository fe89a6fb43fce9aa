"""Dense primal-dual interior-point solver for single-block SDPs.

Problem form (the dual is written in multiplier form, ``S = C + sum y_i A_i``)::

    primal:  min <C, X>   s.t. <A_i, X> = b_i,  X psd
    dual:    max -b^T y   s.t. C + sum_i y_i A_i psd

Internally everything is solved in the standard form
``min <C,X> s.t. A(X) = b`` / ``max b^T w s.t. C - A^T(w) psd`` (so
``w = -y``) with Nesterov-Todd scaling and a Mehrotra predictor-corrector.
When the affine feasible set has fewer dimensions than there are constraints,
the problem is re-expressed over a basis of that set (the roles of primal and
dual are swapped), after removing any kernel shared by every matrix in it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TextIO

import numpy as np
import scipy.linalg as sla


class SdpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


class InconsistentConstraints(ValueError):
    pass


def svec(M: np.ndarray) -> np.ndarray:
    """Isometric vectorization of symmetric matrices (off-diagonals times sqrt 2)."""
    n = M.shape[-1]
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    return M[..., iu[0], iu[1]] * w


def smat(v: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, 1.0 / math.sqrt(2.0))
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = v * w
    out[..., iu[1], iu[0]] = v * w
    return out


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


@dataclass(frozen=True, eq=False)
class SdpInstance:
    """``min <C,X> s.t. <A_i,X> = b_i, X psd``."""

    C: np.ndarray
    A: tuple
    b: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        A = tuple(np.asarray(a, dtype=float) for a in self.A)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        n = C.shape[0]
        if C.shape != (n, n) or any(a.shape != (n, n) for a in A):
            raise ValueError("cost and constraint matrices must share one square shape")
        if len(A) != b.size:
            raise ValueError(f"{len(A)} constraint matrices but {b.size} right-hand sides")
        for M in (C,) + A:
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-14 * max(1.0, np.max(np.abs(M), initial=0.0)):
                raise ValueError("constraint and cost matrices must be symmetric")
        object.__setattr__(self, "C", (C + C.T) / 2.0)
        object.__setattr__(self, "A", tuple((a + a.T) / 2.0 for a in A))
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return len(self.A)


@dataclass(eq=False)
class SdpSolution:
    X: np.ndarray
    S: np.ndarray
    primal_obj: float
    dual_obj: float
    status: SdpStatus
    iterations: int
    primal_feas: float
    dual_feas: float
    rel_gap: float
    dropped: int = 0
    form: str = "standard"
    history: list = field(default_factory=list)
    _dual: Optional[Callable[[], np.ndarray]] = field(default=None, repr=False)
    _y: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def y(self) -> np.ndarray:
        """Dual multipliers with ``S = C + sum y_i A_i`` and dual objective ``-b^T y``."""
        if self._y is None and self._dual is not None:
            self._y = self._dual()
        return self._y

    @property
    def residuals(self) -> dict:
        return {"primal_feas": self.primal_feas, "dual_feas": self.dual_feas, "rel_gap": self.rel_gap}

    @property
    def ok(self) -> bool:
        return self.status is SdpStatus.OPTIMAL


@dataclass
class _Core:
    X: np.ndarray
    w: np.ndarray
    S: np.ndarray
    status: SdpStatus
    iterations: int
    history: list


def _max_step(L: np.ndarray, D: np.ndarray) -> float:
    """Largest a with L L^T + a D psd."""
    Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    M = Li @ D @ Li.T
    lam = np.linalg.eigvalsh((M + M.T) / 2.0)[0]
    return math.inf if lam >= 0.0 else -1.0 / lam


# residual level below which a best iterate is still usable for extraction
_STALL_ACCURACY = 1e-4


def _ipm(C, A, b, max_iter: int, tol: float, log: Optional[TextIO], ref: Optional[float] = None) -> _Core:
    """Standard-form NT predictor-corrector on independent constraints.

    With ``ref`` set, the relative gap is measured on the objectives of the
    problem this one is dual to, ``ref - dobj`` and ``ref - pobj``.
    """
    n = C.shape[0]
    m = len(b)
    Af = A.reshape(m, n * n)
    c_s = np.linalg.norm(C)
    c_s = c_s if c_s > 0.0 else 1.0
    b_s = max(1.0, np.linalg.norm(b))
    C = C / c_s
    b = b / b_s
    anorm = np.linalg.norm(Af, axis=1) if m else np.zeros(0)
    xi = max(10.0, math.sqrt(n), n * max(((1.0 + np.abs(b)) / (1.0 + anorm)).max(initial=0.0), 0.0))
    eta = max(10.0, math.sqrt(n), anorm.max(initial=0.0), 1.0)
    X = xi * np.eye(n)
    S = eta * np.eye(n)
    w = np.zeros(m)
    I = np.eye(n)
    history = []
    best = None
    status = SdpStatus.MAX_ITER
    it = 0
    stall = 0
    for it in range(max_iter + 1):
        rp = b - Af @ X.ravel()
        Rd = C - S - np.tensordot(w, A, axes=1)
        pobj = float(np.vdot(C, X))
        dobj = float(b @ w)
        pinf = np.linalg.norm(rp) / (1.0 + np.linalg.norm(b))
        dinf = np.linalg.norm(Rd) / (1.0 + np.linalg.norm(C))
        scale = c_s * b_s
        if ref is None:
            gap = abs(pobj - dobj) * scale / (1.0 + scale * (abs(pobj) + abs(dobj)))
        else:
            gap = abs(pobj - dobj) * scale / (1.0 + abs(ref - scale * pobj) + abs(ref - scale * dobj))
        mu = float(np.vdot(X, S)) / n
        err = max(pinf, dinf, gap)
        history.append(
            {"iter": it, "pobj": pobj * c_s * b_s, "dobj": dobj * c_s * b_s, "gap": gap, "pinf": pinf, "dinf": dinf, "mu": mu}
        )
        if best is None or err < best[0]:
            best = (err, X.copy(), w.copy(), S.copy())
        if err <= tol:
            status = SdpStatus.OPTIMAL
            break
        if it == max_iter or stall >= 5:
            break
        try:
            Lx = np.linalg.cholesky(X)
            Ls = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            status = SdpStatus.NUMERICAL_FAILURE
            break
        U, lam, Vt = np.linalg.svd(Ls.T @ Lx)
        if lam[-1] <= 0.0 or not np.all(np.isfinite(lam)):
            status = SdpStatus.NUMERICAL_FAILURE
            break
        rl = np.sqrt(lam)
        G = (Lx @ Vt.T) / rl
        Ginv = (rl[:, None] * Vt) @ sla.solve_triangular(Lx, I, lower=True)
        W = G @ G.T
        WA = np.matmul(np.matmul(W, A), W)
        M = Af @ WA.reshape(m, n * n).T
        M = (M + M.T) / 2.0
        try:
            factor = sla.cho_factor(M)
            solve_schur = lambda r: sla.cho_solve(factor, r)
        except np.linalg.LinAlgError:
            ev, evec = np.linalg.eigh(M)
            keep = ev > 1e-14 * ev[-1]
            inv = np.where(keep, 1.0 / np.where(keep, ev, 1.0), 0.0)
            solve_schur = lambda r: evec @ (inv * (evec.T @ r))
        WRdW = W @ Rd @ W
        base = rp + Af @ WRdW.ravel()

        def direction(D):
            dw = solve_schur(base - Af @ D.ravel())
            dS = Rd - np.tensordot(dw, A, axes=1)
            dX = D - W @ dS @ W
            return (dX + dX.T) / 2.0, dw, (dS + dS.T) / 2.0

        dX, dw, dS = direction(-X)
        ap = min(1.0, _max_step(Lx, dX))
        ad = min(1.0, _max_step(Ls, dS))
        mu_aff = float(np.vdot(X + ap * dX, S + ad * dS)) / n
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3))
        dXt = Ginv @ dX @ Ginv.T
        dSt = G.T @ dS @ G
        H = (dXt @ dSt + dSt @ dXt) / 2.0
        R = sigma * mu * I - np.diag(lam**2) - H
        Rs = 2.0 * R / (lam[:, None] + lam[None, :])
        dX, dw, dS = direction(G @ Rs @ G.T)
        tau = 0.9 + 0.09 * min(ap, ad)
        ap = min(1.0, tau * _max_step(Lx, dX))
        ad = min(1.0, tau * _max_step(Ls, dS))
        X = X + ap * dX
        w = w + ad * dw
        S = S + ad * dS
        X = (X + X.T) / 2.0
        S = (S + S.T) / 2.0
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(S))):
            status = SdpStatus.NUMERICAL_FAILURE
            break
        stall = stall + 1 if max(ap, ad) < 1e-8 else 0
        if log is not None:
            log.write(f"{it:3d} {pobj * c_s * b_s: .12e} {dobj * c_s * b_s: .12e} {gap:.3e} {ap:.3f} {ad:.3f}\n")
    if status is not SdpStatus.OPTIMAL:
        if status is SdpStatus.NUMERICAL_FAILURE and best[0] <= _STALL_ACCURACY:
            # the factorization ran out of precision next to the optimum:
            # the best iterate is usable, so report a stall rather than a failure
            status = SdpStatus.MAX_ITER
        _, X, w, S = best
    return _Core(X * b_s, w * c_s, S * c_s, status, it, history)


def _orthonormalize(Af: np.ndarray, b: np.ndarray, full: bool):
    """Orthonormal rows spanning Af's row space, consistent rhs, and dropped count."""
    U, s, Vt = np.linalg.svd(Af, full_matrices=full)
    if s.size == 0:
        return Vt[:0], np.zeros(0), Vt, Af.shape[0]
    k = int(np.sum(s > 1e-10 * s[0]))
    coef = U[:, :k].T @ b
    resid = b - U[:, :k] @ coef
    if np.linalg.norm(resid) > 1e-8 * (1.0 + np.linalg.norm(b)):
        raise InconsistentConstraints("dependent constraints have incompatible right-hand sides")
    return Vt[:k], coef / s[:k], Vt[k:], Af.shape[0] - k


def solve(
    instance: SdpInstance,
    max_iter: int = 100,
    tol: float = 1e-9,
    log: Optional[TextIO] = None,
    form: str = "auto",
) -> SdpSolution:
    """Solve an equality-form SDP; see the module docstring for conventions."""
    n, m = instance.n, instance.m
    N = svec_dim(n)
    C, b = instance.C, instance.b
    A = np.array(instance.A).reshape(m, n, n)
    Af = svec(A)
    dropped = 0
    big = m > N // 2 and form != "standard"
    rows, coef, null, dropped = _orthonormalize(Af, b, full=big)
    use_moment = form == "moment" or (form == "auto" and null.shape[0] < rows.shape[0])
    if use_moment:
        if null.shape[0] == N - rows.shape[0] and null.shape[0] > 0 or rows.shape[0] == N:
            F = null
        else:
            _, _, F, _ = _orthonormalize(Af, b, full=True)
        Xp = smat(rows.T @ coef, n)
    else:
        A_std, b_std = smat(rows, n), coef
    if use_moment:
        sol = _solve_moment(C, Xp, F, max_iter, tol, log)
        form_used = "moment"
    else:
        core = _ipm(C, A_std, b_std, max_iter, tol, log)
        X, S = core.X, core.S
        sol = SdpSolution(
            X=X,
            S=S,
            primal_obj=float(np.vdot(C, X)),
            dual_obj=float(b_std @ core.w),
            status=core.status,
            iterations=core.iterations,
            primal_feas=0.0,
            dual_feas=0.0,
            rel_gap=0.0,
            history=core.history,
        )
        form_used = "standard"
    sol.form = form_used
    sol.dropped = dropped
    # residuals in the caller's coordinates
    sol.primal_feas = float(np.linalg.norm(Af @ svec(sol.X) - b) / (1.0 + np.linalg.norm(b)))
    sol._dual = lambda: _recover_y(Af, C, sol.S)
    if use_moment:
        resid = F @ svec(C - sol.S)
    else:
        r = svec(C - sol.S)
        resid = r - rows.T @ (rows @ r)
    sol.dual_feas = float(np.linalg.norm(resid) / (1.0 + np.linalg.norm(C)))
    sol.rel_gap = abs(sol.primal_obj - sol.dual_obj) / (1.0 + abs(sol.primal_obj) + abs(sol.dual_obj))
    return sol


def _recover_y(Af: np.ndarray, C: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Least-squares multipliers with C + A^T y = S."""
    y, *_ = np.linalg.lstsq(Af.T, svec(S - C), rcond=None)
    return y


def _common_range(mats: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the sum of ranges of symmetric matrices."""
    K = np.einsum("kij,kjl->il", mats, mats)
    ev, evec = np.linalg.eigh((K + K.T) / 2.0)
    keep = ev > tol * ev[-1]
    return evec[:, keep]


def _solve_moment(C, Xp, F, max_iter, tol, log) -> SdpSolution:
    """Solve over X = Xp + sum_k u_k F_k as the dual of a standard-form SDP."""
    n = C.shape[0]
    if F.shape[0] == 0:
        # the constraints pin X down completely; S = 0 certifies it
        status = SdpStatus.OPTIMAL if min_eig(Xp) >= -1e-9 else SdpStatus.NUMERICAL_FAILURE
        obj = float(np.vdot(C, Xp))
        return SdpSolution(Xp.copy(), np.zeros_like(C), obj, obj, status, 0, 0.0, 0.0, 0.0)
    Fm = smat(F, n)
    U = _common_range(np.concatenate([Xp[None], Fm]))
    r = U.shape[1]
    Cr = U.T @ C @ U
    Xpr = U.T @ Xp @ U
    Fr = np.matmul(np.matmul(U.T, Fm), U)
    g = np.einsum("kij,ij->k", Fr, Cr)
    # anything of Xp outside the common range is rounding noise; drop it consistently
    ref = float(np.vdot(Cr, Xpr))
    core = _ipm(Xpr, Fr, g, max_iter, tol, log, ref=ref)
    Y = Xpr - np.tensordot(core.w, Fr, axes=1)
    X = U @ Y @ U.T
    S = U @ core.X @ U.T
    X = (X + X.T) / 2.0
    S = (S + S.T) / 2.0
    return SdpSolution(
        X=X,
        S=S,
        primal_obj=float(np.vdot(C, X)),
        dual_obj=ref - float(np.vdot(Xpr, core.X)),
        status=core.status,
        iterations=core.iterations,
        primal_feas=0.0,
        dual_feas=0.0,
        rel_gap=0.0,
        history=[dict(h, reduced_dim=r) for h in core.history],
    )


def min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((M + M.T) / 2.0)[0])


def instance_from_lists(C, A_list: Sequence[np.ndarray], b) -> SdpInstance:
    return SdpInstance(np.asarray(C), tuple(A_list), np.asarray(b))
