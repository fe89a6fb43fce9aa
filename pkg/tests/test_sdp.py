import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ro_init.eig import sym_eig
from ro_init.extraction import feasible_lift
from ro_init.local import lm_solve, state_from_truth
from ro_init.qcqp import build
from ro_init.redundancy import attach, cached_basis
from ro_init.relaxation import solve_relaxation
from ro_init.scenario import make_trial, preset
from ro_init.sdp import SdpInstance, SdpStatus, min_eig, smat, solve, svec, svec_dim


def _random_instance(rng, n, m):
    G = rng.normal(size=(n, n))
    C = G @ G.T + 0.1 * np.eye(n)  # positive definite cost keeps the problem bounded
    H = rng.normal(size=(n, n))
    X0 = H @ H.T + np.eye(n)
    A = []
    for _ in range(m):
        B = rng.normal(size=(n, n))
        A.append((B + B.T) / 2)
    b = np.array([np.vdot(a, X0) for a in A])
    return SdpInstance(C, tuple(A), b)


def test_svec_roundtrip_and_inner_product():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 5))
    A = A + A.T
    B = rng.normal(size=(5, 5))
    B = B + B.T
    assert svec(A).shape == (svec_dim(5),)
    assert np.allclose(smat(svec(A), 5), A)
    assert svec(A) @ svec(B) == pytest.approx(np.vdot(A, B))


def test_scalar_problem():
    sol = solve(SdpInstance(np.eye(1), (np.eye(1),), np.array([2.0])))
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.X[0, 0] == pytest.approx(2.0, abs=1e-7)
    assert sol.primal_obj == pytest.approx(2.0, abs=1e-7)


def test_trace_problem():
    sol = solve(SdpInstance(np.diag([1.0, 2.0]), (np.eye(2),), np.array([1.0])))
    assert sol.status is SdpStatus.OPTIMAL
    assert np.allclose(sol.X, np.diag([1.0, 0.0]), atol=1e-6)
    assert sol.primal_obj == pytest.approx(1.0, abs=1e-7)
    assert sol.dual_obj == pytest.approx(1.0, abs=1e-7)


def test_rejects_inconsistent_shapes():
    with pytest.raises(ValueError):
        SdpInstance(np.eye(2), (np.eye(3),), np.array([1.0]))
    with pytest.raises(ValueError):
        SdpInstance(np.eye(2), (np.eye(2),), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        SdpInstance(np.array([[1.0, 2.0], [0.0, 1.0]]), (), np.array([]))


@pytest.mark.parametrize("seed", range(3))
def test_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    inst = _random_instance(rng, 6, 5)
    ours = solve(inst)
    X = cp.Variable((6, 6), PSD=True)
    cons = [cp.trace(a @ X) == bi for a, bi in zip(inst.A, inst.b)]
    prob = cp.Problem(cp.Minimize(cp.trace(inst.C @ X)), cons)
    prob.solve(solver=cp.CLARABEL)
    assert ours.status is SdpStatus.OPTIMAL
    assert ours.primal_obj == pytest.approx(prob.value, rel=1e-5, abs=1e-6)


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 6))
@settings(max_examples=25, deadline=None)
def test_solution_invariants(seed, n, m):
    rng = np.random.default_rng(seed)
    inst = _random_instance(rng, n, m)
    sol = solve(inst)
    assert sol.status is SdpStatus.OPTIMAL
    scale = 1.0 + np.linalg.norm(inst.C) * np.linalg.norm(sol.X)
    assert min_eig(sol.X) >= -1e-8 * scale
    assert min_eig(sol.S) >= -1e-8 * scale
    assert sol.primal_feas < 1e-7
    assert sol.rel_gap < 1e-7
    assert abs(np.vdot(sol.X, sol.S)) < 1e-6 * scale
    # dual multipliers reproduce the slack
    S = inst.C + np.tensordot(sol.y, np.array(inst.A), axes=1)
    assert np.allclose(S, sol.S, atol=1e-6 * (1 + np.linalg.norm(inst.C)))


def test_static2d_noiseless_relaxation_matches_truth_cost():
    sc = make_trial(preset("static2d"), 2)
    p = build(sc)
    basis, _ = cached_basis(sc, p.layout)
    p = attach(p, basis)
    # the raw instance has a zero-cost, non strictly complementary optimum;
    # the face restriction used in production removes that degeneracy
    C, A, b = p.sdp_data()
    raw = solve(SdpInstance(C, tuple(A), b))
    assert raw.primal_obj == pytest.approx(0.0, abs=1e-6)
    sol = solve_relaxation(p, lambda x: feasible_lift(p.layout, sc, x)).solution
    lm = lm_solve(sc, sc.measurements, state_from_truth(sc))
    assert sol.status is SdpStatus.OPTIMAL
    assert lm.final_cost < 1e-16
    assert sol.primal_obj == pytest.approx(lm.final_cost, abs=1e-6)


def test_sym_eig_examples():
    ev, V = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(ev, [3.0, 1.0])
    assert abs(V[:, 0] @ [1, 1]) == pytest.approx(np.sqrt(2))
    ev, _ = sym_eig(np.diag([0.0, 5.0, -1.0]))
    assert np.allclose(ev, [5.0, 0.0, -1.0])
    with pytest.raises(ValueError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


@given(st.integers(0, 10_000), st.integers(1, 12))
@settings(max_examples=40, deadline=None)
def test_sym_eig_reconstruction(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    M = (B + B.T) / 2
    ev, V = sym_eig(M)
    assert np.all(np.diff(ev) <= 0)
    assert np.allclose(V.T @ V, np.eye(n), atol=1e-12)
    assert np.allclose(V @ np.diag(ev) @ V.T, M, atol=1e-12)
    # independent route: LAPACK
    assert np.allclose(ev, np.linalg.eigvalsh(M)[::-1], atol=1e-12)
