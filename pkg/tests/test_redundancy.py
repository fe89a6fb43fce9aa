import numpy as np
import pytest

from ro_init.qcqp import LEVER_ARM, Variant, build, first_order_lift, lift_state, make_layout
from ro_init.redundancy import (
    InsufficientSamples,
    LayoutMismatch,
    attach,
    cached_basis,
    clear_memo,
    discover_constraints,
    discover_face,
    load_basis,
    memo_face,
    sample_lift,
    save_basis,
)
from ro_init.scenario import make_trial, preset
from ro_init.sdp import svec_dim


def _sym(n, pairs):
    M = np.zeros((n, n))
    for c, i, j in pairs:
        M[i, j] += c / 2
        M[j, i] += c / 2
    return M


@pytest.fixture(scope="module")
def static2d():
    sc = make_trial(preset("static2d"), 0)
    return sc, discover_constraints(sc)


def test_rotation_relations_in_span(static2d):
    sc, basis = static2d
    lay = make_layout(sc)
    r = lay.index("R")
    h = lay.h
    n = lay.n
    # h * (r1 - r4) and h * (r2 + r3) vanish on planar rotations
    A = _sym(n, [(1.0, h, r), (-1.0, h, r + 3)])
    B = _sym(n, [(1.0, h, r + 1), (1.0, h, r + 2)])
    assert basis.projection_residual(A) < 1e-8
    assert basis.projection_residual(B) < 1e-8


def test_lever_arm_relation_in_span(static2d):
    sc, basis = static2d
    p = build(sc)
    for c in p.constraints:
        if c.kind == LEVER_ARM:
            assert basis.projection_residual(c.matrix) < 1e-8


def test_non_relation_is_outside_span(static2d):
    sc, basis = static2d
    lay = make_layout(sc)
    M = np.zeros((lay.n, lay.n))
    M[lay.h, lay.h] = 1.0  # h^2 = 1 is not homogeneous
    assert basis.projection_residual(M) > 0.5


def test_basis_annihilates_fresh_lifts(static2d):
    sc, basis = static2d
    lay = make_layout(sc)
    rng = np.random.default_rng(12)
    for _ in range(50):
        x = sample_lift(lay, sc, rng)
        assert max(abs(x @ M @ x) for M in basis.matrices) < 1e-8 * (x @ x)


def test_basis_is_orthonormal(static2d):
    _, basis = static2d
    V = basis.vectors()
    assert np.allclose(V @ V.T, np.eye(basis.dim), atol=1e-10)
    assert basis.dim + basis.moment_span.shape[0] == svec_dim(basis.n)


@pytest.mark.parametrize(
    "name, dim",
    [("static2d", 66), ("static3d", 215), ("dynamic2d", 940), ("dynamic25d", 1527)],
)
def test_frozen_dimensions(name, dim):
    sc = make_trial(preset(name), 0)
    basis, _ = cached_basis(sc, make_layout(sc))
    assert basis.dim == dim


def test_truth_satisfies_attached_constraints():
    for name in ("static2d", "dynamic2d"):
        template = preset(name, 0.05)
        sc0 = make_trial(template, 0)
        basis, _ = cached_basis(sc0, make_layout(sc0))
        worst = 0.0
        for seed in range(100):
            sc = make_trial(template, seed)
            p = attach(build(sc), basis)
            t = sc.truth
            lay = p.layout
            if lay.variant is Variant.STATIC:
                x = lift_state(lay, sc, t.initial_pose)
            else:
                x = first_order_lift(lay, sc, t.initial_pose, t.twist)
            worst = max(worst, np.max(np.abs(p.residuals(x))))
        assert worst < 1e-8


def test_attach_empty_and_idempotent(static2d):
    sc, basis = static2d
    p = build(sc)
    empty = type(basis)(basis.layout_key, basis.n, (), basis.singular_values, basis.tol, basis.moment_span)
    same = attach(p, empty)
    assert len(same.constraints) == len(p.constraints)
    once = attach(p, basis)
    twice = attach(once, basis)
    assert len(once.constraints) == len(twice.constraints) == basis.dim


def test_attach_rejects_other_layout(static2d):
    _, basis = static2d
    with pytest.raises(LayoutMismatch):
        attach(build(make_trial(preset("static3d"), 0)), basis)


def test_too_few_samples():
    sc = make_trial(preset("static2d"), 0)
    with pytest.raises(InsufficientSamples):
        discover_constraints(sc, n_samples=10)


def test_save_load_roundtrip(static2d, tmp_path):
    _, basis = static2d
    path = tmp_path / "b.txt"
    save_basis(basis, path)
    back = load_basis(path)
    assert back.layout_key == basis.layout_key and back.dim == basis.dim
    # the bases may differ by a rotation; compare the projectors
    P = basis.vectors().T @ basis.vectors()
    Q = back.vectors().T @ back.vectors()
    assert np.allclose(P, Q, atol=1e-10)


def test_memo_reuses_basis():
    clear_memo()
    sc = make_trial(preset("static2d"), 0)
    lay = make_layout(sc)
    a, _ = cached_basis(sc, lay)
    b, reused = cached_basis(sc, lay)
    assert reused and a is b


def test_face_covers_exact_lifts():
    sc = make_trial(preset("dynamic2d"), 0)
    lay = make_layout(sc, exact=True)
    clear_memo()
    face, reused = memo_face(sc, lay)
    assert not reused
    assert memo_face(sc, lay)[1]
    assert face.r < lay.n and face.dim > 0
    rng = np.random.default_rng(99)
    for _ in range(10):
        x = sample_lift(lay, sc, rng)
        assert np.linalg.norm(x - face.U @ (face.U.T @ x)) < 1e-9 * np.linalg.norm(x)


def test_face_static_matches_full_basis(static2d):
    sc, basis = static2d
    face = discover_face(sc, make_layout(sc))
    # on a full-dimensional face the counts agree
    if face.r == basis.n:
        assert face.dim == basis.dim
    else:
        assert face.dim <= basis.dim
