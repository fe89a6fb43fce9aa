import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm, logm

from ro_init.lie import (
    AngleNearPi,
    DegenerateMatrix,
    Pose,
    Twist,
    euler_zyx,
    exp_se,
    first_order_exp,
    is_rotation,
    log_se,
    project_to_rotation,
    rot2,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)


def random_twist(rng, d, scale=1.0):
    k = d * (d - 1) // 2
    return Twist(rng.uniform(-scale, scale, k), rng.uniform(-scale, scale, d))


def test_zero_twist_is_identity():
    for d in (2, 3):
        assert exp_se(Twist.zero(d), 1.0).allclose(Pose.identity(d))


def test_quarter_turn():
    T = exp_se(Twist([np.pi / 2], [0.0, 0.0]), 1.0)
    assert np.allclose(T.rotation, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)
    assert np.allclose(T.translation, 0.0)


@pytest.mark.parametrize("d", [2, 3])
def test_exp_matches_matrix_exponential(d):
    # independent route: scipy's Pade matrix exponential of the wedge
    rng = np.random.default_rng(3)
    for _ in range(50):
        tw = random_twist(rng, d, 2.0)
        dt = rng.uniform(0.0, 1.5)
        assert np.allclose(exp_se(tw, dt).matrix(), expm(dt * tw.wedge()), atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_exp_log_scaled_roundtrip(d):
    rng = np.random.default_rng(4)
    for _ in range(100):
        tw = random_twist(rng, d, 3.0)
        back = log_se(exp_se(tw, 0.1))
        assert np.allclose(back.vector(), 0.1 * tw.vector(), atol=1e-10)


def test_log_identity_is_zero():
    for d in (2, 3):
        assert np.allclose(log_se(Pose.identity(d)).vector(), 0.0)


def test_log_quarter_turn_uses_exact_v_inverse():
    tw = log_se(Pose(rot2(np.pi / 2), [1.0, 2.0]))
    assert tw.angular[0] == pytest.approx(np.pi / 2)
    # V(theta) = [[sin t, -(1 - cos t)], [1 - cos t, sin t]] / t
    t = np.pi / 2
    V = np.array([[np.sin(t), -(1 - np.cos(t))], [1 - np.cos(t), np.sin(t)]]) / t
    assert np.allclose(V @ tw.linear, [1.0, 2.0], atol=1e-14)
    # and against the principal matrix logarithm
    assert np.allclose(tw.wedge(), np.real(logm(Pose(rot2(t), [1.0, 2.0]).matrix())), atol=1e-12)


def test_log_roundtrip_thousand_poses():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(1000):
        d = 2 if i % 2 else 3
        axis = rng.normal(size=3)
        angle = rng.uniform(0.0, 3.0)
        w = [rng.uniform(-3.0, 3.0)] if d == 2 else angle * axis / np.linalg.norm(axis)
        tw = Twist(w, rng.uniform(-5, 5, d))
        T = exp_se(tw)
        worst = max(worst, np.max(np.abs(exp_se(log_se(T)).matrix() - T.matrix())))
        worst = max(worst, np.max(np.abs(log_se(T).vector() - tw.vector())))
    assert worst < 1e-9


def test_so3_log_near_pi_raises():
    R = exp_se(Twist([np.pi - 1e-8, 0.0, 0.0], [0.0, 0.0, 0.0])).rotation
    with pytest.raises(AngleNearPi):
        log_se(Pose(R, np.zeros(3)))


def test_first_order_exp_examples():
    tw = Twist([0.3], [0.2, -0.1])
    assert np.array_equal(first_order_exp(Twist.zero(2), 1.0), np.eye(3))
    assert np.array_equal(first_order_exp(tw, 0.0), np.eye(3))
    err = np.linalg.norm(first_order_exp(tw, 0.1) - exp_se(tw, 0.1).matrix())
    # second-order Taylor remainder of exp at |dt * twist|
    xi = 0.1 * np.linalg.norm(tw.vector())
    assert err <= xi**2 / 2 * np.exp(xi) + 1e-15


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 0.2))
@settings(max_examples=100, deadline=None)
def test_first_order_error_is_second_order(w, vx, vy, dt):
    tw = Twist([w], [vx, vy])
    err = np.linalg.norm(first_order_exp(tw, dt) - exp_se(tw, dt).matrix(), 2)
    xi = dt * np.linalg.norm(tw.wedge(), 2)
    assert err <= xi**2 / 2 * np.exp(xi) + 1e-14


def test_project_to_rotation_examples():
    R = euler_zyx(0.3, -0.2, 1.1)
    assert np.allclose(project_to_rotation(R), R, atol=1e-12)
    assert np.allclose(project_to_rotation(2 * np.eye(2)), np.eye(2))
    M = np.diag([1.0, 1.0, -1.0])
    P = project_to_rotation(M)
    assert is_rotation(P, 1e-12)
    # brute force over sign corrections of the identity
    best = min(
        np.linalg.norm(M - np.diag(s))
        for s in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1])
    )
    assert np.linalg.norm(M - P) == pytest.approx(best, abs=1e-12)
    with pytest.raises(DegenerateMatrix):
        project_to_rotation(np.zeros((3, 3)))


@given(st.lists(finite, min_size=9, max_size=9))
@settings(max_examples=100, deadline=None)
def test_projection_is_proper_and_nearest(entries):
    M = np.array(entries).reshape(3, 3)
    try:
        P = project_to_rotation(M)
    except DegenerateMatrix:
        return
    assert is_rotation(P, 1e-9)
    rng = np.random.default_rng(0)
    for _ in range(5):
        Q = exp_se(Twist(rng.normal(size=3) * 0.1, np.zeros(3))).rotation @ P
        assert np.linalg.norm(M - P) <= np.linalg.norm(M - Q) + 1e-9


def test_pose_compose_inverse():
    rng = np.random.default_rng(6)
    for d in (2, 3):
        A = exp_se(random_twist(rng, d, 2.0))
        B = exp_se(random_twist(rng, d, 2.0))
        assert np.allclose((A @ B).matrix(), A.matrix() @ B.matrix())
        assert (A @ A.inverse()).allclose(Pose.identity(d), atol=1e-12)
