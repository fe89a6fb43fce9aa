import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ro_init.lie import Pose, Twist, exp_se, rot2
from ro_init.local import random_init
from ro_init.objective import EXACT, FIRST_ORDER, map_cost
from ro_init.qcqp import (
    LEVER_ARM,
    MOTION,
    ModeMismatch,
    Variant,
    build,
    build_dynamic,
    build_dynamic_exact,
    build_static,
    first_order_lift,
    lift_state,
    make_layout,
)
from ro_init.scenario import Measurement, Mode, Scenario, make_trial, preset

PRESETS = ["static2d", "static3d", "dynamic2d", "dynamic25d"]


def _random_state(sc, rng):
    st_ = random_init(sc, rng)
    return st_.pose, st_.twist


def test_lift_identity_pose():
    sc = make_trial(preset("static2d"), 0)
    lay = make_layout(sc)
    x = lift_state(lay, sc, Pose.identity(2))
    assert np.allclose(x[lay.slot("pt0")], [0.0, 0.095])
    assert x[lay.index("z0")] == pytest.approx(0.009025)
    assert x[lay.h] == 1.0


def test_lift_quarter_turn_against_matrix_product():
    sc = make_trial(preset("static2d"), 0)
    lay = make_layout(sc)
    R = rot2(np.pi / 2)
    x = lift_state(lay, sc, Pose(R, [1.0, 0.0]))
    # homogeneous matrix product [R p; 0 1] [u; 1]
    T = np.eye(3)
    T[:2, :2], T[:2, 2] = R, [1.0, 0.0]
    expected = (T @ [0.0, 0.095, 1.0])[:2]
    assert np.allclose(x[lay.slot("pt0")], expected, atol=1e-15)
    assert np.allclose(expected, [0.905, 0.0], atol=1e-15)  # frozen value
    assert x[lay.index("z0")] == pytest.approx(0.905**2)


@pytest.mark.parametrize("name", PRESETS)
def test_h_is_one(name):
    sc = make_trial(preset(name), 1)
    lay = make_layout(sc)
    rng = np.random.default_rng(0)
    for _ in range(5):
        pose, tw = _random_state(sc, rng)
        assert lift_state(lay, sc, pose, tw)[lay.h] == 1.0


def test_static2d_counts():
    p = build_static(make_trial(preset("static2d"), 0))
    assert p.n == 13
    assert p.counts() == {"lever-arm": 4, "norm-link": 2, "orthogonality": 6, "handedness": 2}
    assert np.count_nonzero(p.A0) == 1  # the homogenization constraint


def test_dynamic_layout_sizes():
    assert build_dynamic(make_trial(preset("dynamic2d"), 0)).n == (2 + 1) * 12 + 4 + 2 + 1 + 2 + 1
    assert build_dynamic(make_trial(preset("dynamic25d"), 0)).n == (3 + 1) * 12 + 2 + 3 + 1 + 3 + 1


def _short_window():
    anchors = [[0.0, 0.0], [3.0, 0.5], [1.0, 2.5]]
    tags = [[0.0, 0.095], [0.0, -0.095]]
    meas = [Measurement(k, j, l, 1.0) for k in (1, 2) for j in range(3) for l in range(2)]
    return Scenario(2, Mode.DYNAMIC, anchors, tags, 0.0, t_v=0.1, dt_r=0.1, measurements=meas)


def test_exact_layout_count_two_steps():
    sc = _short_window()
    lay = make_layout(sc, exact=True)
    n_lifted = len(lay.lifted)
    assert n_lifted == 4
    assert lay.n == 3 * n_lifted + 2 * (4 + 2) + (4 + 2) + 1


@pytest.mark.parametrize("name", PRESETS)
def test_noiseless_cost_zero_at_truth(name):
    sc = make_trial(preset(name), 3)
    p = build(sc)
    t = sc.truth
    # the cost only sees lifted tag positions, which the default lift takes
    # from the exact motion, so it vanishes for every variant
    x = lift_state(p.layout, sc, t.initial_pose, t.twist if sc.mode.is_dynamic else None)
    assert abs(x @ p.Q @ x) < 1e-14 * np.linalg.norm(p.Q) * (x @ x)
    assert np.linalg.norm(p.cost_rows @ x) < 1e-12


@pytest.mark.parametrize("name", PRESETS)
def test_cost_matches_direct_evaluation(name):
    sc = make_trial(preset(name, 0.05), 4)
    p = build(sc)
    rng = np.random.default_rng(1)
    for _ in range(20):
        pose, tw = _random_state(sc, rng)
        if sc.mode.is_dynamic:
            x = first_order_lift(p.layout, sc, pose, tw)
            direct = map_cost(sc, sc.measurements, pose, tw, FIRST_ORDER)
        else:
            x = lift_state(p.layout, sc, pose)
            direct = map_cost(sc, sc.measurements, pose)
        assert x @ p.Q @ x == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_exact_cost_matches_direct_evaluation():
    sc = make_trial(preset("dynamic2d", 0.05), 4)
    p = build_dynamic_exact(sc)
    rng = np.random.default_rng(2)
    for _ in range(20):
        pose, tw = _random_state(sc, rng)
        x = lift_state(p.layout, sc, pose, tw)
        assert x @ p.Q @ x == pytest.approx(map_cost(sc, sc.measurements, pose, tw, EXACT), rel=1e-10)


@pytest.mark.parametrize("name", ["static2d", "static3d"])
def test_static_feasibility(name):
    sc = make_trial(preset(name), 5)
    p = build(sc)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        pose, _ = _random_state(sc, rng)
        x = lift_state(p.layout, sc, pose)
        worst = max(worst, np.max(np.abs(p.residuals(x))))
        assert x @ p.A0 @ x == pytest.approx(1.0)
    assert worst < 1e-10


@pytest.mark.parametrize("name", ["dynamic2d", "dynamic25d"])
def test_first_order_lifts_are_feasible(name):
    sc = make_trial(preset(name), 5)
    p = build(sc)
    rng = np.random.default_rng(4)
    for _ in range(100):
        pose, tw = _random_state(sc, rng)
        x = first_order_lift(p.layout, sc, pose, tw)
        assert np.max(np.abs(p.residuals(x))) < 1e-10


def test_zero_twist_reduces_to_static_lever_arm():
    sc = make_trial(preset("dynamic2d"), 6)
    p = build_dynamic(sc)
    rng = np.random.default_rng(5)
    pose, _ = _random_state(sc, rng)
    x = lift_state(p.layout, sc, pose, Twist.zero(2))
    assert np.max(np.abs(p.residuals(x))) < 1e-12


def test_motion_residual_within_taylor_bound():
    sc = make_trial(preset("dynamic2d"), 7)
    p = build_dynamic(sc)
    lay = p.layout
    rng = np.random.default_rng(6)
    for _ in range(50):
        pose, _ = _random_state(sc, rng)
        tw = Twist([rng.choice([-0.3, 0.3])], rng.uniform(-1, 1, 2))
        x = lift_state(lay, sc, pose, tw)  # exact motion
        xi = np.linalg.norm(tw.wedge(), 2)
        cons = [c for c in p.constraints if c.kind in (MOTION, LEVER_ARM)]
        # two constraints (x and y) per lifted epoch, in layout order
        for e, (k, l) in enumerate(lay.lifted):
            c = lay.step_time(k)
            u = np.append(lay.tags[l], 1.0)
            bound = (c * xi) ** 2 / 2 * np.exp(c * xi) * np.linalg.norm(u)
            res = [x @ cons[2 * e + a].matrix @ x for a in range(2)]
            assert np.linalg.norm(res) <= bound + 1e-12


def test_exact_builder_truth_feasible_and_step_slot():
    sc = make_trial(preset("dynamic2d"), 8)
    p = build_dynamic_exact(sc)
    lay = p.layout
    t = sc.truth
    x = lift_state(lay, sc, t.initial_pose, t.twist)
    assert np.max(np.abs(p.residuals(x))) < 1e-10
    dT = exp_se(t.twist, sc.dt_r)
    assert np.allclose(x[lay.slot("dR")], dT.rotation.flatten(order="F"), atol=1e-15)
    assert np.allclose(x[lay.slot("dp")], dT.translation, atol=1e-15)
    # the first-order builder is not exact on the same truth
    q = build_dynamic(sc)
    xq = lift_state(q.layout, sc, t.initial_pose, t.twist)
    assert np.max(np.abs(q.residuals(xq))) > 1e-6


def test_mode_mismatch():
    with pytest.raises(ModeMismatch):
        build_static(make_trial(preset("dynamic2d"), 0))
    with pytest.raises(ModeMismatch):
        build_dynamic_exact(make_trial(preset("dynamic25d"), 0))
    sc = make_trial(preset("static2d"), 0)
    with pytest.raises(ModeMismatch):
        lift_state(make_layout(sc), sc, Pose.identity(3))


def test_layout_key_stable_and_sensitive():
    a = make_layout(make_trial(preset("dynamic2d"), 0))
    b = make_layout(make_trial(preset("dynamic2d"), 9))
    assert a.key() == b.key()  # schedule does not depend on the draw
    c = make_layout(make_trial(preset("dynamic2d"), 0), exact=True)
    assert c.key() != a.key() and c.variant is Variant.DYNAMIC_EXACT


@given(st.floats(-np.pi, np.pi), st.floats(-4, 4), st.floats(-4, 4))
@settings(max_examples=50, deadline=None)
def test_static_lift_property(theta, px, py):
    sc = make_trial(preset("static2d", 0.01), 0)
    p = build_static(sc)
    pose = Pose(rot2(theta), [px, py])
    x = lift_state(p.layout, sc, pose)
    assert np.max(np.abs(p.residuals(x))) < 1e-10
    assert x @ p.Q @ x == pytest.approx(map_cost(sc, sc.measurements, pose), rel=1e-9, abs=1e-12)
