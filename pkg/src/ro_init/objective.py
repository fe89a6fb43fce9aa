"""Direct evaluation of the range-only MAP objectives."""

from __future__ import annotations

import numpy as np

from .lie import Pose, Twist, exp_se, first_order_exp
from .scenario import Scenario

EXACT = "exact"
FIRST_ORDER = "first_order"


def cost_weight(scenario: Scenario, n_meas: int) -> float:
    """1 / (sigma_r^2 N_r); noiseless scenarios fall back to unit variance."""
    sigma = scenario.sigma_r if scenario.sigma_r > 0.0 else 1.0
    return 1.0 / (sigma**2 * max(n_meas, 1))


def tag_world(scenario: Scenario, pose: Pose, twist: Twist | None, k: int, l: int, model: str = EXACT) -> np.ndarray:
    """World position of tag ``l`` at step ``k`` under the constant-velocity model."""
    c = scenario.step_time(k)
    u = scenario.tags[l]
    if twist is None or c == 0.0:
        return pose.apply(u)
    if model == EXACT:
        return (pose @ exp_se(twist, c)).apply(u)
    if model == FIRST_ORDER:
        d = pose.dim
        body = first_order_exp(twist, c) @ np.append(u, 1.0)
        return pose.apply(body[:d])
    raise ValueError(f"unknown motion model {model!r}")


def residuals(scenario: Scenario, measurements, pose: Pose, twist: Twist | None = None, model: str = EXACT) -> np.ndarray:
    out = np.empty(len(measurements))
    for i, m in enumerate(measurements):
        diff = scenario.anchors[m.j] - tag_world(scenario, pose, twist, m.k, m.l, model)
        out[i] = m.value - diff @ diff
    return out


def map_cost(scenario: Scenario, measurements, pose: Pose, twist: Twist | None = None, model: str = EXACT) -> float:
    e = residuals(scenario, measurements, pose, twist, model)
    return float(cost_weight(scenario, len(e)) * (e @ e))
