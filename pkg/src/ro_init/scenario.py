"""Anchors, tags, motion windows and squared-range measurement simulation."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lie import Pose, Twist, euler_zyx, exp_se, rot2, rotz

SCHEMA_VERSION = 1


class Mode(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    DYNAMIC25 = "dynamic25"

    @property
    def is_dynamic(self) -> bool:
        return self is not Mode.STATIC


class ScenarioError(ValueError):
    """A scenario violates one of its structural invariants."""


class SamplerExhausted(RuntimeError):
    pass


class ParseError(ValueError):
    pass


class SchemaVersionMismatch(ParseError):
    pass


@dataclass(frozen=True)
class Measurement:
    """Squared range between anchor ``j`` and tag ``l`` at time step ``k`` (1-based)."""

    k: int
    j: int
    l: int
    value: float


@dataclass(frozen=True, eq=False)
class GroundTruth:
    initial_pose: Pose
    twist: Twist
    poses_at_steps: tuple

    @classmethod
    def from_motion(cls, pose: Pose, twist: Twist, n_steps: int, dt_r: float) -> "GroundTruth":
        steps = tuple(pose @ exp_se(twist, (k - 1) * dt_r) for k in range(1, n_steps + 1))
        return cls(pose, twist, steps)


@dataclass(frozen=True, eq=False)
class Scenario:
    dimension: int
    mode: Mode
    anchors: np.ndarray
    tags: np.ndarray
    sigma_r: float
    t_v: float = 0.0
    dt_r: float = 0.1
    seed: int = 0
    measurements: tuple = ()
    truth: Optional[GroundTruth] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        mode = Mode(self.mode)
        object.__setattr__(self, "mode", mode)
        anchors = np.array(self.anchors, dtype=float)
        tags = np.array(self.tags, dtype=float)
        anchors.setflags(write=False)
        tags.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "measurements", tuple(self.measurements))
        d = self.dimension
        if d not in (2, 3):
            raise ScenarioError(f"dimension must be 2 or 3, got {d}")
        if mode is Mode.DYNAMIC25 and d != 3:
            raise ScenarioError("dynamic25 scenarios are three dimensional")
        if mode is Mode.DYNAMIC and d != 2:
            raise ScenarioError("full dynamic mode is only supported in 2D")
        if anchors.ndim != 2 or anchors.shape[1] != d:
            raise ScenarioError(f"anchors must be N x {d}, got {anchors.shape}")
        if tags.ndim != 2 or tags.shape[1] != d:
            raise ScenarioError(f"tags must be N x {d}, got {tags.shape}")
        min_anchors = 3 if d == 2 else 4
        if len(anchors) < min_anchors:
            raise ScenarioError(f"need at least {min_anchors} anchors, got {len(anchors)}")
        if not anchors_well_spread(anchors):
            raise ScenarioError("anchors are collinear")
        min_tags = 3 if (d == 3 and mode is Mode.STATIC) else 2
        if len(tags) < min_tags:
            raise ScenarioError(f"need at least {min_tags} tags, got {len(tags)}")
        if not (self.sigma_r >= 0.0 and math.isfinite(self.sigma_r)):
            raise ScenarioError(f"sigma_r must be finite and nonnegative, got {self.sigma_r}")
        if mode.is_dynamic and not (self.dt_r > 0.0 and self.t_v >= 0.0):
            raise ScenarioError("dynamic scenarios need t_v >= 0 and dt_r > 0")
        K = self.n_steps
        for m in self.measurements:
            if not (1 <= m.k <= K and 0 <= m.j < len(anchors) and 0 <= m.l < len(tags)):
                raise ScenarioError(f"measurement {m} out of range")

    @property
    def n_steps(self) -> int:
        if self.mode is Mode.STATIC:
            return 1
        return int(math.floor(self.t_v / self.dt_r + 1e-9)) + 1

    def step_time(self, k: int) -> float:
        """c_k = (k - 1) * dt_r."""
        return (k - 1) * self.dt_r if self.mode.is_dynamic else 0.0

    def with_measurements(self, measurements, truth: Optional[GroundTruth] = None) -> "Scenario":
        return replace(self, measurements=tuple(measurements), truth=truth if truth else self.truth)


def anchors_well_spread(anchors: np.ndarray, tol: float = 1e-9) -> bool:
    centered = anchors - anchors.mean(axis=0)
    return bool(np.linalg.svd(centered, compute_uv=False)[-1] > tol)


@dataclass(frozen=True)
class SamplerConfig:
    dimension: int
    mode: Mode
    n_anchors: int
    tags: tuple
    sigma_r: float = 0.0
    t_v: float = 0.0
    dt_r: float = 0.1
    extent: float = 4.0
    max_angular: float = 0.3
    max_linear: float = 1.0

    def with_sigma(self, sigma_r: float) -> "SamplerConfig":
        return replace(self, sigma_r=float(sigma_r))


_TAGS_2D = ((0.0, 0.095), (0.0, -0.095))
_TAGS_3D = ((0.01, 0.41, 0.0), (0.0, -0.43, 0.01), (-0.57, 0.02, 0.0))

PRESETS = {
    "static2d": SamplerConfig(2, Mode.STATIC, 3, _TAGS_2D),
    "static3d": SamplerConfig(3, Mode.STATIC, 4, _TAGS_3D),
    "dynamic2d": SamplerConfig(2, Mode.DYNAMIC, 3, _TAGS_2D, t_v=1.1, dt_r=0.1),
    "dynamic25d": SamplerConfig(
        3, Mode.DYNAMIC25, 4, tuple(t + (0.0,) for t in _TAGS_2D), t_v=1.1, dt_r=0.1
    ),
}


def preset(name: str, sigma_r: float = 0.0) -> SamplerConfig:
    try:
        return PRESETS[name].with_sigma(sigma_r)
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def sample_pose(config: SamplerConfig, rng: np.random.Generator) -> Pose:
    d, a = config.dimension, config.extent
    p = rng.uniform(-a, a, size=d)
    if d == 2:
        R = rot2(rng.uniform(-np.pi, np.pi))
    elif config.mode is Mode.DYNAMIC25:
        R = rotz(rng.uniform(-np.pi, np.pi))
    else:
        R = euler_zyx(*rng.uniform(-np.pi, np.pi, size=3))
    return Pose(R, p)


def sample_twist(config: SamplerConfig, rng: np.random.Generator) -> Twist:
    d = config.dimension
    if not config.mode.is_dynamic:
        return Twist.zero(d)
    w_max, v_max = config.max_angular, config.max_linear
    if config.mode is Mode.DYNAMIC25:
        w = np.array([0.0, 0.0, rng.uniform(-w_max, w_max)])
    else:
        w = rng.uniform(-w_max, w_max, size=d * (d - 1) // 2)
    return Twist(w, rng.uniform(-v_max, v_max, size=d))


def sample_scenario(config: SamplerConfig, rng_seed: int) -> tuple[Scenario, GroundTruth]:
    """Draw anchors, an initial pose and (for dynamic modes) a twist."""
    rng = np.random.default_rng(rng_seed)
    d, a = config.dimension, config.extent
    for _ in range(100):
        anchors = rng.uniform(-a, a, size=(config.n_anchors, d))
        if anchors_well_spread(anchors):
            break
    else:
        raise SamplerExhausted("no noncollinear anchor set after 100 draws")
    pose = sample_pose(config, rng)
    twist = sample_twist(config, rng)
    meta = {}
    if d == 3 and config.mode is Mode.STATIC:
        meta["rotation_sampling"] = "euler_zyx_uniform"
    scenario = Scenario(
        dimension=d,
        mode=config.mode,
        anchors=anchors,
        tags=np.array(config.tags),
        sigma_r=config.sigma_r,
        t_v=config.t_v,
        dt_r=config.dt_r,
        seed=int(rng_seed),
        metadata=meta,
    )
    truth = GroundTruth.from_motion(pose, twist, scenario.n_steps, config.dt_r)
    return scenario, truth


def schedule(n_steps: int, n_anchors: int, n_tags: int) -> list[tuple[int, int, int]]:
    """One (k, anchor, tag) triple per step.

    Anchors cycle every step and tags alternate; after each full lcm cycle the
    anchor sequence is shifted by one so that all anchor/tag pairs get visited.
    """
    period = math.lcm(n_anchors, n_tags)
    return [
        (i + 1, (i + i // period) % n_anchors, i % n_tags) for i in range(n_steps)
    ]


def simulate_measurements(scenario: Scenario, truth: GroundTruth, rng_seed: int) -> list[Measurement]:
    rng = np.random.default_rng(rng_seed)
    if len(truth.poses_at_steps) != scenario.n_steps:
        raise ScenarioError("ground truth does not match the scenario window")
    if scenario.mode is Mode.STATIC:
        triples = [(1, j, l) for j in range(len(scenario.anchors)) for l in range(len(scenario.tags))]
    else:
        triples = schedule(scenario.n_steps, len(scenario.anchors), len(scenario.tags))
    noise = rng.standard_normal(len(triples))
    out = []
    for (k, j, l), eta in zip(triples, noise):
        tag_world = truth.poses_at_steps[k - 1].apply(scenario.tags[l])
        diff = scenario.anchors[j] - tag_world
        out.append(Measurement(k, j, l, float(diff @ diff + scenario.sigma_r * eta)))
    return out


def make_trial(config: SamplerConfig, seed: int) -> Scenario:
    """Sample a scenario and attach its ground truth and measurements."""
    scenario, truth = sample_scenario(config, seed)
    meas = simulate_measurements(scenario, truth, seed + 1)
    return scenario.with_measurements(meas, truth)


# -- persistence ---------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialize non-finite number {x}")
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps_json(doc) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _fmt(doc) + "\n"


def scenario_to_dict(scenario: Scenario) -> dict:
    doc = {
        "version": SCHEMA_VERSION,
        "dimension": scenario.dimension,
        "mode": scenario.mode.value,
        "anchors": scenario.anchors.tolist(),
        "tags": scenario.tags.tolist(),
        "sigma_r": float(scenario.sigma_r),
        "window": {"t_v": float(scenario.t_v), "dt_r": float(scenario.dt_r)},
        "seed": int(scenario.seed),
        "measurements": [{"k": m.k, "j": m.j, "l": m.l, "value": float(m.value)} for m in scenario.measurements],
    }
    if scenario.truth is not None:
        t = scenario.truth
        doc["ground_truth"] = {
            "pose": {"R": t.initial_pose.rotation.tolist(), "p": t.initial_pose.translation.tolist()},
            "twist": {"w": t.twist.angular.tolist(), "v": t.twist.linear.tolist()},
        }
    if scenario.metadata:
        doc["metadata"] = dict(scenario.metadata)
    return doc


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dumps_json(scenario_to_dict(scenario)))


def _require(doc: dict, key: str, where: str = ""):
    if not isinstance(doc, dict) or key not in doc:
        raise ParseError(f"missing field '{where}{key}'")
    return doc[key]


def scenario_from_dict(doc: dict) -> Scenario:
    version = _require(doc, "version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"scenario schema version {version!r}, expected {SCHEMA_VERSION}")
    try:
        dimension = int(_require(doc, "dimension"))
        mode = Mode(_require(doc, "mode"))
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"field 'mode': {exc}") from None
    window = _require(doc, "window")
    meas = []
    for i, m in enumerate(_require(doc, "measurements")):
        where = f"measurements[{i}]."
        meas.append(
            Measurement(
                int(_require(m, "k", where)),
                int(_require(m, "j", where)),
                int(_require(m, "l", where)),
                float(_require(m, "value", where)),
            )
        )
    scenario = Scenario(
        dimension=dimension,
        mode=mode,
        anchors=np.array(_require(doc, "anchors"), dtype=float),
        tags=np.array(_require(doc, "tags"), dtype=float),
        sigma_r=float(_require(doc, "sigma_r")),
        t_v=float(_require(window, "t_v", "window.")),
        dt_r=float(_require(window, "dt_r", "window.")),
        seed=int(_require(doc, "seed")),
        measurements=tuple(meas),
        metadata=dict(doc.get("metadata", {})),
    )
    if "ground_truth" in doc:
        gt = doc["ground_truth"]
        pose_doc = _require(gt, "pose", "ground_truth.")
        twist_doc = _require(gt, "twist", "ground_truth.")
        pose = Pose(
            np.array(_require(pose_doc, "R", "ground_truth.pose."), dtype=float),
            np.array(_require(pose_doc, "p", "ground_truth.pose."), dtype=float),
        )
        twist = Twist(
            np.array(_require(twist_doc, "w", "ground_truth.twist."), dtype=float),
            np.array(_require(twist_doc, "v", "ground_truth.twist."), dtype=float),
        )
        truth = GroundTruth.from_motion(pose, twist, scenario.n_steps, scenario.dt_r)
        scenario = replace(scenario, truth=truth)
    return scenario


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return scenario_from_dict(doc)
    except ParseError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    same = (
        a.dimension == b.dimension
        and a.mode == b.mode
        and np.array_equal(a.anchors, b.anchors)
        and np.array_equal(a.tags, b.tags)
        and a.sigma_r == b.sigma_r
        and a.t_v == b.t_v
        and a.dt_r == b.dt_r
        and a.seed == b.seed
        and a.measurements == b.measurements
        and a.metadata == b.metadata
    )
    if not same or (a.truth is None) != (b.truth is None):
        return False
    if a.truth is None:
        return True
    return (
        np.array_equal(a.truth.initial_pose.matrix(), b.truth.initial_pose.matrix())
        and np.array_equal(a.truth.twist.vector(), b.truth.twist.vector())
    )


def tag_positions(scenario: Scenario, poses: Sequence[Pose], l: int) -> np.ndarray:
    return np.array([T.apply(scenario.tags[l]) for T in poses])
