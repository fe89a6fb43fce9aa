"""Lifted state layouts, cost matrices and quadratic constraints.

Every constraint is homogeneous quadratic in the lifted state ``x`` whose last
entry is the homogenization variable ``h``: linear relations are written as
``h * (linear form)`` so that ``x^T A x = 0`` on feasible lifts, and the single
inhomogeneous relation is ``x^T A0 x = h^2 = 1``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .lie import Pose, Twist, exp_se
from .objective import EXACT, FIRST_ORDER, cost_weight, tag_world
from .scenario import Measurement, Mode, Scenario


class Variant(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    DYNAMIC25 = "dynamic25"
    DYNAMIC_EXACT = "dynamic_exact"


class ModeMismatch(ValueError):
    pass


class InsufficientMeasurements(UserWarning):
    pass


LEVER_ARM = "lever-arm"
NORM_LINK = "norm-link"
ORTHOGONALITY = "orthogonality"
HANDEDNESS = "handedness"
MOTION = "motion"
REDUNDANT = "redundant"


@dataclass(frozen=True)
class StateLayout:
    variant: Variant
    dim: int
    slots: tuple  # (name, offset, size)
    lifted: tuple  # (k, l) per lifted tag position
    tags: tuple
    dt_r: float
    n_steps: int

    @property
    def n(self) -> int:
        name, off, size = self.slots[-1]
        return off + size

    @property
    def h(self) -> int:
        return self.n - 1

    def slot(self, name: str) -> slice:
        for s, off, size in self.slots:
            if s == name:
                return slice(off, off + size)
        raise KeyError(name)

    def index(self, name: str, i: int = 0) -> int:
        sl = self.slot(name)
        if not 0 <= i < sl.stop - sl.start:
            raise IndexError(f"{name}[{i}]")
        return sl.start + i

    def has(self, name: str) -> bool:
        return any(s == name for s, _, _ in self.slots)

    def step_time(self, k: int) -> float:
        return (k - 1) * self.dt_r

    def key(self) -> str:
        """Stable hash of everything the constraint set depends on."""
        doc = {
            "variant": self.variant.value,
            "dim": self.dim,
            "slots": [list(s) for s in self.slots],
            "lifted": [list(e) for e in self.lifted],
            "tags": [[format(float(x), ".17g") for x in t] for t in self.tags],
            "dt_r": format(float(self.dt_r), ".17g"),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def describe(self) -> str:
        return ", ".join(f"{s}[{size}]@{off}" for s, off, size in self.slots)


@dataclass(frozen=True)
class Constraint:
    matrix: np.ndarray
    kind: str


@dataclass(frozen=True, eq=False)
class QcqpProblem:
    layout: StateLayout
    Q: np.ndarray
    A0: np.ndarray
    constraints: tuple
    verification: tuple = ()
    provenance: dict = field(default_factory=dict)
    # orthonormal svec rows spanning x x^T over feasible lifts, when known
    moment_span: Optional[np.ndarray] = None
    # rows g_i with Q = sum g_i g_i^T, so x^T Q x can be formed from residuals
    cost_rows: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.layout.n

    def counts(self) -> dict:
        out = defaultdict(int)
        for c in self.constraints:
            out[c.kind] += 1
        return dict(out)

    def residuals(self, x: np.ndarray, which: str = "constraints") -> np.ndarray:
        cons = self.constraints if which == "constraints" else self.verification
        return np.array([x @ c.matrix @ x for c in cons])

    def sdp_data(self):
        """(C, A_list, b) for the relaxation; A0 comes first with rhs 1."""
        A = [self.A0] + [c.matrix for c in self.constraints]
        b = np.zeros(len(A))
        b[0] = 1.0
        return self.Q, A, b


def variant_for(scenario: Scenario, exact: bool = False) -> Variant:
    if scenario.mode is Mode.STATIC:
        return Variant.STATIC
    if scenario.mode is Mode.DYNAMIC25:
        if exact:
            raise ModeMismatch("the approximation-free builder supports 2D dynamic scenarios only")
        return Variant.DYNAMIC25
    return Variant.DYNAMIC_EXACT if exact else Variant.DYNAMIC


def make_layout(scenario: Scenario, measurements: Optional[Sequence[Measurement]] = None, exact: bool = False) -> StateLayout:
    variant = variant_for(scenario, exact)
    measurements = scenario.measurements if measurements is None else measurements
    d = scenario.dimension
    if variant is Variant.STATIC:
        lifted = [(1, l) for l in range(len(scenario.tags))]
    else:
        lifted = list(dict.fromkeys((m.k, m.l) for m in measurements))
        if not lifted:
            raise ModeMismatch("dynamic layouts need at least one measurement")
    sizes = []
    for e in range(len(lifted)):
        sizes += [(f"pt{e}", d), (f"z{e}", 1)]
    if variant is Variant.STATIC:
        sizes += [("R", d * d), ("p", d)]
    elif variant is Variant.DYNAMIC:
        sizes += [("R", 4), ("p", 2), ("w", 1), ("v", 2)]
    elif variant is Variant.DYNAMIC25:
        sizes += [("R", 2), ("p", 3), ("w", 1), ("v", 3)]
    else:
        for k in range(1, scenario.n_steps + 1):
            sizes += [(f"R{k}", d * d), (f"p{k}", d)]
        sizes += [("dR", d * d), ("dp", d)]
    sizes.append(("h", 1))
    slots, off = [], 0
    for name, size in sizes:
        slots.append((name, off, size))
        off += size
    return StateLayout(
        variant=variant,
        dim=d,
        slots=tuple(slots),
        lifted=tuple(lifted),
        tags=tuple(tuple(float(x) for x in t) for t in scenario.tags),
        dt_r=float(scenario.dt_r) if scenario.mode.is_dynamic else 0.0,
        n_steps=scenario.n_steps,
    )


# -- polynomial bookkeeping ------------------------------------------------------


class _Quad:
    """Accumulates sum_k coef_k x_i x_j and turns it into a symmetric matrix."""

    def __init__(self):
        self.terms = defaultdict(float)

    def add(self, coef: float, i: int, j: int) -> "_Quad":
        if coef != 0.0:
            self.terms[(min(i, j), max(i, j))] += coef
        return self

    def mul(self, f: Iterable, g: Iterable, coef: float = 1.0) -> "_Quad":
        """Add coef * f * g for linear forms given as [(c, i), ...]."""
        for a, i in f:
            for b, j in g:
                self.add(coef * a * b, i, j)
        return self

    def matrix(self, n: int) -> np.ndarray:
        M = np.zeros((n, n))
        for (i, j), c in self.terms.items():
            if i == j:
                M[i, i] += c
            else:
                M[i, j] += c / 2.0
                M[j, i] += c / 2.0
        return M


def _var(i: int, coef: float = 1.0) -> list:
    return [(coef, i)]


def rotation_forms(layout: StateLayout, name: str) -> list:
    """Entries of the rotation in slot ``name`` as linear forms in x."""
    off = layout.slot(name).start
    h = layout.h
    if layout.variant is Variant.DYNAMIC25:
        c, s = off, off + 1
        return [
            [_var(c), _var(s, -1.0), []],
            [_var(s), _var(c), []],
            [[], [], _var(h)],
        ]
    d = layout.dim
    # vec() stacks columns: R[a, b] lives at off + b*d + a
    return [[_var(off + b * d + a) for b in range(d)] for a in range(d)]


def _wedge_forms(layout: StateLayout, u: np.ndarray) -> list:
    """omega^ u as linear forms in the angular-velocity slot."""
    w = layout.index("w")
    forms = [_var(w, -u[1]), _var(w, u[0])]
    if layout.dim == 3:
        forms.append([])
    return forms


def _rotation_constraints(layout: StateLayout, name: str, n: int) -> list:
    h = layout.h
    out = []
    if layout.variant is Variant.DYNAMIC25:
        off = layout.slot(name).start
        q = _Quad().add(1.0, off, off).add(1.0, off + 1, off + 1).add(-1.0, h, h)
        return [Constraint(q.matrix(n), ORTHOGONALITY)]
    R = rotation_forms(layout, name)
    d = layout.dim
    for i in range(d):
        for j in range(i, d):
            col, row = _Quad(), _Quad()
            for a in range(d):
                col.mul(R[a][i], R[a][j])
                row.mul(R[i][a], R[j][a])
            if i == j:
                col.add(-1.0, h, h)
                row.add(-1.0, h, h)
            out.append(Constraint(col.matrix(n), ORTHOGONALITY))
            out.append(Constraint(row.matrix(n), ORTHOGONALITY))
    H = _var(h)
    if d == 2:
        q1 = _Quad().mul(H, R[0][0]).mul(H, R[1][1], -1.0)
        q2 = _Quad().mul(H, R[0][1]).mul(H, R[1][0])
        out += [Constraint(q1.matrix(n), HANDEDNESS), Constraint(q2.matrix(n), HANDEDNESS)]
    else:
        for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            for a in range(3):
                b, c = (a + 1) % 3, (a + 2) % 3
                q = _Quad().mul(R[b][i], R[c][j]).mul(R[c][i], R[b][j], -1.0).mul(H, R[a][k], -1.0)
                out.append(Constraint(q.matrix(n), HANDEDNESS))
    return out


def _lever_arm_constraints(layout: StateLayout, e: int, rot: str, pos: str, moving: bool) -> list:
    """h*pt = h*(R u + p) [+ c_k R (w^ u + v)] for lifted epoch e."""
    n, h = layout.n, layout.h
    k, l = layout.lifted[e]
    u = np.array(layout.tags[l])
    R = rotation_forms(layout, rot)
    H = _var(h)
    c = layout.step_time(k) if moving else 0.0
    if c != 0.0:
        body = _wedge_forms(layout, u)
        v = layout.slot("v").start
        body = [body[b] + _var(v + b) for b in range(layout.dim)]
    out = []
    for a in range(layout.dim):
        q = _Quad().mul(H, _var(layout.index(f"pt{e}", a)))
        q.mul(H, _var(layout.index(pos, a)), -1.0)
        for b in range(layout.dim):
            q.mul(H, R[a][b], -u[b])
            if c != 0.0:
                q.mul(R[a][b], body[b], -c)
        out.append(Constraint(q.matrix(n), MOTION if c != 0.0 else LEVER_ARM))
    return out


def _norm_link(layout: StateLayout, e: int) -> Constraint:
    n, h = layout.n, layout.h
    q = _Quad()
    for a in range(layout.dim):
        i = layout.index(f"pt{e}", a)
        q.add(1.0, i, i)
    q.add(-1.0, layout.index(f"z{e}"), h)
    return Constraint(q.matrix(n), NORM_LINK)


def _chain_constraints(layout: StateLayout, k: int) -> list:
    """T_k = T_{k-1} dT."""
    n, h = layout.n, layout.h
    d = layout.dim
    Rk, Rp, dR = (rotation_forms(layout, s) for s in (f"R{k}", f"R{k - 1}", "dR"))
    H = _var(h)
    out = []
    for a in range(d):
        for b in range(d):
            q = _Quad().mul(H, Rk[a][b])
            for c in range(d):
                q.mul(Rp[a][c], dR[c][b], -1.0)
            out.append(Constraint(q.matrix(n), MOTION))
    for a in range(d):
        q = _Quad().mul(H, _var(layout.index(f"p{k}", a)))
        q.mul(H, _var(layout.index(f"p{k - 1}", a)), -1.0)
        for c in range(d):
            q.mul(Rp[a][c], _var(layout.index("dp", c)), -1.0)
        out.append(Constraint(q.matrix(n), MOTION))
    return out


def homogenization(layout: StateLayout) -> np.ndarray:
    A0 = np.zeros((layout.n, layout.n))
    A0[layout.h, layout.h] = 1.0
    return A0


def cost_rows(scenario: Scenario, measurements: Sequence[Measurement], layout: StateLayout) -> np.ndarray:
    """Rows sqrt(w) a with a^T x = r^2 - |p_a|^2 + 2 p_a^T pt - z for each measurement."""
    n = layout.n
    epoch = {kl: e for e, kl in enumerate(layout.lifted)}
    A = np.zeros((len(measurements), n))
    for i, m in enumerate(measurements):
        key = (1, m.l) if layout.variant is Variant.STATIC else (m.k, m.l)
        if key not in epoch:
            raise ModeMismatch(f"measurement {m} has no lifted slot")
        e = epoch[key]
        pa = scenario.anchors[m.j]
        A[i, layout.slot(f"pt{e}")] = 2.0 * pa
        A[i, layout.index(f"z{e}")] = -1.0
        A[i, layout.h] = m.value - pa @ pa
    return np.sqrt(cost_weight(scenario, len(measurements))) * A


def cost_matrix(scenario: Scenario, measurements: Sequence[Measurement], layout: StateLayout) -> np.ndarray:
    """Q = w sum a a^T."""
    G = cost_rows(scenario, measurements, layout)
    Q = G.T @ G
    return (Q + Q.T) / 2.0


_DOF = {Variant.STATIC: {2: 3, 3: 6}, Variant.DYNAMIC: {2: 6}, Variant.DYNAMIC25: {3: 8}, Variant.DYNAMIC_EXACT: {2: 6}}


def _check_count(layout: StateLayout, measurements) -> None:
    dof = _DOF[layout.variant][layout.dim]
    if len(measurements) < dof:
        warnings.warn(
            f"{len(measurements)} measurements for {dof} unknown degrees of freedom",
            InsufficientMeasurements,
            stacklevel=3,
        )


def _measurements(scenario, measurements):
    measurements = scenario.measurements if measurements is None else tuple(measurements)
    if not measurements:
        raise ModeMismatch("no measurements to build a cost from")
    return measurements


def build_static(scenario: Scenario, measurements=None) -> QcqpProblem:
    if scenario.mode is not Mode.STATIC:
        raise ModeMismatch(f"build_static needs a static scenario, got {scenario.mode.value}")
    measurements = _measurements(scenario, measurements)
    layout = make_layout(scenario, measurements)
    _check_count(layout, measurements)
    cons = []
    for e in range(len(layout.lifted)):
        cons += _lever_arm_constraints(layout, e, "R", "p", moving=False)
    cons += [_norm_link(layout, e) for e in range(len(layout.lifted))]
    cons += _rotation_constraints(layout, "R", layout.n)
    return _problem(scenario, measurements, layout, cons)


def build_dynamic(scenario: Scenario, measurements=None) -> QcqpProblem:
    """Constant-velocity window with the first-order lever-arm model."""
    if scenario.mode not in (Mode.DYNAMIC, Mode.DYNAMIC25):
        raise ModeMismatch(f"build_dynamic needs a dynamic scenario, got {scenario.mode.value}")
    measurements = _measurements(scenario, measurements)
    layout = make_layout(scenario, measurements)
    _check_count(layout, measurements)
    cons = []
    for e in range(len(layout.lifted)):
        cons += _lever_arm_constraints(layout, e, "R", "p", moving=True)
    cons += [_norm_link(layout, e) for e in range(len(layout.lifted))]
    cons += _rotation_constraints(layout, "R", layout.n)
    return _problem(scenario, measurements, layout, cons)


def build_dynamic_exact(scenario: Scenario, measurements=None) -> QcqpProblem:
    """Approximation-free window: every pose in the state, chained by dT."""
    if scenario.mode is not Mode.DYNAMIC:
        raise ModeMismatch(f"build_dynamic_exact needs a 2D dynamic scenario, got {scenario.mode.value}")
    measurements = _measurements(scenario, measurements)
    layout = make_layout(scenario, measurements, exact=True)
    _check_count(layout, measurements)
    cons = []
    for e, (k, _) in enumerate(layout.lifted):
        cons += _lever_arm_constraints(layout, e, f"R{k}", f"p{k}", moving=False)
    cons += [_norm_link(layout, e) for e in range(len(layout.lifted))]
    for k in range(1, layout.n_steps + 1):
        cons += _rotation_constraints(layout, f"R{k}", layout.n)
    cons += _rotation_constraints(layout, "dR", layout.n)
    for k in range(2, layout.n_steps + 1):
        cons += _chain_constraints(layout, k)
    return _problem(scenario, measurements, layout, cons)


def _problem(scenario, measurements, layout, cons) -> QcqpProblem:
    G = cost_rows(scenario, measurements, layout)
    return QcqpProblem(
        layout=layout,
        Q=(G.T @ G + (G.T @ G).T) / 2.0,
        cost_rows=G,
        A0=homogenization(layout),
        constraints=tuple(cons),
        verification=tuple(cons),
        provenance={"constraints": "hand-coded"},
    )


def build(scenario: Scenario, measurements=None, exact: bool = False) -> QcqpProblem:
    if scenario.mode is Mode.STATIC:
        return build_static(scenario, measurements)
    if exact:
        return build_dynamic_exact(scenario, measurements)
    return build_dynamic(scenario, measurements)


def lift_state(
    layout: StateLayout,
    scenario: Scenario,
    pose: Pose,
    twist: Optional[Twist] = None,
    model: Optional[str] = None,
) -> np.ndarray:
    """Lifted state vector for a candidate pose (and twist).

    ``model`` selects how lifted tag positions are computed for moving
    variants; by default the exact exponential is used, so the first-order
    motion constraints then carry the approximation error.
    """
    variant = layout.variant
    d = layout.dim
    if pose.dim != d:
        raise ModeMismatch(f"pose dimension {pose.dim} does not match layout dimension {d}")
    if variant is Variant.STATIC:
        if twist is not None and np.any(twist.vector() != 0.0):
            raise ModeMismatch("static layouts take no twist")
        twist = None
    elif twist is None or twist.dim != d:
        raise ModeMismatch("dynamic layouts need a twist of matching dimension")
    if variant is Variant.DYNAMIC25 and (np.any(pose.rotation[2] != [0, 0, 1]) or np.any(twist.angular[:2] != 0.0)):
        raise ModeMismatch("2.5D candidates must rotate about z only")
    model = EXACT if model is None else model
    if variant is Variant.DYNAMIC_EXACT:
        model = EXACT
    x = np.zeros(layout.n)
    for e, (k, l) in enumerate(layout.lifted):
        pt = tag_world(scenario, pose, twist, k, l, model)
        x[layout.slot(f"pt{e}")] = pt
        x[layout.index(f"z{e}")] = pt @ pt
    if variant is Variant.DYNAMIC_EXACT:
        for k in range(1, layout.n_steps + 1):
            Tk = pose @ exp_se(twist, layout.step_time(k))
            x[layout.slot(f"R{k}")] = Tk.rotation.flatten(order="F")
            x[layout.slot(f"p{k}")] = Tk.translation
        dT = exp_se(twist, layout.dt_r)
        x[layout.slot("dR")] = dT.rotation.flatten(order="F")
        x[layout.slot("dp")] = dT.translation
    else:
        if variant is Variant.DYNAMIC25:
            x[layout.slot("R")] = pose.rotation[:2, 0]
        else:
            x[layout.slot("R")] = pose.rotation.flatten(order="F")
        x[layout.slot("p")] = pose.translation
        if variant is Variant.DYNAMIC:
            x[layout.slot("w")] = twist.angular
            x[layout.slot("v")] = twist.linear
        elif variant is Variant.DYNAMIC25:
            x[layout.slot("w")] = twist.angular[2]
            x[layout.slot("v")] = twist.linear
    x[layout.h] = 1.0
    return x


def first_order_lift(layout: StateLayout, scenario: Scenario, pose: Pose, twist: Optional[Twist] = None) -> np.ndarray:
    """Lift on the feasible set of the first-order relaxation."""
    return lift_state(layout, scenario, pose, twist, model=FIRST_ORDER)


# -- coordinate text dumps ---------------------------------------------------------


def write_matrices(stream, matrices: Sequence[np.ndarray], header: str = "", names: Optional[Sequence[str]] = None) -> None:
    """Upper-triangular ``row col value`` lines, one section per matrix."""
    if header:
        for line in header.splitlines():
            stream.write(f"# {line}\n")
    for i, M in enumerate(matrices):
        label = names[i] if names else f"matrix {i}"
        stream.write(f"@ {label} {M.shape[0]}\n")
        rows, cols = np.nonzero(np.triu(M))
        for r, c in zip(rows, cols):
            stream.write(f"{r} {c} {M[r, c]:.17g}\n")


def read_matrices(stream) -> tuple[list, list, list]:
    """Inverse of :func:`write_matrices`: (header lines, names, matrices)."""
    header, names, mats = [], [], []
    current = None
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header.append(line[1:].strip())
            continue
        if line.startswith("@"):
            parts = line[1:].split()
            current = np.zeros((int(parts[-1]), int(parts[-1])))
            names.append(" ".join(parts[:-1]))
            mats.append(current)
            continue
        if current is None:
            raise ValueError(f"line {lineno}: entry before any section")
        r, c, v = line.split()
        r, c, v = int(r), int(c), float(v)
        current[r, c] = v
        current[c, r] = v
    return header, names, mats


def dump_problem(problem: QcqpProblem, path) -> None:
    mats = [problem.Q, problem.A0] + [c.matrix for c in problem.constraints]
    names = ["Q", "A0"] + [f"{c.kind} {i}" for i, c in enumerate(problem.constraints)]
    with open(path, "w") as fh:
        write_matrices(fh, mats, header=f"layout {problem.layout.key()}\n{problem.layout.describe()}", names=names)


def with_constraints(problem: QcqpProblem, constraints, **provenance) -> QcqpProblem:
    prov = dict(problem.provenance)
    prov.update(provenance)
    return replace(problem, constraints=tuple(constraints), provenance=prov)
