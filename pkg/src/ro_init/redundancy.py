"""Redundant constraint discovery from sampled feasible lifts.

Every quadratic relation ``x^T S x = 0`` that holds on the feasible set is a
vector ``svec(S)`` orthogonal to ``svec(x x^T)`` for all feasible ``x``.
Stacking many sampled lifts and taking the right null space of that data
matrix therefore yields every such relation at once.
"""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .lie import Pose, Twist, euler_zyx, rot2, rotz
from .qcqp import REDUNDANT, Constraint, QcqpProblem, StateLayout, Variant, lift_state, make_layout
from .objective import FIRST_ORDER
from .scenario import Scenario
from .sdp import smat, svec, svec_dim

DEFAULT_TOL = 1e-8
_SAMPLE_EXTENT = 1.0


class InsufficientSamples(ValueError):
    pass


class RankDeficientSampling(RuntimeError):
    pass


class LayoutMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConstraintBasis:
    """Orthonormal redundant-constraint matrices for one state layout.

    ``moment_span`` holds the complementary directions: orthonormal svec rows
    spanning ``x x^T`` over the feasible set.
    """

    layout_key: str
    n: int
    matrices: tuple
    singular_values: np.ndarray
    tol: float
    moment_span: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.matrices)

    def vectors(self) -> np.ndarray:
        if not self.matrices:
            return np.zeros((0, svec_dim(self.n)))
        return svec(np.array(self.matrices))

    def projection_residual(self, M: np.ndarray) -> float:
        """Relative distance of a symmetric matrix from the span of the basis."""
        v = svec(M)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return 0.0
        B = self.vectors()
        return float(np.linalg.norm(v - B.T @ (B @ v)) / norm)


def sample_lift(layout: StateLayout, scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """One random point of the relaxation's feasible set."""
    d = layout.dim
    a = _SAMPLE_EXTENT
    p = rng.uniform(-a, a, size=d)
    if layout.variant is Variant.DYNAMIC25:
        R = rotz(rng.uniform(-np.pi, np.pi))
    elif d == 2:
        R = rot2(rng.uniform(-np.pi, np.pi))
    else:
        R = euler_zyx(*rng.uniform(-np.pi, np.pi, size=3))
    pose = Pose(R, p)
    if layout.variant is Variant.STATIC:
        return lift_state(layout, scenario, pose)
    if layout.variant is Variant.DYNAMIC25:
        w = np.array([0.0, 0.0, rng.uniform(-a, a)])
    elif layout.variant is Variant.DYNAMIC_EXACT:
        # the exact lift holds cos/sin of the step rotation: small twists
        # only ever see a neighbourhood of the identity and miss directions
        w = rng.uniform(-np.pi, np.pi, size=1) / layout.dt_r
        a = a / layout.dt_r
    else:
        w = rng.uniform(-a, a, size=1)
    twist = Twist(w, rng.uniform(-a, a, size=d))
    model = FIRST_ORDER if layout.variant in (Variant.DYNAMIC, Variant.DYNAMIC25) else None
    return lift_state(layout, scenario, pose, twist, model=model)


@dataclass(frozen=True, eq=False)
class FaceBasis:
    """Moment structure of a layout expressed on the span of its lifts.

    ``U`` (n x r, orthonormal) spans every feasible lift and ``moment_span``
    holds orthonormal svec rows (size r) spanning ``y y^T`` with ``x = U y``.
    Used where the lifted dimension makes the full basis impractical.
    """

    layout_key: str
    U: np.ndarray
    moment_span: np.ndarray
    singular_values: np.ndarray
    tol: float

    @property
    def r(self) -> int:
        return self.U.shape[1]

    @property
    def dim(self) -> int:
        """Number of independent constraints on the face."""
        return svec_dim(self.r) - self.moment_span.shape[0]


def _moment_rows(X: np.ndarray) -> np.ndarray:
    rows = svec(np.einsum("si,sj->sij", X, X))
    return rows / np.einsum("si,si->s", X, X)[:, None]


def _complement(span: np.ndarray, N: int) -> np.ndarray:
    """Orthonormal rows completing ``span`` to a basis of R^N (deterministic)."""
    r = span.shape[0]
    if r == 0:
        return np.eye(N)
    Q, _ = np.linalg.qr(span.T, mode="complete")
    return Q[:, r:].T


def _fresh_violation(layout, scenario, vectors, rng, count) -> float:
    if vectors.shape[0] == 0:
        return 0.0
    X = np.array([sample_lift(layout, scenario, rng) for _ in range(count)])
    return float(np.max(np.abs(_moment_rows(X) @ vectors.T)))


def discover_constraints(
    scenario: Scenario,
    variant: Optional[Variant] = None,
    n_samples: Optional[int] = None,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    layout: Optional[StateLayout] = None,
) -> ConstraintBasis:
    """Null space of the sampled second-moment data for the scenario's layout."""
    if layout is None:
        layout = make_layout(scenario, exact=variant is Variant.DYNAMIC_EXACT)
    elif variant is not None and layout.variant is not variant:
        raise LayoutMismatch(f"layout is {layout.variant.value}, asked for {variant.value}")
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    n = layout.n
    N = svec_dim(n)
    n_samples = 3 * N if n_samples is None else int(n_samples)
    if n_samples < 2 * N:
        raise InsufficientSamples(f"{n_samples} samples for a {N}-dimensional moment space (need {2 * N})")
    rng = np.random.default_rng(seed)
    X = np.array([sample_lift(layout, scenario, rng) for _ in range(n_samples)])
    D = _moment_rows(X)
    _, s, Vt = np.linalg.svd(D, full_matrices=False)
    rank = int(np.sum(s > tol * s[0]))
    span = Vt[:rank]
    null = _complement(span, N)
    worst = _fresh_violation(layout, scenario, null, rng, 200)
    if worst > 1e-8:
        raise RankDeficientSampling(
            f"{null.shape[0]} candidate constraints, but fresh samples violate them by {worst:.2e}"
        )
    return ConstraintBasis(
        layout_key=layout.key(),
        n=n,
        matrices=tuple(smat(null, n)),
        singular_values=s,
        tol=tol,
        moment_span=span,
    )


def discover_face(
    scenario: Scenario,
    layout: StateLayout,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
) -> FaceBasis:
    """Lift span and face-coordinate moment span from sampled lifts."""
    rng = np.random.default_rng(seed)
    n = layout.n
    X = np.array([sample_lift(layout, scenario, rng) for _ in range(2 * n)])
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    U = Vt[: int(np.sum(s > 1e-10 * s[0]))].T
    r = U.shape[1]
    N = svec_dim(r)
    D = _moment_rows(np.array([U.T @ sample_lift(layout, scenario, rng) for _ in range(3 * N)]))
    # Gram eigenvalues are squared singular values; the gap (about 1e-3 down
    # to round-off) survives the squaring
    ev, V = np.linalg.eigh(D.T @ D)
    ev, V = ev[::-1], V[:, ::-1]
    sv = np.sqrt(np.clip(ev, 0.0, None))
    rank = int(np.sum(sv > tol * sv[0]))
    span = V[:, :rank].T
    Y = np.array([U.T @ sample_lift(layout, scenario, rng) for _ in range(50)])
    resid = _moment_rows(Y) - (_moment_rows(Y) @ span.T) @ span
    worst = float(np.max(np.abs(resid)))
    if worst > 1e-8:
        raise RankDeficientSampling(f"fresh lifts leave the sampled moment span by {worst:.2e}")
    return FaceBasis(layout.key(), U, span, sv, tol)


def attach(problem: QcqpProblem, basis: ConstraintBasis) -> QcqpProblem:
    """Replace the solver constraints by the discovered basis (plus A0)."""
    if basis.n != problem.n or basis.layout_key != problem.layout.key():
        raise LayoutMismatch(f"basis for layout {basis.layout_key} (n={basis.n}), problem has {problem.layout.key()}")
    prov = dict(problem.provenance)
    prov["redundant_basis"] = basis.layout_key
    prov["redundant_dim"] = basis.dim
    if basis.dim == 0:
        return replace(problem, provenance=prov)
    prov["constraints"] = "discovered"
    cons = tuple(Constraint(M, REDUNDANT) for M in basis.matrices)
    return replace(problem, constraints=cons, provenance=prov, moment_span=basis.moment_span)


# -- disk cache -----------------------------------------------------------------------


def cache_dir() -> Path:
    root = os.environ.get("RO_INIT_CACHE_DIR")
    return Path(root) if root else Path.home() / ".cache" / "ro_init"


def _cache_path(layout: StateLayout, tol: float) -> Path:
    return cache_dir() / f"basis-{layout.variant.value}-{layout.key()}-{tol:.0e}.txt"


def save_basis(basis: ConstraintBasis, path) -> None:
    """Write the basis through its moment span (the constraints are its complement).

    The write goes through a temporary file and an atomic rename so that
    concurrent writers never leave a torn file behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# layout {basis.layout_key}",
        f"# n {basis.n}",
        f"# tol {basis.tol:.17g}",
        "# singular " + " ".join(f"{x:.17g}" for x in basis.singular_values),
    ]
    for i, row in enumerate(basis.moment_span):
        M = smat(row, basis.n)
        lines.append(f"@ span {i} {basis.n}")
        r, c = np.nonzero(np.triu(M))
        lines += [f"{a} {b} {M[a, b]:.17g}" for a, b in zip(r, c)]
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_basis(path) -> ConstraintBasis:
    from .qcqp import read_matrices

    with open(path) as fh:
        header, _, mats = read_matrices(fh)
    meta = {}
    for line in header:
        key, _, value = line.partition(" ")
        meta[key] = value
    try:
        n = int(meta["n"])
        key = meta["layout"]
        tol = float(meta["tol"])
        sv = np.array([float(x) for x in meta["singular"].split()])
    except KeyError as exc:
        raise ValueError(f"{path}: missing header field {exc}") from None
    span = svec(np.array(mats)) if mats else np.zeros((0, svec_dim(n)))
    null = _complement(span, svec_dim(n))
    return ConstraintBasis(key, n, tuple(smat(null, n)), sv, tol, span)


_MEMO: dict = {}
_MEMO_LOCK = threading.Lock()


def clear_memo() -> None:
    with _MEMO_LOCK:
        _MEMO.clear()


def memo_face(scenario: Scenario, layout: StateLayout, tol: float = DEFAULT_TOL, use_cache: bool = True) -> tuple:
    """(face basis, reused) with an in-process memo per layout."""
    key = ("face", layout.key(), tol)
    with _MEMO_LOCK:
        if use_cache and key in _MEMO:
            return _MEMO[key], True
        face = discover_face(scenario, layout, tol=tol)
        if use_cache:
            _MEMO[key] = face
    return face, False


def cached_basis(scenario: Scenario, layout: StateLayout, tol: float = DEFAULT_TOL, use_cache: bool = True) -> tuple:
    """(basis, loaded_from_cache) for a layout, discovering it on a miss.

    Bases are kept in memory once loaded; the disk copy under ``cache_dir()``
    survives across processes.
    """
    key = ("basis", layout.key(), tol)
    if use_cache:
        with _MEMO_LOCK:
            if key in _MEMO:
                return _MEMO[key], True
    basis, cached = _disk_basis(scenario, layout, tol, use_cache)
    if use_cache:
        with _MEMO_LOCK:
            _MEMO[key] = basis
    return basis, cached


def _disk_basis(scenario, layout, tol, use_cache) -> tuple:
    path = _cache_path(layout, tol)
    if use_cache and path.exists():
        try:
            basis = load_basis(path)
            if basis.layout_key == layout.key() and basis.n == layout.n:
                return basis, True
        except (ValueError, OSError):
            pass
    basis = discover_constraints(scenario, layout=layout, tol=tol)
    if use_cache:
        try:
            save_basis(basis, path)
        except OSError:
            pass
    return basis, False
