"""Symmetric eigendecomposition by cyclic Jacobi rotations.

Rotations are applied in round-robin (tournament) order: every round touches
n/2 disjoint index pairs, so a whole round is one vectorized update.
"""

from __future__ import annotations

import numpy as np


def _tournament(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint pairs covering every (p, q) once (circle method)."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = np.array(pairs).T
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def sym_eig(M: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors (columns) of M."""
    A = np.array(M, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {A.shape}")
    asym = np.max(np.abs(A - A.T)) if n else 0.0
    scale = np.max(np.abs(A)) if n else 0.0
    if asym > 1e-12 * max(1.0, scale):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.2e})")
    A = (A + A.T) / 2.0
    V = np.eye(n)
    if n < 2:
        return np.diag(A).copy(), V
    rounds = _tournament(n)
    total = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * total or total == 0.0:
            break
        for p, q in rounds:
            apq = A[p, q]
            app = A[p, p]
            aqq = A[q, q]
            small = np.abs(apq) <= 1e-300
            theta = np.where(small, 0.0, (aqq - app) / (2.0 * np.where(small, 1.0, apq)))
            at = np.abs(theta)
            # hypot keeps theta^2 + 1 from overflowing for tiny apq
            t = np.where(small, 0.0, np.sign(theta + (theta == 0)) / (at + np.hypot(at, 1.0)))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # A <- J^T A J with J[p,p]=c, J[p,q]=s, J[q,p]=-s, J[q,q]=c
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = Ap * c - Aq * s
            A[:, q] = Ap * s + Aq * c
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = Vp * c - Vq * s
            V[:, q] = Vp * s + Vq * c
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]
