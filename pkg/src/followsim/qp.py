"""Exact solver for small dense convex QPs in two decision variables.

    minimize   0.5 * u' Q u + q' u
    subject to G u <= h   (row-wise)

With two variables the optimizer lies on at most two active constraints, so
enumerating the unconstrained minimum, every single-constraint projection,
and every constraint-pair intersection and keeping the best feasible
candidate is exact.  All candidates are evaluated with vectorized closed-form
linear algebra, keeping one solve well under a millisecond for the constraint
counts used here (~25 rows, ~300 candidates).
"""

from __future__ import annotations

import dataclasses

import numpy as np

FEAS_TOL = 1e-8     # absolute feasibility slack
PD_EPS = 1e-9       # minimum eigenvalue accepted for Q
PAIR_DET_EPS = 1e-12  # parallel-pair cutoff


class QPConstructionError(ValueError):
    """Raised for a non-PD cost matrix or malformed constraint data."""


@dataclasses.dataclass(frozen=True)
class DenseQP:
    Q: np.ndarray  # (2, 2) symmetric positive definite
    q: np.ndarray  # (2,)
    G: np.ndarray  # (m, 2)
    h: np.ndarray  # (m,)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        q = np.asarray(self.q, dtype=float).reshape(2)
        G = np.asarray(self.G, dtype=float).reshape(-1, 2)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if Q.shape != (2, 2):
            raise QPConstructionError("Q must be 2x2")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise QPConstructionError("Q must be symmetric")
        if np.linalg.eigvalsh(Q)[0] < PD_EPS:
            raise QPConstructionError("Q must be positive definite")
        if len(G) != len(h):
            raise QPConstructionError("G and h row counts differ")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(q))
                and np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
            raise QPConstructionError("QP data must be finite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    def objective(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.Q @ u + self.q @ u)


@dataclasses.dataclass(frozen=True)
class QPResult:
    u_star: np.ndarray
    feasible: bool
    active_set: tuple[int, ...]
    objective: float


def violation(G: np.ndarray, h: np.ndarray, u: np.ndarray) -> float:
    """Worst constraint violation max(G u - h, 0); 0 for an empty system."""
    G = np.asarray(G, dtype=float).reshape(-1, 2)
    if len(G) == 0:
        return 0.0
    resid = G @ np.asarray(u, dtype=float) - np.asarray(h, dtype=float)
    return float(max(np.max(resid), 0.0))


def check_feasible(qp: DenseQP, u: np.ndarray) -> tuple[bool, float]:
    """Whether u satisfies every constraint within tolerance, plus the worst slack."""
    worst = violation(qp.G, qp.h, u)
    return worst <= FEAS_TOL, worst


def solve(qp: DenseQP) -> QPResult:
    """Global minimizer and feasibility flag via active-set enumeration."""
    Qinv = np.linalg.inv(qp.Q)
    u0 = -Qinv @ qp.q
    G, h = qp.G, qp.h
    m = len(G)

    cands = [u0[None, :]]
    actives: list[tuple[int, ...]] = [()]

    if m > 0:
        # single-constraint equality projections:
        # u_i = u0 - lam_i * Qinv g_i with lam_i from g_i' u = h_i
        GQ = G @ Qinv                      # rows Qinv g_i (Qinv symmetric)
        denom = np.einsum("ij,ij->i", GQ, G)
        ok = denom > PAIR_DET_EPS
        lam = np.where(ok, (G @ u0 - h) / np.where(ok, denom, 1.0), 0.0)
        singles = u0[None, :] - lam[:, None] * GQ
        idx_ok = np.nonzero(ok)[0]
        if len(idx_ok):
            cands.append(singles[idx_ok])
            actives.extend((int(i),) for i in idx_ok)

        if m > 1:
            # pair intersections: [[g_i], [g_j]] u = [h_i, h_j]
            ii, jj = np.triu_indices(m, k=1)
            gi, gj = G[ii], G[jj]
            det = gi[:, 0] * gj[:, 1] - gi[:, 1] * gj[:, 0]
            ok = np.abs(det) > PAIR_DET_EPS
            safe = np.where(ok, det, 1.0)
            ux = (h[ii] * gj[:, 1] - h[jj] * gi[:, 1]) / safe
            uy = (gi[:, 0] * h[jj] - gj[:, 0] * h[ii]) / safe
            pair_pts = np.stack([ux, uy], axis=1)
            idx_ok = np.nonzero(ok)[0]
            if len(idx_ok):
                cands.append(pair_pts[idx_ok])
                actives.extend((int(ii[k]), int(jj[k])) for k in idx_ok)

    pts = np.concatenate(cands, axis=0)
    if m > 0:
        feas = np.all(pts @ G.T - h[None, :] <= FEAS_TOL, axis=1)
    else:
        feas = np.ones(len(pts), dtype=bool)
    if not np.any(feas):
        return QPResult(np.zeros(2), False, (), float("inf"))

    obj = 0.5 * np.einsum("ij,ij->i", pts @ qp.Q, pts) + pts @ qp.q
    obj = np.where(feas, obj, np.inf)
    best = int(np.argmin(obj))  # first minimum wins: deterministic
    return QPResult(pts[best].copy(), True, actives[best], float(obj[best]))
