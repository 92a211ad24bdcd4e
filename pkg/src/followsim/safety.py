"""One-step QP safety filter.

Builds and solves the conservative velocity-command QP: a one-step tracking
term toward the comfort-band center plus a smoothness regularizer, under
velocity-box, rate, and linearized clearance constraints from selected LiDAR
rays.  Infeasibility is reported as a flag, never an error.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import qp
from .world import LidarScan, N_BEAMS

DEFAULT_DT = 0.05


@dataclasses.dataclass(frozen=True)
class FilterParams:
    """Tunables of the one-step safety QP.

    c_safe is measured from the robot center, i.e. it already includes the
    body radius; the human proxy keeps the filter outside the comfort-band
    floor around the operator.
    """

    d_ref: float = 1.1          # [m] tracking distance, comfort-band center
    rho: float = 0.5            # smoothness weight
    dt: float = DEFAULT_DT      # [s]
    u_min: tuple[float, float] = (-1.0, -1.0)   # [m/s]
    u_max: tuple[float, float] = (1.0, 1.0)     # [m/s]
    a_max: float = 1.0          # [m/s^2] rate bound
    c_safe: float = 0.35        # [m] center-to-surface keep-out
    eps: float = 1e-6           # reference-direction guard
    k_rays: int = 16            # angular sectors contributing constraints
    ray_cutoff: float = 2.5     # [m] sectors farther than this are dropped
    include_human_proxy: bool = True
    human_margin: float = 0.9   # [m] personal-space floor for the proxy row

    def __post_init__(self):
        if self.dt <= 0 or self.a_max <= 0 or self.c_safe <= 0 or self.rho < 0:
            raise ValueError("dt, a_max, c_safe must be positive; rho >= 0")
        if not all(lo < hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must be componentwise below u_max")
        if self.k_rays < 1 or self.eps <= 0:
            raise ValueError("k_rays must be >= 1 and eps positive")


@dataclasses.dataclass(frozen=True)
class FilterOutput:
    a_qp: np.ndarray   # (2,) [m/s]; zeros when invalid
    valid: bool
    A: np.ndarray      # (m, 2) all constraint rows as built
    b: np.ndarray      # (m,)


def select_constraint_rays(scan: LidarScan, params: FilterParams
                           ) -> list[tuple[float, float]]:
    """Per-sector minimum-range beams as (range, bearing) constraint rays.

    The beams are split into k_rays equal angular sectors; each sector
    contributes its closest return (lowest index on ties) unless that
    return is beyond the cutoff radius.
    """
    edges = (np.arange(params.k_rays) * N_BEAMS) // params.k_rays
    rays = []
    for s in range(params.k_rays):
        lo = int(edges[s])
        hi = int(edges[s + 1]) if s + 1 < params.k_rays else N_BEAMS
        local = int(np.argmin(scan.ranges[lo:hi]))
        r = float(scan.ranges[lo + local])
        if r > params.ray_cutoff:
            continue
        theta = 2.0 * math.pi * (lo + local) / N_BEAMS
        rays.append((r, theta))
    return rays


def clearance_rows(rays: list[tuple[float, float]], p_h: np.ndarray | None,
                   params: FilterParams) -> tuple[np.ndarray, np.ndarray]:
    """Half-plane rows n' u <= (r - margin)/dt for rays plus the human proxy."""
    normals = []
    bounds = []
    for r, theta in rays:
        normals.append((math.cos(theta), math.sin(theta)))
        bounds.append((r - params.c_safe) / params.dt)
    if params.include_human_proxy and p_h is not None:
        d = float(np.hypot(p_h[0], p_h[1]))
        if d > params.eps:
            normals.append((p_h[0] / d, p_h[1] / d))
            bounds.append((d - params.human_margin) / params.dt)
    if not normals:
        return np.zeros((0, 2)), np.zeros(0)
    return np.array(normals), np.array(bounds)


def build_qp(p_h: np.ndarray, v_h: np.ndarray, a_prev: np.ndarray,
             rays: list[tuple[float, float]], params: FilterParams) -> qp.DenseQP:
    """Assemble the one-step QP.

    Objective || p_h + (v_h - u) dt - p_ref ||^2 + rho || u - a_prev ||^2
    expands to 0.5 u' Q u + q' u with Q = 2 (dt^2 + rho) I and
    q = -2 (dt w + rho a_prev), w = p_h + v_h dt - p_ref.
    Row order: velocity box (4), rate box (4), clearance rays, human proxy.
    """
    p_h = np.asarray(p_h, dtype=float)
    v_h = np.asarray(v_h, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    dt = params.dt

    norm = float(np.hypot(p_h[0], p_h[1]))
    p_ref = params.d_ref * p_h / (norm + params.eps)
    w = p_h + v_h * dt - p_ref

    Q = 2.0 * (dt * dt + params.rho) * np.eye(2)
    qvec = -2.0 * (dt * w + params.rho * a_prev)

    lim = params.a_max * dt
    G = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0),
         (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
    h = [params.u_max[0], -params.u_min[0], params.u_max[1], -params.u_min[1],
         a_prev[0] + lim, -(a_prev[0] - lim), a_prev[1] + lim, -(a_prev[1] - lim)]
    G = np.array(G)
    h = np.array(h)
    Gc, hc = clearance_rows(rays, p_h, params)
    return qp.DenseQP(Q, qvec, np.vstack([G, Gc]), np.concatenate([h, hc]))


def solve_safety_qp(p_h: np.ndarray, v_h: np.ndarray, a_prev: np.ndarray,
                    scan: LidarScan | None = None,
                    params: FilterParams | None = None,
                    rays: list[tuple[float, float]] | None = None) -> FilterOutput:
    """Solve the one-step filter; infeasibility is a value, not an error."""
    params = params or FilterParams()
    if rays is None:
        rays = select_constraint_rays(scan, params) if scan is not None else []
    problem = build_qp(p_h, v_h, a_prev, rays, params)
    res = qp.solve(problem)
    a_qp = res.u_star if res.feasible else np.zeros(2)
    return FilterOutput(a_qp=a_qp, valid=res.feasible, A=problem.G, b=problem.h)
