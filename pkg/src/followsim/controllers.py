"""Follower policies and baseline controllers.

All controllers emit omnidirectional velocity commands clipped to the
[-1, 1]^2 m/s action box.  The neural follower consumes an externally
trained MLP via the binary weights file format defined here; the MPC
baseline extends the one-step safety QP to a receding horizon.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from pathlib import Path

import numpy as np

from . import safety
from .world import LidarScan

ACTION_LIMIT = 1.0  # [m/s] per component


def clip_action(a: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=float), -ACTION_LIMIT, ACTION_LIMIT)


def rate_limit(a: np.ndarray, a_prev: np.ndarray, max_delta: float) -> np.ndarray:
    """Componentwise clamp of a toward a_prev: ||a - a_prev||_inf <= max_delta."""
    a_prev = np.asarray(a_prev, dtype=float)
    return np.clip(np.asarray(a, dtype=float),
                   a_prev - max_delta, a_prev + max_delta)


# -- observations --------------------------------------------------------------


@dataclasses.dataclass
class FollowerObservation:
    """Input of the follower policies.

    human_history rows are (dx, dy, vhx, vhy) in the robot frame, oldest
    first, warm-started by repeating the earliest available state.  Either
    the polar image or the raw ranges may be attached depending on the
    configured observation variant; both may be None for controllers that
    only use the scalar clearance summary.
    """

    human_history: np.ndarray          # (K, 4)
    clearance: float
    clearance_dir: np.ndarray          # (2,) unit vector
    polar_image: np.ndarray | None = None   # (64, 64)
    raw_ranges: np.ndarray | None = None    # (1080,)

    @staticmethod
    def initial_history(state: np.ndarray, k: int) -> np.ndarray:
        return np.repeat(np.asarray(state, dtype=float)[None, :], k, axis=0)

    def relative_position(self) -> np.ndarray:
        return self.human_history[-1, 0:2]

    def human_velocity(self) -> np.ndarray:
        return self.human_history[-1, 2:4]

    def flatten(self) -> np.ndarray:
        """Scan representation (if any), then history, clearance, direction."""
        parts = []
        if self.polar_image is not None:
            parts.append(np.asarray(self.polar_image, dtype=float).ravel())
        elif self.raw_ranges is not None:
            parts.append(np.asarray(self.raw_ranges, dtype=float))
        parts.append(np.asarray(self.human_history, dtype=float).ravel())
        parts.append(np.array([self.clearance], dtype=float))
        parts.append(np.asarray(self.clearance_dir, dtype=float))
        return np.concatenate(parts)


# -- neural policy weights -----------------------------------------------------

_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "linear": lambda x: x,
}


class WeightsFormatError(ValueError):
    """Raised for malformed or inconsistent policy weight files."""


@dataclasses.dataclass(frozen=True)
class NeuralPolicyWeights:
    """Plain MLP parameters; matrices are (d_out, d_in), y = act(W x + b)."""

    dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        n_layers = len(self.dims) - 1
        if n_layers < 1:
            raise WeightsFormatError("need at least one layer")
        if not (len(self.weights) == len(self.biases)
                == len(self.activations) == n_layers):
            raise WeightsFormatError("layer count mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i + 1], self.dims[i]):
                raise WeightsFormatError(
                    f"layer {i}: weight shape {w.shape} does not chain "
                    f"{self.dims[i]} -> {self.dims[i + 1]}")
            if b.shape != (self.dims[i + 1],):
                raise WeightsFormatError(f"layer {i}: bias shape {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise WeightsFormatError(f"layer {i}: non-finite parameters")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise WeightsFormatError(f"unknown activation '{act}'")

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        if h.shape != (self.dims[0],):
            raise ValueError(
                f"input dim {h.shape} does not match weights ({self.dims[0]},)")
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = _ACTIVATIONS[act](w.astype(float) @ h + b.astype(float))
        return h

    def save(self, path: str | Path) -> None:
        """Text header (layers, activations) followed by little-endian f32 data."""
        with open(path, "wb") as fh:
            fh.write(("layers: " + " ".join(str(d) for d in self.dims) + "\n").encode())
            fh.write(("activation: " + " ".join(self.activations) + "\n").encode())
            for w, b in zip(self.weights, self.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "NeuralPolicyWeights":
        blob = Path(path).read_bytes()
        try:
            nl1 = blob.index(b"\n")
            nl2 = blob.index(b"\n", nl1 + 1)
            header1 = blob[:nl1].decode("ascii")
            header2 = blob[nl1 + 1:nl2].decode("ascii")
        except (ValueError, UnicodeDecodeError) as err:
            raise WeightsFormatError(f"{path}: unreadable header") from err
        if not header1.startswith("layers:") or not header2.startswith("activation:"):
            raise WeightsFormatError(f"{path}: missing layers/activation header")
        dims = tuple(int(v) for v in header1.split(":", 1)[1].split())
        acts = tuple(header2.split(":", 1)[1].split())
        n_layers = len(dims) - 1
        if len(acts) == 1 and n_layers > 1:
            acts = acts * n_layers
        data = np.frombuffer(blob[nl2 + 1:], dtype="<f4")
        expected = sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(n_layers))
        if len(data) != expected:
            raise WeightsFormatError(
                f"{path}: expected {expected} float32 values, found {len(data)}")
        weights, biases, off = [], [], 0
        for i in range(n_layers):
            n = dims[i + 1] * dims[i]
            weights.append(data[off:off + n].reshape(dims[i + 1], dims[i]).copy())
            off += n
            biases.append(data[off:off + dims[i + 1]].copy())
            off += dims[i + 1]
        return cls(dims, tuple(weights), tuple(biases), tuple(acts))


# -- followers -------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class HeuristicFollowerParams:
    """Attraction/repulsion gains of the scripted follower (non-learned stand-in)."""

    k_p: float = 1.2    # distance-error gain
    k_v: float = 0.8    # human-velocity feedforward
    k_o: float = 2.0    # obstacle repulsion gain
    c_rep: float = 0.8  # [m] repulsion onset clearance
    d_ref: float = 1.1  # [m] desired following distance


def heuristic_follower(obs: FollowerObservation,
                       params: HeuristicFollowerParams | None = None) -> np.ndarray:
    """Attraction toward the comfort distance plus clearance-gated repulsion."""
    params = params or HeuristicFollowerParams()
    p_h = obs.relative_position()
    v_h = obs.human_velocity()
    d = float(np.hypot(p_h[0], p_h[1]))
    toward = p_h / d if d > 1e-9 else np.zeros(2)
    cmd = (params.k_p * (d - params.d_ref) * toward
           + params.k_v * v_h
           - params.k_o * max(0.0, params.c_rep - obs.clearance) * obs.clearance_dir)
    return clip_action(cmd)


def neural_follower(obs: FollowerObservation,
                    weights: NeuralPolicyWeights) -> np.ndarray:
    """Deterministic MLP inference on the flattened observation."""
    y = weights.forward(obs.flatten())
    if y.shape != (2,):
        raise ValueError(f"follower network must output 2 values, got {y.shape}")
    return clip_action(y)


# -- pure pursuit ------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class PurePursuitParams:
    lookahead: float = 0.8   # [m] trail distance behind the human
    v_max: float = 0.9       # [m/s]
    a_max: float = 0.5       # [m/s^2]
    dt: float = 0.05


class PurePursuitTracker:
    """Geometric tracker steering to a point behind the human's recorded path.

    Omnidirectional adaptation: the command points straight at the trail
    point, speed-saturated and acceleration-clipped.  Stateful per episode.
    """

    def __init__(self, params: PurePursuitParams | None = None):
        self.params = params or PurePursuitParams()
        self.reset()

    def reset(self) -> None:
        self._trail: list[np.ndarray] = []
        self._arc: list[float] = []
        self._prev = np.zeros(2)

    def _target(self) -> np.ndarray:
        """Walk back along the recorded human path by the lookahead distance."""
        want = self.params.lookahead
        end = self._arc[-1]
        for pt, s in zip(reversed(self._trail), reversed(self._arc)):
            if end - s >= want:
                return pt
        return self._trail[0]

    def act(self, robot_pos: np.ndarray, human_pos: np.ndarray) -> np.ndarray:
        human_pos = np.asarray(human_pos, dtype=float)
        if self._trail:
            step = float(np.linalg.norm(human_pos - self._trail[-1]))
            self._trail.append(human_pos.copy())
            self._arc.append(self._arc[-1] + step)
        else:
            self._trail.append(human_pos.copy())
            self._arc.append(0.0)
        target = self._target()
        v_des = (target - np.asarray(robot_pos, dtype=float)) / self.params.dt
        speed = float(np.linalg.norm(v_des))
        if speed > self.params.v_max:
            v_des *= self.params.v_max / speed
        delta = v_des - self._prev
        dn = float(np.linalg.norm(delta))
        max_step = self.params.a_max * self.params.dt
        if dn > max_step:
            delta *= max_step / dn
        cmd = clip_action(self._prev + delta)
        self._prev = cmd
        return cmd


# -- heuristic DWA -----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class DwaParams:
    """Heuristic local-planner parameters; defaults are the grid midpoints."""

    v_max: float = 0.8
    accel: float = 0.6
    desired_distance: float = 1.2
    follow_gain: float = 0.9
    avoid_gain: float = 1.4
    avoid_clearance: float = 1.0
    personal_space: float = 0.9
    obstacle_buffer: float = 1.0
    obstacle_free_clearance: float = 1.8
    dt: float = 0.05


# grid-search lattice, one axis per tunable
DWA_SEARCH_GRID: dict[str, tuple[float, ...]] = {
    "v_max": (0.6, 0.8, 1.0),
    "accel": (0.4, 0.6, 0.8),
    "desired_distance": (1.0, 1.2, 1.4),
    "follow_gain": (0.6, 0.9, 1.2),
    "avoid_gain": (1.0, 1.4, 1.8),
    "avoid_clearance": (0.8, 1.0, 1.2),
    "personal_space": (0.8, 0.9, 1.0),
    "obstacle_buffer": (0.9, 1.0, 1.2),
    "obstacle_free_clearance": (1.6, 1.8, 2.0),
}


def dwa_lattice(grid: dict[str, tuple[float, ...]] | None = None) -> list[DwaParams]:
    """All parameter combinations of the search grid, in deterministic order."""
    grid = grid or DWA_SEARCH_GRID
    keys = list(DWA_SEARCH_GRID)
    axes = [grid.get(k, DWA_SEARCH_GRID[k]) for k in keys]
    return [DwaParams(**dict(zip(keys, combo)))
            for combo in itertools.product(*axes)]


def dwa_heuristic(obs: FollowerObservation, a_prev: np.ndarray,
                  params: DwaParams | None = None) -> np.ndarray:
    """Blended follow/avoid command with personal-space and buffer overrides.

    follow:   follow_gain * (d - desired_distance) toward the human,
              replaced by a full-speed retreat inside personal_space
    avoid:    avoid_gain * (avoid_clearance - c) away from the nearest return
    buffer:   inside obstacle_buffer the command may not approach the
              nearest obstacle
    caution:  below obstacle_free_clearance the speed cap shrinks with c
    """
    params = params or DwaParams()
    p_h = obs.relative_position()
    d = float(np.hypot(p_h[0], p_h[1]))
    toward = p_h / d if d > 1e-9 else np.zeros(2)
    c = obs.clearance

    if d < params.personal_space:
        follow = -params.v_max * toward
    else:
        follow = params.follow_gain * (d - params.desired_distance) * toward
    avoid = -params.avoid_gain * max(0.0, params.avoid_clearance - c) * obs.clearance_dir
    cmd = follow + avoid
    if c < params.obstacle_buffer:
        approach = float(cmd @ obs.clearance_dir)
        if approach > 0.0:
            cmd = cmd - approach * obs.clearance_dir

    cap = params.v_max
    if c < params.obstacle_free_clearance:
        cap *= min(1.0, max(0.3, c / params.obstacle_free_clearance))
    speed = float(np.linalg.norm(cmd))
    if speed > cap:
        cmd *= cap / speed
    return clip_action(rate_limit(cmd, a_prev, params.accel * params.dt))


# -- MPC baseline ------------------------------------------------------------

MPC_ITERATIONS = 200
_MPC_INFEAS_TOL = 1e-3


def _condense_mpc(p_h, v_h, a_prev, rays, params: safety.FilterParams, horizon: int):
    """Stack the H-step tracking QP into 0.5 U'QU + q'U, A U <= b."""
    dt = params.dt
    H = horizon
    norm = float(np.hypot(p_h[0], p_h[1]))
    p_ref = params.d_ref * p_h / (norm + params.eps)

    lower = np.tril(np.ones((H, H)))
    S = dt * np.kron(lower, np.eye(2))                      # cumulative motion
    W = np.concatenate([p_h + (k + 1) * dt * v_h - p_ref for k in range(H)])
    D = np.kron(np.eye(H) - np.eye(H, k=-1), np.eye(2))     # step differences
    e = np.concatenate([a_prev, np.zeros(2 * (H - 1))])

    Q = 2.0 * (S.T @ S) + 2.0 * params.rho * (D.T @ D)
    qv = -2.0 * (S.T @ W) - 2.0 * params.rho * (D.T @ e)

    eyeH = np.eye(2 * H)
    lim = params.a_max * dt
    u_max = np.tile(params.u_max, H)
    u_min = np.tile(params.u_min, H)
    rows = [eyeH, -eyeH, D, -D]
    rhs = [u_max, -u_min, e + lim, -e + lim]

    Gc, hc = safety.clearance_rows(rays, p_h, params)
    if len(Gc):
        # the linearized range prediction at step k uses the motion
        # accumulated over steps 0..k, with the rays frozen at the current scan
        rows.append(np.vstack([np.kron(lower[k], Gc[i])
                               for k in range(H) for i in range(len(Gc))]))
        rhs.append(np.tile(hc, H))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    return Q, qv, A, b


def mpc_baseline(p_h: np.ndarray, v_h: np.ndarray, a_prev: np.ndarray,
                 scan: LidarScan | None = None,
                 params: safety.FilterParams | None = None,
                 horizon: int = 10,
                 rays: list[tuple[float, float]] | None = None) -> np.ndarray:
    """Receding-horizon extension of the safety QP; returns the first command.

    H=1 reduces exactly to the one-step filter.  H>1 is solved by an
    accelerated projected-gradient ascent on the dual (projection is a clamp
    to lambda >= 0), with the step from a power-iteration bound on the dual
    curvature.  Infeasibility falls back to the previous command decayed by
    half.
    """
    params = params or safety.FilterParams()
    p_h = np.asarray(p_h, dtype=float)
    v_h = np.asarray(v_h, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    if rays is None:
        rays = safety.select_constraint_rays(scan, params) if scan is not None else []

    one_step = safety.solve_safety_qp(p_h, v_h, a_prev, params=params, rays=rays)
    if horizon == 1 or not one_step.valid:
        if one_step.valid:
            return clip_action(one_step.a_qp)
        return clip_action(0.5 * a_prev)

    Q, qv, A, b = _condense_mpc(p_h, v_h, a_prev, rays, params, horizon)
    Qinv = np.linalg.inv(Q)

    # dual curvature bound via deterministic power iteration on A Qinv A'
    v = np.ones(len(b))
    for _ in range(20):
        w = A @ (Qinv @ (A.T @ v))
        nw = float(np.linalg.norm(w))
        if nw < 1e-12:
            break
        v = w / nw
    lipschitz = max(float(v @ (A @ (Qinv @ (A.T @ v)))), 1e-9)
    step = 1.0 / (1.05 * lipschitz)

    lam = np.zeros(len(b))
    y = lam
    t = 1.0
    for _ in range(MPC_ITERATIONS):
        u = -Qinv @ (qv + A.T @ y)
        grad = b - A @ u
        lam_new = np.maximum(0.0, y - step * grad)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = lam_new + ((t - 1.0) / t_new) * (lam_new - lam)
        lam, t = lam_new, t_new
    u = -Qinv @ (qv + A.T @ lam)
    if float(max(np.max(A @ u - b), 0.0)) > _MPC_INFEAS_TOL:
        return clip_action(0.5 * a_prev)
    return clip_action(u[:2])


def make_mpc_objective(p_h, v_h, a_prev, rays, params, horizon):
    """Condensed matrices exposed for oracle tests."""
    return _condense_mpc(np.asarray(p_h, float), np.asarray(v_h, float),
                         np.asarray(a_prev, float), rays, params, horizon)
