"""Reference-path planning and synthetic human motion.

A* runs on the robot-radius-inflated occupancy grid with 8-connectivity,
unit/sqrt(2) step costs scaled by the cell size, and a Euclidean heuristic.
Human motion walks the planned polyline with piecewise-constant target
speeds (stop-and-go interleaved) smoothed by a first-order lag.
"""

from __future__ import annotations

import dataclasses
import heapq
import math
from pathlib import Path

import numpy as np

from .world import (
    DEFAULT_ROBOT_RADIUS,
    ScenarioSpec,
    WorldMap,
    generate_scenario,
)

DT = 0.05  # [s] control interval, 20 Hz

_SQRT2 = math.sqrt(2.0)
_DIRS = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
         (1, 1, _SQRT2), (1, -1, _SQRT2), (-1, 1, _SQRT2), (-1, -1, _SQRT2))


class PlanningError(RuntimeError):
    """Raised when no collision-free path exists between start and goal."""


@dataclasses.dataclass(frozen=True)
class ReferencePath:
    """Grid path as cell-center waypoints (meters)."""

    waypoints: np.ndarray  # (n, 2)
    total_length: float

    def __post_init__(self):
        object.__setattr__(self, "waypoints",
                           np.asarray(self.waypoints, dtype=float).reshape(-1, 2))


def plan_astar(world: WorldMap, start: tuple[float, float],
               goal: tuple[float, float], inflation: float) -> ReferencePath:
    """Shortest 8-connected grid path from start to goal on the inflated grid.

    Diagonal steps are forbidden when both orthogonal neighbors are occupied.
    Raises PlanningError when start/goal are occupied or unreachable.
    """
    grid = world.inflated_occupancy(inflation)
    free = ~grid
    s = world.to_cell(*start)
    g = world.to_cell(*goal)
    ny, nx = grid.shape
    if not free[s[1], s[0]]:
        raise PlanningError(f"start {start} occupied on the inflated grid")
    if not free[g[1], g[0]]:
        raise PlanningError(f"goal {goal} occupied on the inflated grid")
    res = world.resolution

    def heuristic(c):
        return res * math.hypot(c[0] - g[0], c[1] - g[1])

    if s == g:
        return ReferencePath(np.array([world.cell_center(*s)]), 0.0)

    dist = {s: 0.0}
    came: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 0
    heap = [(heuristic(s), counter, s)]
    closed = set()
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == g:
            break
        closed.add(cur)
        cx, cy = cur
        for dx, dy, w in _DIRS:
            px, py = cx + dx, cy + dy
            if not (0 <= px < nx and 0 <= py < ny) or not free[py, px]:
                continue
            if dx != 0 and dy != 0 and not (free[cy, px] or free[py, cx]):
                continue
            cand = dist[cur] + w * res
            nxt = (px, py)
            if cand < dist.get(nxt, math.inf) - 1e-12:
                dist[nxt] = cand
                came[nxt] = cur
                counter += 1
                heapq.heappush(heap, (cand + heuristic(nxt), counter, nxt))
    if g not in dist:
        raise PlanningError(f"no path from {start} to {goal}")
    cells = [g]
    while cells[-1] != s:
        cells.append(came[cells[-1]])
    cells.reverse()
    pts = np.array([world.cell_center(ix, iy) for ix, iy in cells])
    return ReferencePath(pts, float(dist[g]))


@dataclasses.dataclass(frozen=True)
class SpeedProfile:
    """Parameters of the stop-and-go speed synthesis."""

    v_min: float = 0.15        # [m/s] slowest non-stop target
    v_max: float = 0.54        # [m/s] hard speed cap
    stop_prob: float = 0.15    # chance a segment is a full stop
    stop_duration: tuple[float, float] = (0.5, 2.0)   # [s]
    move_duration: tuple[float, float] = (1.0, 3.0)   # [s]
    lag_tau: float = 0.3       # [s] first-order speed lag
    hold_steps: int = 100      # samples emitted for a zero-length path
    max_steps: int = 3000      # safety cap on trajectory length


@dataclasses.dataclass(frozen=True)
class HumanTrajectory:
    """Sampled human motion at DT; velocities are exact position differences."""

    times: np.ndarray       # (n,)
    positions: np.ndarray   # (n, 2)
    velocities: np.ndarray  # (n, 2)

    @property
    def episode_length(self) -> int:
        return len(self.times)

    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=1)


def _point_at_arclength(waypoints: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    s = min(max(s, 0.0), float(cum[-1]))
    k = int(np.searchsorted(cum, s, side="right")) - 1
    k = min(k, len(waypoints) - 2)
    seg = cum[k + 1] - cum[k]
    f = 0.0 if seg <= 0.0 else (s - cum[k]) / seg
    return waypoints[k] + f * (waypoints[k + 1] - waypoints[k])


def synthesize_motion(path: ReferencePath, seed: int,
                      profile: SpeedProfile | None = None) -> HumanTrajectory:
    """Walk the path with lag-smoothed stop-and-go speeds; deterministic per seed."""
    profile = profile or SpeedProfile()
    rng = np.random.default_rng(seed)
    wp = path.waypoints
    if len(wp) < 2 or path.total_length <= 0.0:
        n = profile.hold_steps
        pos = np.repeat(wp[:1], n, axis=0)
        return HumanTrajectory(np.arange(n) * DT, pos, np.zeros((n, 2)))

    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    alpha = 1.0 - math.exp(-DT / profile.lag_tau)

    def draw_segment():
        if rng.uniform() < profile.stop_prob:
            return 0.0, float(rng.uniform(*profile.stop_duration))
        return (float(rng.uniform(profile.v_min, profile.v_max)),
                float(rng.uniform(*profile.move_duration)))

    target, remaining = draw_segment()
    v = target  # lag state starts on the first target (human already in motion)
    s = 0.0
    positions = [wp[0].copy()]
    while s < total and len(positions) < profile.max_steps:
        if remaining <= 0.0:
            target, remaining = draw_segment()
        v += alpha * (target - v)
        v = min(max(v, 0.0), profile.v_max)
        remaining -= DT
        s = min(s + v * DT, total)
        positions.append(_point_at_arclength(wp, cum, s))

    pos = np.array(positions)
    # enforce the speed cap on the sampled chords: rounding in the arc-length
    # interpolation may push a finite difference a few ulp over v_max
    step_cap = profile.v_max * DT
    for k in range(1, len(pos)):
        delta = pos[k] - pos[k - 1]
        norm = float(np.hypot(delta[0], delta[1]))
        while norm > 0.0 and norm / DT > profile.v_max:
            delta *= (step_cap / norm) * (1.0 - 1e-12)
            pos[k] = pos[k - 1] + delta
            delta = pos[k] - pos[k - 1]
            norm = float(np.hypot(delta[0], delta[1]))
    vel = np.zeros_like(pos)
    vel[1:] = np.diff(pos, axis=0) / DT
    return HumanTrajectory(np.arange(len(pos)) * DT, pos, vel)


# -- dataset -----------------------------------------------------------------

DEFAULT_INFLATION = DEFAULT_ROBOT_RADIUS + 0.05
_GOAL_DISTANCE_RANGE = (3.0, 5.0)  # [m] sampled start-goal separation
_SAMPLE_TRIES = 40
_MAP_TRIES = 5


@dataclasses.dataclass(frozen=True)
class EpisodeCase:
    """One benchmark episode: world plus the human trajectory walking it."""

    index: int
    seed: int
    scenario: ScenarioSpec
    world: WorldMap
    path: ReferencePath
    trajectory: HumanTrajectory


def episode_seed(master_seed: int, index: int) -> int:
    """Stable per-episode seed derived from (master seed, episode index)."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def build_episode_case(base_spec: ScenarioSpec, index: int, master_seed: int,
                       profile: SpeedProfile | None = None,
                       inflation: float = DEFAULT_INFLATION) -> EpisodeCase:
    """Generate the world, reference path, and human motion for one episode."""
    seed = episode_seed(master_seed, index)
    last_err: Exception | None = None
    for bump in range(_MAP_TRIES):
        case_seed = seed + bump * 7_919_771
        spec = dataclasses.replace(base_spec, rng_seed=case_seed)
        try:
            wld = generate_scenario(spec)
            path = _sample_route(wld, case_seed, inflation)
            traj = synthesize_motion(path, case_seed, profile)
            return EpisodeCase(index, seed, spec, wld, path, traj)
        except PlanningError as err:
            last_err = err
    raise PlanningError(f"episode {index}: {last_err}")


def _sample_route(wld: WorldMap, seed: int, inflation: float) -> ReferencePath:
    rng = np.random.default_rng(seed ^ 0x5EED)
    grid = wld.inflated_occupancy(inflation)
    free = ~grid
    ax, ay = wld.start_anchor or (1.0, wld.height_m / 2.0)
    for _ in range(_SAMPLE_TRIES):
        sx = float(rng.uniform(max(0.3, ax - 0.4), ax + 0.8))
        sy = float(rng.uniform(ay - 0.9, ay + 0.9))
        reach = float(rng.uniform(*_GOAL_DISTANCE_RANGE))
        gx = sx + reach
        gy = float(rng.uniform(ay - 0.9, ay + 0.9))
        if gx > wld.width_m - 0.3:
            continue
        (six, siy), (gix, giy) = wld.to_cell(sx, sy), wld.to_cell(gx, gy)
        if not (free[siy, six] and free[giy, gix]):
            continue
        try:
            return plan_astar(wld, (sx, sy), (gx, gy), inflation)
        except PlanningError:
            continue
    raise PlanningError("no traversable start-goal pair found")


def generate_dataset(base_spec: ScenarioSpec, n: int, seed: int,
                     profile: SpeedProfile | None = None,
                     inflation: float = DEFAULT_INFLATION) -> list[EpisodeCase]:
    """n independent (scenario, trajectory) pairs; pure in (spec, n, seed)."""
    if n <= 0:
        raise ValueError("dataset size must be positive")
    return [build_episode_case(base_spec, i, seed, profile, inflation)
            for i in range(n)]


# -- serialization -----------------------------------------------------------


def save_trajectory(case: EpisodeCase, path: str | Path) -> None:
    """Write one episode file: spec header lines then t,x,y,vx,vy rows."""
    lines = [
        f"# scenario_id: {case.scenario.scenario_id}\n",
        f"# corridor_width: {case.scenario.corridor_width!r}\n",
        f"# obstacle_count: {case.scenario.obstacle_count}\n",
        f"# min_passage_width: {case.scenario.min_passage_width!r}\n",
        f"# rng_seed: {case.scenario.rng_seed}\n",
        f"# episode_seed: {case.seed}\n",
        "t,x,y,vx,vy\n",
    ]
    traj = case.trajectory
    for t, p, v in zip(traj.times, traj.positions, traj.velocities):
        lines.append(f"{t!r},{p[0]!r},{p[1]!r},{v[0]!r},{v[1]!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_trajectory(path: str | Path) -> tuple[dict, HumanTrajectory]:
    """Read an episode file back into (header dict, HumanTrajectory)."""
    header: dict[str, float | int] = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, val = line[1:].split(":", 1)
                num = float(val)
                header[key.strip()] = int(num) if num == int(num) else num
            elif line and not line.startswith("t,"):
                rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows)
    return header, HumanTrajectory(arr[:, 0], arr[:, 1:3], arr[:, 3:5])
