"""Static 2D workspace: obstacle geometry, LiDAR raycasting, scenario generation.

The world is a rectangular room bounded by walls, populated with circular
obstacles and axis-aligned wall segments.  Ray intersections are computed
analytically (exact ray-circle and ray-rectangle tests); the occupancy grid
exists only for planning and connectivity checks.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import yaml

N_BEAMS = 1080            # beams per 360 degree scan
POLAR_BINS = 64           # angular x radial bins of the polar occupancy image
DEFAULT_MAX_RANGE = 5.0   # [m]
DEFAULT_RESOLUTION = 0.05  # [m/cell]
DEFAULT_ROBOT_RADIUS = 0.25  # [m] disc footprint
SAFETY_MARGIN = 0.10      # [m] keep-out beyond the body used for passage sizing
CORRIDOR_LENGTH = 12.0    # [m] fixed corridor length for all scenarios
BOUNDARY_THICKNESS = 0.10  # [m]


class RaycastError(ValueError):
    """Raised when a raycast pose is outside the map or inside an obstacle."""


class ScenarioError(ValueError):
    """Raised when a scenario spec cannot be realized."""


@dataclasses.dataclass(frozen=True)
class CircleObstacle:
    cx: float
    cy: float
    radius: float

    kind = "circle"

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("circle radius must be positive")

    def contains(self, x: float, y: float) -> bool:
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.radius**2


@dataclasses.dataclass(frozen=True)
class WallObstacle:
    """Axis-aligned wall segment with thickness (a thin rectangle)."""

    x0: float
    y0: float
    x1: float
    y1: float
    thickness: float = BOUNDARY_THICKNESS

    kind = "wall"

    def __post_init__(self):
        if self.x0 == self.x1 and self.y0 == self.y1:
            raise ValueError("wall endpoints must be distinct")
        if self.x0 != self.x1 and self.y0 != self.y1:
            raise ValueError("wall must be axis-aligned")
        if self.thickness <= 0.0:
            raise ValueError("wall thickness must be positive")

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the wall rectangle."""
        half = 0.5 * self.thickness
        if self.y0 == self.y1:  # horizontal
            return (min(self.x0, self.x1), self.y0 - half,
                    max(self.x0, self.x1), self.y0 + half)
        return (self.x0 - half, min(self.y0, self.y1),
                self.x0 + half, max(self.y0, self.y1))

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds()
        return xmin <= x <= xmax and ymin <= y <= ymax


Obstacle = CircleObstacle | WallObstacle


@dataclasses.dataclass(frozen=True)
class LidarScan:
    """One 360 degree scan; beam i points at angle 2*pi*i/N in the robot frame."""

    ranges: np.ndarray
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=float)
        object.__setattr__(self, "ranges", r)
        if r.shape != (N_BEAMS,):
            raise ValueError(f"scan must have exactly {N_BEAMS} beams")
        if not np.all((r > 0.0) & (r <= self.max_range)):
            raise ValueError("ranges must lie in (0, max_range]")

    @staticmethod
    def beam_angles() -> np.ndarray:
        return 2.0 * np.pi * np.arange(N_BEAMS) / N_BEAMS

    @staticmethod
    def beam_directions() -> np.ndarray:
        a = LidarScan.beam_angles()
        return np.stack([np.cos(a), np.sin(a)], axis=1)


@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one benchmark scenario.

    scenario_id 1: obstacle-free corridor.
    scenario_id 2: obstacles abutting the corridor walls, central passage kept.
    scenario_id 3: obstacles scattered in a band around the reference route.
    obstacle_count 0 means the scenario picks its own count from the seed.
    """

    scenario_id: int
    corridor_width: float = 4.0
    obstacle_count: int = 0
    min_passage_width: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        if self.scenario_id not in (1, 2, 3):
            raise ValueError("scenario_id must be 1, 2, or 3")
        if self.corridor_width <= 0.0:
            raise ValueError("corridor_width must be positive")
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be >= 0")
        floor = 2.0 * (DEFAULT_ROBOT_RADIUS + SAFETY_MARGIN)
        if self.min_passage_width < floor:
            raise ValueError(
                f"min_passage_width must be >= {floor} (robot footprint plus margin)")

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioSpec":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a mapping of scenario fields")
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"{path}: unknown scenario keys {sorted(unknown)}")
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class WorldMap:
    """Immutable workspace: bounds, occupancy cells, and exact obstacle geometry.

    cells[iy, ix] is True for occupied; the boundary ring is always occupied.
    start_anchor/goal_anchor are free points whose inflated-grid connectivity
    the scenario generator guarantees.
    """

    width_m: float
    height_m: float
    resolution: float
    cells: np.ndarray
    obstacles: tuple[Obstacle, ...]
    start_anchor: tuple[float, float] | None = None
    goal_anchor: tuple[float, float] | None = None

    def __post_init__(self):
        if self.width_m <= 0 or self.height_m <= 0 or self.resolution <= 0:
            raise ValueError("map dimensions and resolution must be positive")

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, width_m: float, height_m: float,
              obstacles: list[Obstacle] | tuple[Obstacle, ...] = (),
              resolution: float = DEFAULT_RESOLUTION,
              start_anchor=None, goal_anchor=None) -> "WorldMap":
        """Create a walled room and rasterize obstacle footprints into cells."""
        walls = (
            WallObstacle(0.0, -BOUNDARY_THICKNESS / 2, width_m, -BOUNDARY_THICKNESS / 2),
            WallObstacle(0.0, height_m + BOUNDARY_THICKNESS / 2,
                         width_m, height_m + BOUNDARY_THICKNESS / 2),
            WallObstacle(-BOUNDARY_THICKNESS / 2, 0.0, -BOUNDARY_THICKNESS / 2, height_m),
            WallObstacle(width_m + BOUNDARY_THICKNESS / 2, 0.0,
                         width_m + BOUNDARY_THICKNESS / 2, height_m),
        )
        all_obs = walls + tuple(obstacles)
        nx = max(2, int(round(width_m / resolution)))
        ny = max(2, int(round(height_m / resolution)))
        cells = np.zeros((ny, nx), dtype=bool)
        cx = (np.arange(nx) + 0.5) * resolution
        cy = (np.arange(ny) + 0.5) * resolution
        gx, gy = np.meshgrid(cx, cy)
        half_diag = 0.5 * resolution * math.sqrt(2.0)
        for obs in all_obs:
            if isinstance(obs, CircleObstacle):
                # conservative footprint: any cell whose center is within
                # radius + half a cell diagonal
                d2 = (gx - obs.cx) ** 2 + (gy - obs.cy) ** 2
                cells |= d2 <= (obs.radius + half_diag) ** 2
            else:
                xmin, ymin, xmax, ymax = obs.bounds()
                cells |= ((gx >= xmin - half_diag) & (gx <= xmax + half_diag)
                          & (gy >= ymin - half_diag) & (gy <= ymax + half_diag))
        cells[0, :] = cells[-1, :] = True
        cells[:, 0] = cells[:, -1] = True
        return cls(width_m, height_m, resolution, cells, all_obs,
                   start_anchor, goal_anchor)

    @classmethod
    def from_grid(cls, cells: np.ndarray, resolution: float = 1.0) -> "WorldMap":
        """Wrap a raw occupancy grid (used by planner tests); boundary forced occupied."""
        cells = np.array(cells, dtype=bool)
        cells[0, :] = cells[-1, :] = True
        cells[:, 0] = cells[:, -1] = True
        ny, nx = cells.shape
        return cls(nx * resolution, ny * resolution, resolution, cells, ())

    # -- queries -----------------------------------------------------------

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width_m and 0.0 <= y <= self.height_m

    def point_in_obstacle(self, x: float, y: float) -> bool:
        return any(obs.contains(x, y) for obs in self.obstacles)

    def to_cell(self, x: float, y: float) -> tuple[int, int]:
        ix = min(max(int(x / self.resolution), 0), self.cells.shape[1] - 1)
        iy = min(max(int(y / self.resolution), 0), self.cells.shape[0] - 1)
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution

    def inflated_occupancy(self, inflation_m: float) -> np.ndarray:
        """Occupancy dilated by a disc of the given radius (for planning)."""
        return inflate_occupancy(self.cells, inflation_m, self.resolution)

    # -- export ------------------------------------------------------------

    def write_pgm(self, path: str | Path) -> None:
        """Export occupancy as a portable graymap (free=255, occupied=0)."""
        img = np.where(self.cells[::-1, :], 0, 255)  # row 0 at the top = max y
        ny, nx = img.shape
        lines = [f"P2\n{nx} {ny}\n255\n"]
        for row in img:
            lines.append(" ".join(str(v) for v in row) + "\n")
        Path(path).write_text("".join(lines), encoding="ascii")


def inflate_occupancy(cells: np.ndarray, inflation_m: float, resolution: float) -> np.ndarray:
    """Dilate occupied cells by a disc of radius inflation_m."""
    if inflation_m <= 0.0:
        return cells.copy()
    r = int(math.ceil(inflation_m / resolution))
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    disc = (dx * dx + dy * dy) * resolution**2 <= inflation_m**2
    out = np.zeros_like(cells)
    ny, nx = cells.shape
    for oy, ox in zip(*np.nonzero(disc)):
        sy, sx = oy - r, ox - r
        ys0, ys1 = max(0, sy), min(ny, ny + sy)
        xs0, xs1 = max(0, sx), min(nx, nx + sx)
        yd0, yd1 = max(0, -sy), min(ny, ny - sy)
        xd0, xd1 = max(0, -sx), min(nx, nx - sx)
        out[yd0:yd1, xd0:xd1] |= cells[ys0:ys1, xs0:xs1]
    return out


def _expand_reachable(reach: np.ndarray, free: np.ndarray) -> np.ndarray:
    """One wavefront step of 8-connected reachability with the corner guard."""
    new = reach.copy()
    new[1:, :] |= reach[:-1, :]
    new[:-1, :] |= reach[1:, :]
    new[:, 1:] |= reach[:, :-1]
    new[:, :-1] |= reach[:, 1:]
    # diagonal moves are forbidden when both orthogonal neighbors are occupied
    new[1:, 1:] |= reach[:-1, :-1] & (free[:-1, 1:] | free[1:, :-1])
    new[1:, :-1] |= reach[:-1, 1:] & (free[:-1, :-1] | free[1:, 1:])
    new[:-1, 1:] |= reach[1:, :-1] & (free[1:, 1:] | free[:-1, :-1])
    new[:-1, :-1] |= reach[1:, 1:] & (free[1:, :-1] | free[:-1, 1:])
    new &= free
    return new


def grid_connected(grid: np.ndarray, a: tuple[int, int], b: tuple[int, int]) -> bool:
    """8-connected reachability between cells (ix, iy) on a boolean grid.

    Diagonal moves are forbidden when both orthogonal neighbors are occupied,
    matching the planner's corner-cutting guard.
    """
    (ax, ay), (bx, by) = a, b
    free = ~grid
    if not (free[ay, ax] and free[by, bx]):
        return False
    reach = np.zeros_like(free)
    reach[ay, ax] = True
    count = 1
    while True:
        reach = _expand_reachable(reach, free)
        if reach[by, bx]:
            return True
        new_count = int(np.count_nonzero(reach))
        if new_count == count:
            return False
        count = new_count


# -- raycasting --------------------------------------------------------------


def raycast(world: WorldMap, pose: tuple[float, float, float],
            max_range: float = DEFAULT_MAX_RANGE,
            noise_sigma: float = 0.0,
            rng: np.random.Generator | None = None) -> LidarScan:
    """Cast all beams from pose (x, y, heading) and return exact hit ranges.

    Beam i leaves at heading + 2*pi*i/N.  Ranges are clipped to max_range;
    optional Gaussian range noise (noise_sigma > 0) is applied before the
    final clip so scan invariants still hold.
    """
    x, y, heading = pose
    if not world.in_bounds(x, y):
        raise RaycastError(f"pose ({x:.3f}, {y:.3f}) outside map bounds")
    if world.point_in_obstacle(x, y):
        raise RaycastError(f"pose ({x:.3f}, {y:.3f}) inside an obstacle")

    angles = heading + LidarScan.beam_angles()
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (N, 2)
    dist = np.full(N_BEAMS, np.inf)

    circles = [o for o in world.obstacles if isinstance(o, CircleObstacle)]
    if circles:
        centers = np.array([[c.cx, c.cy] for c in circles])  # (C, 2)
        radii = np.array([c.radius for c in circles])
        rel = centers - np.array([x, y])                      # (C, 2)
        b = dirs @ rel.T                                      # (N, C) projection
        cc = np.einsum("ij,ij->i", rel, rel) - radii**2       # (C,) > 0 outside
        disc = b * b - cc[None, :]
        with np.errstate(invalid="ignore"):
            t = b - np.sqrt(disc)
        t = np.where((disc >= 0.0) & (t > 1e-12), t, np.inf)
        dist = np.minimum(dist, t.min(axis=1))

    rects = [o.bounds() for o in world.obstacles if isinstance(o, WallObstacle)]
    if rects:
        rb = np.array(rects)  # (R, 4): xmin, ymin, xmax, ymax
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs  # (N, 2), inf where the beam is axis-parallel
            tx1 = (rb[None, :, 0] - x) * inv[:, 0:1]
            tx2 = (rb[None, :, 2] - x) * inv[:, 0:1]
            ty1 = (rb[None, :, 1] - y) * inv[:, 1:2]
            ty2 = (rb[None, :, 3] - y) * inv[:, 1:2]
        # a zero direction component against a finite slab gives +-inf, which
        # min/max handle; axis-parallel beams starting inside the slab give
        # nan, treated as the full interval
        txl = np.fmin(tx1, tx2)
        txh = np.fmax(tx1, tx2)
        tyl = np.fmin(ty1, ty2)
        tyh = np.fmax(ty1, ty2)
        t_enter = np.fmax(np.nan_to_num(txl, nan=-np.inf),
                          np.nan_to_num(tyl, nan=-np.inf))
        t_exit = np.fmin(np.nan_to_num(txh, nan=np.inf),
                         np.nan_to_num(tyh, nan=np.inf))
        hit = (t_enter <= t_exit) & (t_exit > 0.0) & (t_enter > 1e-12)
        t = np.where(hit, t_enter, np.inf)
        dist = np.minimum(dist, t.min(axis=1))

    ranges = np.minimum(dist, max_range)
    if noise_sigma > 0.0:
        gen = rng if rng is not None else np.random.default_rng(0)
        ranges = ranges + gen.normal(0.0, noise_sigma, size=N_BEAMS)
        ranges = np.clip(ranges, 1e-6, max_range)
    return LidarScan(ranges=ranges, max_range=max_range)


def rasterize_polar(scan: LidarScan) -> np.ndarray:
    """Project a scan onto the 64x64 polar occupancy image.

    image[a, r] = 1 iff some beam in angular bin a returned a range in radial
    bin r.  Bins are half-open [lo, hi); a full-range return lands in the
    outermost ring.
    """
    ang_bins = (np.arange(N_BEAMS) * POLAR_BINS) // N_BEAMS
    rad = np.floor(scan.ranges / scan.max_range * POLAR_BINS).astype(int)
    rad = np.minimum(rad, POLAR_BINS - 1)
    img = np.zeros((POLAR_BINS, POLAR_BINS), dtype=np.uint8)
    img[ang_bins, rad] = 1
    return img


def clearance_and_direction(scan: LidarScan,
                            robot_radius: float = DEFAULT_ROBOT_RADIUS
                            ) -> tuple[float, np.ndarray]:
    """Minimum clearance beyond the body and the unit direction toward it.

    Ties resolve to the lowest beam index.
    """
    i = int(np.argmin(scan.ranges))
    c = float(scan.ranges[i]) - robot_radius
    theta = 2.0 * np.pi * i / N_BEAMS
    return c, np.array([math.cos(theta), math.sin(theta)])


# -- scenario generation -----------------------------------------------------

_ANCHOR_INSET = 1.0       # [m] anchors this far from the corridor ends
_S2_OBSTACLE_RADIUS = 0.3
_S2_SPACING = 1.5         # [m] obstacle spacing along the corridor
_S2_JITTER = 0.3          # [m] seeded jitter on obstacle x positions
_S3_BAND = 1.5            # [m] obstacle band half-width around the route
_S3_RADIUS_RANGE = (0.2, 0.4)
_S3_COUNT_RANGE = (8, 14)
_S3_KEEPOUT = 0.8         # [m] clear space kept around the anchors
_PLACEMENT_TRIES = 60


def generate_scenario(spec: ScenarioSpec) -> WorldMap:
    """Build the corridor world for a scenario spec; deterministic per seed."""
    rng = np.random.default_rng(spec.rng_seed)
    width, height = CORRIDOR_LENGTH, spec.corridor_width
    mid = height / 2.0
    start = (_ANCHOR_INSET, mid)
    goal = (width - _ANCHOR_INSET, mid)

    if spec.scenario_id == 1:
        return WorldMap.build(width, height, (), start_anchor=start, goal_anchor=goal)

    if spec.scenario_id == 2:
        r = _S2_OBSTACLE_RADIUS
        if height - 2.0 * r < spec.min_passage_width:
            raise ScenarioError(
                "corridor too narrow for wall obstacles and the requested passage")
        obstacles = []
        side = int(rng.integers(0, 2))
        k = 1
        while True:
            cx = k * _S2_SPACING + float(rng.uniform(-_S2_JITTER, _S2_JITTER))
            if cx > width - _ANCHOR_INSET - r:
                break
            cy = r if side == 0 else height - r
            obstacles.append(CircleObstacle(cx, cy, r))
            side = 1 - side
            k += 1
        return WorldMap.build(width, height, obstacles,
                              start_anchor=start, goal_anchor=goal)

    # scenario 3: clutter in a band around the start-goal route, keeping the
    # inflated grid connected between anchors.  Connectivity is checked on a
    # conservative superset grid (analytic discs of radius r + half-diagonal
    # + inflation), so the exact inflated grid of the final map is connected
    # by construction.
    count = spec.obstacle_count or int(rng.integers(_S3_COUNT_RANGE[0],
                                                    _S3_COUNT_RANGE[1] + 1))
    inflation = DEFAULT_ROBOT_RADIUS + 0.05
    shell = WorldMap.build(width, height, ())
    occ = shell.inflated_occupancy(inflation)
    a_cell = shell.to_cell(*start)
    b_cell = shell.to_cell(*goal)
    res = shell.resolution
    nyc, nxc = occ.shape
    gx, gy = np.meshgrid((np.arange(nxc) + 0.5) * res, (np.arange(nyc) + 0.5) * res)
    half_diag = 0.5 * res * math.sqrt(2.0)

    placed: list[CircleObstacle] = []
    for _ in range(count):
        for _ in range(_PLACEMENT_TRIES):
            r = float(rng.uniform(*_S3_RADIUS_RANGE))
            cx = float(rng.uniform(_ANCHOR_INSET + _S3_KEEPOUT,
                                   width - _ANCHOR_INSET - _S3_KEEPOUT))
            cy = float(rng.uniform(max(r + 0.05, mid - _S3_BAND),
                                   min(height - r - 0.05, mid + _S3_BAND)))
            near_anchor = any(
                math.hypot(cx - ax, cy - ay) < r + _S3_KEEPOUT
                for ax, ay in (start, goal))
            if near_anchor:
                continue
            disc = (gx - cx) ** 2 + (gy - cy) ** 2 <= (r + half_diag + inflation) ** 2
            if grid_connected(occ | disc, a_cell, b_cell):
                placed.append(CircleObstacle(cx, cy, r))
                occ |= disc
                break
        else:
            if spec.obstacle_count:
                raise ScenarioError(
                    f"could not place {spec.obstacle_count} obstacles without "
                    f"disconnecting the corridor")
            break
    return WorldMap.build(width, height, placed,
                          start_anchor=start, goal_anchor=goal)
