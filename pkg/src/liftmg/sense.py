"""Observation pipeline: LiDAR, egocentric semantic grid maps, geodesic fields."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from liftmg import geometry as geo
from liftmg.world import SceneState

LIDAR_RAYS = 220
LIDAR_FOV = math.radians(220.0)
LIDAR_MAX_RANGE = 5.6

MAP_SIZE = 64
MAP_RES = 0.08
MAP_HALF = MAP_SIZE * MAP_RES / 2.0
CHANNELS = ("occupancy", "door", "button", "movable", "immovable", "drawer", "chair", "task")
N_CHANNELS = len(CHANNELS)
OBSTACLE_CHANNELS = ("occupancy", "door", "button", "movable", "immovable", "drawer", "chair")

N_WAYPOINTS = 10
WAYPOINT_SPACING = 0.2
TASK_VEC_DIM = 2 + 2 * N_WAYPOINTS

GEODESIC_RES = 0.08
# cells closer than this to a wall are not part of the traversable plan
GEODESIC_CLEARANCE = 0.4

_HALF_DIAG = MAP_RES * math.sqrt(2.0) / 2.0


class SenseError(ValueError):
    pass


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray
    angles: np.ndarray
    fov: float = LIDAR_FOV
    max_range: float = LIDAR_MAX_RANGE


def lidar_angles() -> np.ndarray:
    """Ray angles relative to the heading; both FOV endpoints included."""
    return np.linspace(-LIDAR_FOV / 2.0, LIDAR_FOV / 2.0, LIDAR_RAYS)


_ANGLES = lidar_angles()


def scene_segments(state: SceneState, near: Optional[tuple] = None, radius: float = np.inf) -> np.ndarray:
    """Walls plus every object edge, optionally limited to a neighbourhood."""
    parts = [state.walls]
    for o in state.objects:
        if near is not None and math.hypot(o.center[0] - near[0], o.center[1] - near[1]) > radius + o.radius:
            continue
        parts.append(geo.polygon_edges(o.polygon))
    return np.vstack(parts) if len(parts) > 1 else state.walls


def raycast_lidar(state: SceneState, max_range: float = LIDAR_MAX_RANGE) -> LidarScan:
    """220 rays over a 220 degree arc centred on the heading."""
    r = state.robot
    segs = scene_segments(state, (r.x, r.y), max_range)
    ranges = geo.ray_segment_ranges(r.x, r.y, _ANGLES + r.theta, segs, max_range)
    return LidarScan(ranges=ranges, angles=_ANGLES.copy(), max_range=max_range)


# ---------------------------------------------------------------------------
# egocentric grid


def cell_to_ego(row, col):
    """Cell centre in the robot frame as ``(forward, left)`` metres."""
    f = (MAP_SIZE / 2.0 - np.asarray(row) - 0.5) * MAP_RES
    l = (MAP_SIZE / 2.0 - np.asarray(col) - 0.5) * MAP_RES
    return f, l


def ego_to_cell(f, l):
    row = np.floor(MAP_SIZE / 2.0 - np.asarray(f) / MAP_RES).astype(int)
    col = np.floor(MAP_SIZE / 2.0 - np.asarray(l) / MAP_RES).astype(int)
    return row, col


_ROWS, _COLS = np.meshgrid(np.arange(MAP_SIZE), np.arange(MAP_SIZE), indexing="ij")
_EGO_F, _EGO_L = cell_to_ego(_ROWS, _COLS)
_EGO_PTS = np.stack([_EGO_F.ravel(), _EGO_L.ravel()], axis=1)


@dataclass(frozen=True)
class GridMap:
    """Egocentric multi-channel map: robot at the grid centre, heading up.

    Row 0 is the far-forward edge; column 0 is the robot's far left.
    """

    channels: np.ndarray
    origin: tuple  # robot (x, y, theta) in the world
    resolution: float = MAP_RES

    def channel(self, name: str) -> np.ndarray:
        return self.channels[CHANNELS.index(name)]

    def cell_to_world(self, row, col):
        f, l = cell_to_ego(row, col)
        x, y, th = self.origin
        c, s = math.cos(th), math.sin(th)
        return x + c * f - s * l, y + s * f + c * l

    def world_to_cell(self, wx, wy):
        x, y, th = self.origin
        c, s = math.cos(th), math.sin(th)
        dx, dy = np.asarray(wx) - x, np.asarray(wy) - y
        return ego_to_cell(c * dx + s * dy, -s * dx + c * dy)

    def obstacles(self) -> np.ndarray:
        """Boolean union of occupancy and every object channel."""
        idx = [CHANNELS.index(c) for c in OBSTACLE_CHANNELS]
        return self.channels[idx].max(axis=0) > 0.5


def ego_cell_world_points(x: float, y: float, th: float) -> np.ndarray:
    c, s = math.cos(th), math.sin(th)
    wx = x + c * _EGO_PTS[:, 0] - s * _EGO_PTS[:, 1]
    wy = y + s * _EGO_PTS[:, 0] + c * _EGO_PTS[:, 1]
    return np.stack([wx, wy], axis=1)


class WallDistanceField:
    """Distance to the nearest wall sampled on a fine world grid."""

    def __init__(self, walls: np.ndarray, bounds, res: float = 0.02, margin: float = 3.0):
        self.res = res
        self.x0 = bounds[0] - margin
        self.y0 = bounds[1] - margin
        nx = int(math.ceil((bounds[2] - bounds[0] + 2 * margin) / res)) + 1
        ny = int(math.ceil((bounds[3] - bounds[1] + 2 * margin) / res)) + 1
        xs = self.x0 + np.arange(nx) * res
        ys = self.y0 + np.arange(ny) * res
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        dist = np.empty(len(pts))
        for start in range(0, len(pts), 20000):
            dist[start:start + 20000] = geo.points_segments_min_distance(pts[start:start + 20000], walls)
        self.dist = dist.reshape(ny, nx)

    def lookup(self, pts: np.ndarray) -> np.ndarray:
        ix = np.rint((pts[:, 0] - self.x0) / self.res).astype(int)
        iy = np.rint((pts[:, 1] - self.y0) / self.res).astype(int)
        ny, nx = self.dist.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out = np.full(len(pts), np.inf)
        out[ok] = self.dist[iy[ok], ix[ok]]
        return out


_WALL_FIELDS: "OrderedDict[bytes, WallDistanceField]" = OrderedDict()


def wall_distance_field(state: SceneState) -> WallDistanceField:
    key = state.walls.tobytes() + np.asarray(state.bounds, dtype=np.float64).tobytes()
    wf = _WALL_FIELDS.get(key)
    if wf is None:
        wf = WallDistanceField(state.walls, state.bounds)
        _WALL_FIELDS[key] = wf
        if len(_WALL_FIELDS) > 32:
            _WALL_FIELDS.popitem(last=False)
    else:
        _WALL_FIELDS.move_to_end(key)
    return wf


def _object_channel(obj) -> str:
    if obj.kind == "RevoluteDoor":
        return "door"
    if obj.kind == "Button":
        return "button"
    if obj.kind == "PrismaticDrawer":
        return "drawer"
    if obj.kind == "Chair":
        return "chair"
    return "movable" if obj.mass_class == "light" else "immovable"


def rasterize_polygon_ego(poly: np.ndarray, x: float, y: float, th: float) -> np.ndarray:
    """Cells (flattened mask) overlapping a world-frame convex polygon."""
    c, s = math.cos(th), math.sin(th)
    dx, dy = poly[:, 0] - x, poly[:, 1] - y
    local = np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)
    fmin, lmin = local.min(axis=0) - MAP_RES
    fmax, lmax = local.max(axis=0) + MAP_RES
    if fmax < -MAP_HALF or fmin > MAP_HALF or lmax < -MAP_HALF or lmin > MAP_HALF:
        return np.zeros(MAP_SIZE * MAP_SIZE, dtype=bool)
    cand = (_EGO_PTS[:, 0] >= fmin) & (_EGO_PTS[:, 0] <= fmax) & (_EGO_PTS[:, 1] >= lmin) & (_EGO_PTS[:, 1] <= lmax)
    mask = np.zeros(MAP_SIZE * MAP_SIZE, dtype=bool)
    idx = np.flatnonzero(cand)
    if len(idx):
        mask[idx] = geo.points_in_polygon(_EGO_PTS[idx], local, tol=MAP_RES / 2.0)
    return mask


def build_grid_map(state: SceneState, scan: Optional[LidarScan] = None, task_layer: Optional[np.ndarray] = None) -> GridMap:
    r = state.robot
    if scan is None:
        scan = raycast_lidar(state)
    ch = np.zeros((N_CHANNELS, MAP_SIZE * MAP_SIZE), dtype=np.float32)
    world_pts = ego_cell_world_points(r.x, r.y, r.theta)
    wf = wall_distance_field(state)
    occ = wf.lookup(world_pts) <= _HALF_DIAG + wf.res
    hits = scan.ranges < scan.max_range
    if hits.any():
        ang = scan.angles[hits]
        f = scan.ranges[hits] * np.cos(ang)
        l = scan.ranges[hits] * np.sin(ang)
        rows, cols = ego_to_cell(f, l)
        ok = (rows >= 0) & (rows < MAP_SIZE) & (cols >= 0) & (cols < MAP_SIZE)
        occ[rows[ok] * MAP_SIZE + cols[ok]] = True
    ch[0] = occ
    for o in state.objects:
        if math.hypot(o.center[0] - r.x, o.center[1] - r.y) > MAP_HALF * math.sqrt(2) + o.radius:
            continue
        mask = rasterize_polygon_ego(o.polygon, r.x, r.y, r.theta)
        ch[CHANNELS.index(_object_channel(o))][mask] = 1.0
    ch = ch.reshape(N_CHANNELS, MAP_SIZE, MAP_SIZE)
    if task_layer is not None:
        ch[CHANNELS.index("task")] = task_layer
    return GridMap(channels=ch, origin=(r.x, r.y, r.theta))


# ---------------------------------------------------------------------------
# geodesic field


class _StaticPlan:
    """Obstacle raster and 8-connected graph of a static floor plan."""

    def __init__(self, walls: np.ndarray, bounds, res: float, clearance: float):
        self.res = res
        self.x0, self.y0 = bounds[0], bounds[1]
        self.nx = int(math.ceil((bounds[2] - bounds[0]) / res))
        self.ny = int(math.ceil((bounds[3] - bounds[1]) / res))
        xs = self.x0 + (np.arange(self.nx) + 0.5) * res
        ys = self.y0 + (np.arange(self.ny) + 0.5) * res
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        d = geo.points_segments_min_distance(pts, walls) if len(walls) else np.full(len(pts), np.inf)
        self.blocked = (d <= max(clearance, res * math.sqrt(2.0) / 2.0) + 1e-9).reshape(self.ny, self.nx)
        self.graph = grid_graph(~self.blocked, res)


def grid_graph(free: np.ndarray, res: float):
    """Sparse 8-connected adjacency over free cells (row-major indices)."""
    ny, nx = free.shape
    idx = np.arange(ny * nx).reshape(ny, nx)
    rows, cols, w = [], [], []
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        cost = res * (math.sqrt(2.0) if dx and dy else 1.0)
        ys = slice(0, ny - dy)
        ys2 = slice(dy, ny)
        if dx >= 0:
            xs, xs2 = slice(0, nx - dx), slice(dx, nx)
        else:
            xs, xs2 = slice(-dx, nx), slice(0, nx + dx)
        ok = free[ys, xs] & free[ys2, xs2]
        a = idx[ys, xs][ok]
        b = idx[ys2, xs2][ok]
        rows += [a, b]
        cols += [b, a]
        w += [np.full(len(a), cost)] * 2
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = np.concatenate(w)
    return coo_matrix((w, (rows, cols)), shape=(ny * nx, ny * nx)).tocsr()


_STATIC_PLANS: "OrderedDict[bytes, _StaticPlan]" = OrderedDict()


def _static_plan(walls: np.ndarray, bounds, res: float, clearance: float) -> _StaticPlan:
    key = (walls.tobytes() + np.asarray(bounds, dtype=np.float64).tobytes()
           + np.array([res, clearance], dtype=np.float64).tobytes())
    sp = _STATIC_PLANS.get(key)
    if sp is None:
        sp = _StaticPlan(walls, bounds, res, clearance)
        _STATIC_PLANS[key] = sp
        if len(_STATIC_PLANS) > 16:
            _STATIC_PLANS.popitem(last=False)
    return sp


_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_WINDOW = tuple((di, dj) for di in range(-2, 3) for dj in range(-2, 3))


@dataclass(frozen=True)
class GeodesicField:
    """Shortest-path distance (m) to the goal over the static floor plan.

    Unreachable and wall cells hold ``inf``. Cell ``(i, j)`` is row ``i``
    (y axis) and column ``j`` (x axis) of a grid anchored at ``origin``.
    """

    dist: np.ndarray
    origin: tuple
    resolution: float
    goal: tuple

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        j = int(math.floor((x - self.origin[0]) / self.resolution))
        i = int(math.floor((y - self.origin[1]) / self.resolution))
        return i, j

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + (j + 0.5) * self.resolution,
                self.origin[1] + (i + 0.5) * self.resolution)

    def _at(self, i, j):
        ny, nx = self.dist.shape
        if 0 <= i < ny and 0 <= j < nx:
            return self.dist[i, j]
        return math.inf

    def value_at(self, x: float, y: float) -> float:
        """Bilinear interpolation between cell centres; nearest finite cell
        near walls."""
        fx = (x - self.origin[0]) / self.resolution - 0.5
        fy = (y - self.origin[1]) / self.resolution - 0.5
        j0 = int(math.floor(fx))
        i0 = int(math.floor(fy))
        tx, ty = fx - j0, fy - i0
        v00, v01 = self._at(i0, j0), self._at(i0, j0 + 1)
        v10, v11 = self._at(i0 + 1, j0), self._at(i0 + 1, j0 + 1)
        if math.isfinite(v00 + v01 + v10 + v11):
            return float((v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty)
        v, _, _ = self._nearest_finite(x, y)
        return float(v)

    def _nearest_finite(self, x: float, y: float):
        """Best ``value + distance`` over finite cells in a 5x5 window."""
        i, j = self.cell_of(x, y)
        best = (math.inf, i, j)
        for di, dj in _WINDOW:
            v = self._at(i + di, j + dj)
            if math.isfinite(v):
                cx, cy = self.cell_center(i + di, j + dj)
                cand = (v + math.hypot(cx - x, cy - y), i + di, j + dj)
                if cand < best:
                    best = cand
        return best

    def trace(self, x: float, y: float, max_length: float = math.inf) -> list:
        """Steepest-descent polyline from ``(x, y)`` towards the goal."""
        i, j = self.cell_of(x, y)
        if not math.isfinite(self._at(i, j)):
            v, i, j = self._nearest_finite(x, y)
            if not math.isfinite(v):
                raise SenseError(f"no finite geodesic distance near ({x:.2f}, {y:.2f})")
        pts = [(x, y)]
        length = 0.0
        while self._at(i, j) > 0.0:
            cur = self._at(i, j)
            nxt = min((self._at(i + di, j + dj), i + di, j + dj) for di, dj in _NEIGHBORS)
            if nxt[0] >= cur:
                break
            i, j = nxt[1], nxt[2]
            p = self.cell_center(i, j)
            length += math.hypot(p[0] - pts[-1][0], p[1] - pts[-1][1])
            pts.append(p)
            if length > max_length:
                return pts
        gx, gy = self.goal
        length += math.hypot(gx - pts[-1][0], gy - pts[-1][1])
        pts.append((gx, gy))
        return pts

    def waypoints(self, x: float, y: float, n: int = N_WAYPOINTS, spacing: float = WAYPOINT_SPACING) -> np.ndarray:
        """Next ``n`` points along the traced path, ``spacing`` metres apart
        in arc length; padded with the goal when the path runs out."""
        pts = np.asarray(self.trace(x, y, max_length=n * spacing + 0.5))
        seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        targets = spacing * np.arange(1, n + 1)
        out = np.empty((n, 2))
        for k, s in enumerate(targets):
            if s >= cum[-1]:
                out[k] = pts[-1]
                continue
            m = int(np.searchsorted(cum, s, side="right")) - 1
            t = (s - cum[m]) / seg[m] if seg[m] > 0 else 0.0
            out[k] = pts[m] + t * (pts[m + 1] - pts[m])
        return out


def compute_geodesic_field(walls: np.ndarray, goal, bounds, res: float = GEODESIC_RES,
                           clearance: float = GEODESIC_CLEARANCE) -> GeodesicField:
    """8-connected Dijkstra distances to ``goal`` over walls only.

    Doors and other movable objects are deliberately ignored. Cells within
    ``clearance`` of a wall are excluded so the traced path stays drivable.
    """
    sp = _static_plan(np.ascontiguousarray(walls, dtype=np.float64), tuple(bounds), res, clearance)
    gx, gy = float(goal[0]), float(goal[1])
    j = int(math.floor((gx - sp.x0) / res))
    i = int(math.floor((gy - sp.y0) / res))
    if not (0 <= i < sp.ny and 0 <= j < sp.nx):
        raise SenseError(f"goal ({gx:.2f}, {gy:.2f}) outside the floor plan")
    if sp.blocked[i, j]:
        raise SenseError(f"goal ({gx:.2f}, {gy:.2f}) lies inside a wall")
    d = dijkstra(sp.graph, directed=False, indices=i * sp.nx + j)
    d = d.reshape(sp.ny, sp.nx)
    d[sp.blocked] = np.inf
    d.setflags(write=False)
    return GeodesicField(dist=d, origin=(sp.x0, sp.y0), resolution=res, goal=(gx, gy))


def field_for_grid(free: np.ndarray, goal_cell: tuple, res: float = GEODESIC_RES,
                   origin=(0.0, 0.0)) -> GeodesicField:
    """Geodesic field on an explicit boolean free-space grid."""
    g = grid_graph(free, res)
    ny, nx = free.shape
    i, j = goal_cell
    if not free[i, j]:
        raise SenseError("goal cell is not free")
    d = dijkstra(g, directed=False, indices=i * nx + j).reshape(ny, nx)
    d[~free] = np.inf
    goal = (origin[0] + (j + 0.5) * res, origin[1] + (i + 0.5) * res)
    return GeodesicField(dist=d, origin=origin, resolution=res, goal=goal)


# ---------------------------------------------------------------------------
# observation


@dataclass(frozen=True)
class Observation:
    map: GridMap
    task_vec: np.ndarray


def _draw_blob(layer: np.ndarray, f: float, l: float, value: float):
    row, col = ego_to_cell(f, l)
    row, col = int(row), int(col)
    r0, r1 = max(row - 1, 0), min(row + 2, MAP_SIZE)
    c0, c1 = max(col - 1, 0), min(col + 2, MAP_SIZE)
    if r0 < r1 and c0 < c1:
        np.maximum(layer[r0:r1, c0:c1], value, out=layer[r0:r1, c0:c1])


def build_observation(state: SceneState, task, field: Optional[GeodesicField]) -> Observation:
    """Egocentric map plus the task vector.

    ``task`` needs a ``family`` (``"nav"``, ``"reach"`` or ``"mm"``); the goal
    is taken from ``field`` when given, else from ``task.goal``.
    Navigation tasks draw the goal and the next waypoints into the task
    channel with intensity rising along the path; mobile-manipulation tasks
    leave it (and the task vector) zero.
    """
    r = state.robot
    layer = np.zeros((MAP_SIZE, MAP_SIZE), dtype=np.float32)
    vec = np.zeros(TASK_VEC_DIM, dtype=np.float32)
    family = getattr(task, "family", "mm")
    goal = field.goal if field is not None else getattr(task, "goal", None)
    if family != "mm" and goal is not None:
        gf, gl = r.to_local(*goal)
        vec[0] = math.hypot(gf, gl)
        vec[1] = math.atan2(gl, gf) if vec[0] > 1e-9 else 0.0
        if family == "nav" and field is not None:
            wps = field.waypoints(r.x, r.y)
            for k, (wx, wy) in enumerate(wps):
                wf, wl = r.to_local(wx, wy)
                vec[2 + 2 * k] = wf
                vec[3 + 2 * k] = wl
                _draw_blob(layer, wf, wl, (k + 1) / (N_WAYPOINTS + 1))
        _draw_blob(layer, gf, gl, 1.0)
    scan = raycast_lidar(state)
    gm = build_grid_map(state, scan, layer)
    return Observation(map=gm, task_vec=vec)


# ---------------------------------------------------------------------------
# debug export


def to_pgm_bytes(arr: np.ndarray, vmax: Optional[float] = None) -> bytes:
    """Binary PGM (P5, maxval 255). Non-finite cells map to 255."""
    a = np.asarray(arr, dtype=np.float64)
    finite = np.isfinite(a)
    if vmax is None:
        vmax = float(a[finite].max()) if finite.any() else 1.0
    vmax = vmax if vmax > 0 else 1.0
    img = np.full(a.shape, 255, dtype=np.uint8)
    img[finite] = np.clip(np.rint(a[finite] / vmax * 254.0), 0, 254).astype(np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()


def write_pgm(path, arr: np.ndarray, vmax: Optional[float] = None):
    with open(path, "wb") as fh:
        fh.write(to_pgm_bytes(arr, vmax))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
