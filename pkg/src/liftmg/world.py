"""Quasi-static 2D simulator: a disc robot with a point end-effector.

The robot base is a disc of radius :data:`ROBOT_RADIUS`; the end-effector
(EE) is a point constrained to an annulus around the base centre and rides
rigidly with the base. Objects only move while the EE sweeps through them.
All operations are pure functions from one :class:`SceneState` to the next.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import tomli
import tomli_w

from liftmg import geometry as geo

ROBOT_RADIUS = 0.3
EE_MIN_REACH = 0.2
EE_MAX_REACH = 1.0
EE_HOME = (0.3, 0.0)

ACTION_DT = 0.1
PHYSICS_DT = 0.025
N_SUBSTEPS = 4

V_MAX = 0.5
W_MAX = 1.0
EE_STEP_MAX = 0.05

HINGE_DEADZONE = 0.1
CONTACT_TOL = 0.01

KINDS = ("RevoluteDoor", "PrismaticDrawer", "Button", "FreeBox", "Chair")
MASS_CLASSES = ("light", "immovable")
POSE_KINDS = ("FreeBox", "Chair")


class SceneError(ValueError):
    """Raised for malformed scene descriptors or invalid scene states."""


@dataclass(frozen=True, slots=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", geo.normalize_angle(float(self.theta)))

    def to_local(self, px: float, py: float) -> tuple[float, float]:
        """World point into this pose's frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = px - self.x, py - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def to_world(self, lx: float, ly: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * lx - s * ly, self.y + s * lx + c * ly


@dataclass(frozen=True)
class ArticulatedObject:
    """A door, drawer, button or free-standing box/chair.

    ``q`` is a float joint value for doors/drawers/buttons and a
    :class:`Pose2D` for free objects. For free objects ``q_limits`` is the
    axis-aligned box ``((xlo, ylo), (xhi, yhi))`` their position must stay in.
    """

    id: str
    kind: str
    anchor: Pose2D
    q: Union[float, Pose2D]
    q_limits: tuple
    mass_class: str
    footprint: tuple
    link: Optional[str] = None
    polygon: np.ndarray = field(init=False, compare=False, repr=False)
    center: tuple = field(init=False, compare=False, repr=False)
    radius: float = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        local = np.asarray(self.footprint, dtype=np.float64)
        poly = geo.transform_points(local, *self.frame())
        poly.setflags(write=False)
        object.__setattr__(self, "polygon", poly)
        cx, cy = poly.mean(axis=0)
        object.__setattr__(self, "center", (float(cx), float(cy)))
        object.__setattr__(self, "radius", float(np.hypot(poly[:, 0] - cx, poly[:, 1] - cy).max()))

    def frame(self) -> tuple[float, float, float]:
        """World pose of the footprint frame for the current joint value."""
        a = self.anchor
        if self.kind == "RevoluteDoor":
            return a.x, a.y, a.theta + self.q
        if self.kind == "PrismaticDrawer":
            return a.x + self.q * math.cos(a.theta), a.y + self.q * math.sin(a.theta), a.theta
        if self.kind in POSE_KINDS:
            return self.q.x, self.q.y, self.q.theta
        return a.x, a.y, a.theta

    def with_q(self, q) -> "ArticulatedObject":
        return dataclasses.replace(self, q=q)

    @property
    def is_pose_object(self) -> bool:
        return self.kind in POSE_KINDS


@dataclass(frozen=True)
class LowLevelAction:
    """Base velocities and an EE displacement expressed in the robot frame."""

    v: float = 0.0
    w: float = 0.0
    ee_dx: float = 0.0
    ee_dy: float = 0.0

    def clamped(self) -> "LowLevelAction":
        return LowLevelAction(
            min(max(self.v, -V_MAX), V_MAX),
            min(max(self.w, -W_MAX), W_MAX),
            min(max(self.ee_dx, -EE_STEP_MAX), EE_STEP_MAX),
            min(max(self.ee_dy, -EE_STEP_MAX), EE_STEP_MAX),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.w, self.ee_dx, self.ee_dy])


@dataclass
class StepEvents:
    body_collision: bool = False
    joint_deltas: dict = field(default_factory=dict)
    button_pressed: set = field(default_factory=set)
    ee_contact: bool = False
    ee_contact_duration: float = 0.0


@dataclass(frozen=True)
class SceneState:
    robot: Pose2D
    ee: tuple
    objects: tuple
    walls: np.ndarray = field(compare=False, repr=False)
    time: float = 0.0
    ee_contact_time: float = 0.0
    name: str = field(default="", compare=False)
    bounds: tuple = field(default=(0.0, 0.0, 10.0, 10.0), compare=False)
    regions: Mapping = field(default_factory=dict, compare=False, repr=False)

    def object(self, oid: str) -> ArticulatedObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def ee_offset(self) -> tuple[float, float]:
        """EE position in the robot frame."""
        return self.robot.to_local(*self.ee)


def state_digest(state: SceneState) -> str:
    """Hash of every numeric field, including walls, for determinism checks."""
    h = hashlib.sha256()
    r = state.robot
    h.update(np.array([r.x, r.y, r.theta, *state.ee, state.time, state.ee_contact_time]).tobytes())
    h.update(np.ascontiguousarray(state.walls, dtype=np.float64).tobytes())
    for o in state.objects:
        h.update(o.id.encode())
        q = o.q
        vals = [q.x, q.y, q.theta] if isinstance(q, Pose2D) else [q]
        h.update(np.array(vals, dtype=np.float64).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# collision


def disc_collides(state: SceneState, x: float, y: float, skip: Optional[str] = None) -> bool:
    r = ROBOT_RADIUS
    if len(state.walls) and geo.point_segment_distance(x, y, state.walls).min() < r:
        return True
    for o in state.objects:
        if o.id == skip:
            continue
        cx, cy = o.center
        if math.hypot(cx - x, cy - y) > o.radius + r:
            continue
        if geo.disc_hits_polygon(x, y, r, o.polygon):
            return True
    return False


def check_body_collision(state: SceneState) -> bool:
    """True iff the base disc touches a wall or an object footprint.

    The end-effector is excluded; it may rest inside objects.
    """
    return disc_collides(state, state.robot.x, state.robot.y)


# ---------------------------------------------------------------------------
# pushing


def _clamp(v, lo, hi):
    return min(max(v, lo), hi)


def _object_blocked(state: SceneState, obj: ArticulatedObject, objects: Sequence[ArticulatedObject]) -> bool:
    poly = obj.polygon
    if geo.disc_hits_polygon(state.robot.x, state.robot.y, ROBOT_RADIUS, poly):
        return True
    if obj.is_pose_object:
        if geo.segments_cross_polygon(_near_walls(state.walls, obj), poly):
            return True
        for other in objects:
            if other.id == obj.id:
                continue
            if math.hypot(other.center[0] - obj.center[0], other.center[1] - obj.center[1]) > other.radius + obj.radius:
                continue
            if geo.polygons_overlap(poly, other.polygon):
                return True
    return False


def _near_walls(walls: np.ndarray, obj: ArticulatedObject) -> np.ndarray:
    if len(walls) == 0:
        return walls
    d = geo.point_segment_distance(obj.center[0], obj.center[1], walls)
    return walls[d <= obj.radius + 1e-6]


def apply_push(state: SceneState, sweep, events: Optional[StepEvents] = None):
    """Resolve the effect of an EE sweep ``(p, q)`` on every object it touches.

    Returns ``(new_state, events)``. Doors rotate by the tangential sweep
    component over the lever arm, drawers slide by the axial component,
    buttons latch, light free objects translate along the contact normal
    unless that would penetrate walls, other objects or the base.
    """
    if events is None:
        events = StepEvents()
    p, q = sweep
    sx, sy = q[0] - p[0], q[1] - p[1]
    objects = list(state.objects)
    changed = False
    minx, maxx = min(p[0], q[0]), max(p[0], q[0])
    miny, maxy = min(p[1], q[1]), max(p[1], q[1])
    for i, obj in enumerate(objects):
        cx, cy = obj.center
        rr = obj.radius
        if cx + rr < minx or cx - rr > maxx or cy + rr < miny or cy - rr > maxy:
            continue
        hit = geo.segment_polygon_contact(p, q, obj.polygon)
        if hit is None:
            continue
        events.ee_contact = True
        if obj.mass_class == "immovable" and obj.kind != "Button":
            continue
        contact, normal = hit
        new = None
        if obj.kind == "RevoluteDoor":
            rx, ry = contact[0] - obj.anchor.x, contact[1] - obj.anchor.y
            lever = math.hypot(rx, ry)
            if lever < HINGE_DEADZONE:
                continue
            dq = (sx * -ry + sy * rx) / (lever * lever)
            nq = _clamp(obj.q + dq, *obj.q_limits)
            if nq != obj.q:
                new = obj.with_q(nq)
        elif obj.kind == "PrismaticDrawer":
            dq = sx * math.cos(obj.anchor.theta) + sy * math.sin(obj.anchor.theta)
            nq = _clamp(obj.q + dq, *obj.q_limits)
            if nq != obj.q:
                new = obj.with_q(nq)
        elif obj.kind == "Button":
            if obj.q < 1.0 and geo.point_in_polygon(contact[0], contact[1], obj.polygon, 1e-9):
                objects[i] = obj.with_q(1.0)
                events.button_pressed.add(obj.id)
                events.joint_deltas[obj.id] = events.joint_deltas.get(obj.id, 0.0) + 1.0
                changed = True
                if obj.link:
                    for j, other in enumerate(objects):
                        if other.id == obj.link and other.q != other.q_limits[1]:
                            d = other.q_limits[1] - other.q
                            objects[j] = other.with_q(other.q_limits[1])
                            events.joint_deltas[other.id] = events.joint_deltas.get(other.id, 0.0) + d
            continue
        else:
            nx, ny = -normal[0], -normal[1]
            push = sx * nx + sy * ny
            if push <= 0.0:
                continue
            (xlo, ylo), (xhi, yhi) = obj.q_limits
            tx = _clamp(obj.q.x + push * nx, xlo, xhi)
            ty = _clamp(obj.q.y + push * ny, ylo, yhi)
            if tx != obj.q.x or ty != obj.q.y:
                new = obj.with_q(Pose2D(tx, ty, obj.q.theta))
        if new is None:
            continue
        if _object_blocked(state, new, objects):
            continue
        if new.is_pose_object:
            d = math.hypot(new.q.x - obj.q.x, new.q.y - obj.q.y)
        else:
            d = new.q - obj.q
        events.joint_deltas[obj.id] = events.joint_deltas.get(obj.id, 0.0) + d
        objects[i] = new
        changed = True
    if changed:
        state = dataclasses.replace(state, objects=tuple(objects))
    return state, events


def ee_in_contact(state: SceneState) -> bool:
    ex, ey = state.ee
    for o in state.objects:
        cx, cy = o.center
        if math.hypot(cx - ex, cy - ey) > o.radius + CONTACT_TOL:
            continue
        if geo.point_in_polygon(ex, ey, o.polygon, CONTACT_TOL):
            return True
    return False


def clamp_to_annulus(ox: float, oy: float) -> tuple[float, float]:
    r = math.hypot(ox, oy)
    if r > EE_MAX_REACH:
        return ox * EE_MAX_REACH / r, oy * EE_MAX_REACH / r
    if r < EE_MIN_REACH:
        if r < 1e-12:
            return EE_MIN_REACH, 0.0
        return ox * EE_MIN_REACH / r, oy * EE_MIN_REACH / r
    return ox, oy


def step(state: SceneState, action: LowLevelAction, base_enabled: bool = True):
    """Advance one 0.1 s action step as four 0.025 s physics substeps.

    Returns ``(new_state, events)``. The base moves by forward-Euler unicycle
    integration and backs out to the last non-penetrating substep on contact.
    """
    a = action.clamped()
    v, w = (a.v, a.w) if base_enabled else (0.0, 0.0)
    events = StepEvents()
    x, y, th = state.robot.x, state.robot.y, state.robot.theta
    ox, oy = state.ee_offset()
    ddx = a.ee_dx / N_SUBSTEPS
    ddy = a.ee_dy / N_SUBSTEPS
    base_moving = v != 0.0 or w != 0.0
    arm_moving = ddx != 0.0 or ddy != 0.0
    blocked = False
    cur = state
    for _ in range(N_SUBSTEPS):
        if base_moving and not blocked:
            nx = x + v * math.cos(th) * PHYSICS_DT
            ny = y + v * math.sin(th) * PHYSICS_DT
            nth = th + w * PHYSICS_DT
            if (nx != x or ny != y) and disc_collides(cur, nx, ny):
                events.body_collision = True
                blocked = True
            else:
                x, y, th = nx, ny, nth
        pose = Pose2D(x, y, th)
        carried = pose.to_world(ox, oy)
        if arm_moving:
            ox, oy = clamp_to_annulus(ox + ddx, oy + ddy)
            ee = pose.to_world(ox, oy)
            cur = dataclasses.replace(cur, robot=pose, ee=ee)
            cur, events = apply_push(cur, (carried, ee), events)
        else:
            cur = dataclasses.replace(cur, robot=pose, ee=carried)
    if not events.ee_contact:
        events.ee_contact = ee_in_contact(cur)
    contact_time = state.ee_contact_time + ACTION_DT if events.ee_contact else 0.0
    events.ee_contact_duration = contact_time
    if not base_moving and not arm_moving:
        cur = state
    cur = dataclasses.replace(cur, time=state.time + ACTION_DT, ee_contact_time=contact_time)
    return cur, events


# ---------------------------------------------------------------------------
# scene descriptors

_TOP_KEYS = {"scene", "robot", "walls", "objects", "regions"}
_SCENE_KEYS = {"name", "bounds"}
_ROBOT_KEYS = {"pose", "ee"}
_WALL_KEYS = {"points", "closed"}
_OBJECT_KEYS = {"id", "kind", "anchor", "q", "q_limits", "mass_class", "footprint", "link"}
_REGION_KEYS = {"rect"}


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise SceneError(f"{where}: expected a table")
    unknown = set(table) - allowed
    if unknown:
        raise SceneError(f"{where}: unknown key(s) {sorted(unknown)}")


def _floats(value, n, where):
    if not isinstance(value, list) or len(value) != n:
        raise SceneError(f"{where}: expected {n} numbers")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise SceneError(f"{where}: expected {n} numbers") from None


def _points(value, where, min_len=2):
    if not isinstance(value, list) or len(value) < min_len:
        raise SceneError(f"{where}: expected at least {min_len} [x, y] points")
    return [_floats(p, 2, f"{where}[{i}]") for i, p in enumerate(value)]


def _convex_ccw(pts, where):
    arr = np.asarray(pts, dtype=np.float64)
    n = len(arr)
    signs = []
    for i in range(n):
        a, b, c = arr[i], arr[(i + 1) % n], arr[(i + 2) % n]
        cr = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cr) > 1e-12:
            signs.append(cr > 0)
    if not signs or (any(signs) and not all(signs)):
        raise SceneError(f"{where}: footprint must be a convex polygon")
    if not signs[0]:
        arr = arr[::-1]
    return tuple(tuple(float(v) for v in p) for p in arr)


def _walls_from_polylines(polylines) -> np.ndarray:
    segs = []
    for pts, closed in polylines:
        seq = list(pts) + ([pts[0]] if closed else [])
        for a, b in zip(seq[:-1], seq[1:]):
            segs.append([a[0], a[1], b[0], b[1]])
    arr = np.asarray(segs, dtype=np.float64).reshape(-1, 4)
    arr.setflags(write=False)
    return arr


def validate_object(obj: ArticulatedObject, where: str = "object"):
    lo_hi = obj.q_limits
    if obj.is_pose_object:
        (xlo, ylo), (xhi, yhi) = lo_hi
        if not (xlo <= obj.q.x <= xhi and ylo <= obj.q.y <= yhi):
            raise SceneError(f"{where}.q: pose outside q_limits")
    else:
        lo, hi = lo_hi
        if lo > hi:
            raise SceneError(f"{where}.q_limits: lower bound above upper bound")
        if not (lo <= obj.q <= hi):
            raise SceneError(f"{where}.q: {obj.q} outside q_limits [{lo}, {hi}]")
        if obj.kind == "Button" and obj.q not in (0.0, 1.0):
            raise SceneError(f"{where}.q: button state must be 0 or 1")


def parse_object(o: dict, where: str) -> ArticulatedObject:
    _check_keys(o, _OBJECT_KEYS, where)
    for k in ("id", "kind", "q", "q_limits", "footprint"):
        if k not in o:
            raise SceneError(f"{where}: missing key '{k}'")
    kind = o["kind"]
    if kind not in KINDS:
        raise SceneError(f"{where}.kind: unknown kind {kind!r}")
    mass = o.get("mass_class", "light")
    if mass not in MASS_CLASSES:
        raise SceneError(f"{where}.mass_class: unknown mass class {mass!r}")
    if kind in POSE_KINDS:
        anchor = Pose2D(*_floats(o.get("anchor", [0.0, 0.0, 0.0]), 3, f"{where}.anchor"))
        q = Pose2D(*_floats(o["q"], 3, f"{where}.q"))
        lims = o["q_limits"]
        if not isinstance(lims, list) or len(lims) != 2:
            raise SceneError(f"{where}.q_limits: expected [[xlo, ylo], [xhi, yhi]]")
        q_limits = (tuple(_floats(lims[0], 2, f"{where}.q_limits[0]")),
                    tuple(_floats(lims[1], 2, f"{where}.q_limits[1]")))
    else:
        if "anchor" not in o:
            raise SceneError(f"{where}: missing key 'anchor'")
        anchor = Pose2D(*_floats(o["anchor"], 3, f"{where}.anchor"))
        if not isinstance(o["q"], (int, float)):
            raise SceneError(f"{where}.q: expected a number")
        q = float(o["q"])
        q_limits = tuple(_floats(o["q_limits"], 2, f"{where}.q_limits"))
    footprint = _convex_ccw(_points(o["footprint"], f"{where}.footprint", 3), f"{where}.footprint")
    link = o.get("link") or None
    obj = ArticulatedObject(str(o["id"]), kind, anchor, q, q_limits, mass, footprint, link)
    validate_object(obj, where)
    return obj


def load_scene(descriptor: str) -> SceneState:
    """Parse a TOML scene descriptor into a :class:`SceneState`.

    Unknown keys are rejected; errors name the offending field (and, for
    syntax errors, the line and column reported by the TOML parser).
    """
    try:
        doc = tomli.loads(descriptor)
    except tomli.TOMLDecodeError as exc:
        raise SceneError(f"scene descriptor syntax error: {exc}") from None
    _check_keys(doc, _TOP_KEYS, "scene descriptor")
    scene = doc.get("scene", {})
    _check_keys(scene, _SCENE_KEYS, "scene")
    name = str(scene.get("name", ""))
    robot_t = doc.get("robot", {})
    _check_keys(robot_t, _ROBOT_KEYS, "robot")
    pose = Pose2D(*_floats(robot_t.get("pose", [0.0, 0.0, 0.0]), 3, "robot.pose"))
    ee_off = _floats(robot_t.get("ee", list(EE_HOME)), 2, "robot.ee")
    polylines = []
    walls_t = doc.get("walls", [])
    if not isinstance(walls_t, list):
        raise SceneError("walls: expected an array of tables")
    for i, w in enumerate(walls_t):
        _check_keys(w, _WALL_KEYS, f"walls[{i}]")
        if "points" not in w:
            raise SceneError(f"walls[{i}]: missing key 'points'")
        closed = w.get("closed", False)
        if not isinstance(closed, bool):
            raise SceneError(f"walls[{i}].closed: expected a boolean")
        polylines.append((_points(w["points"], f"walls[{i}].points"), closed))
    walls = _walls_from_polylines(polylines)
    objects = []
    objs_t = doc.get("objects", [])
    if not isinstance(objs_t, list):
        raise SceneError("objects: expected an array of tables")
    for i, o in enumerate(objs_t):
        objects.append(parse_object(o, f"objects[{i}]"))
    ids = [o.id for o in objects]
    if len(set(ids)) != len(ids):
        raise SceneError("objects: duplicate ids")
    for i, o in enumerate(objects):
        if o.link and o.link not in ids:
            raise SceneError(f"objects[{i}].link: unknown object {o.link!r}")
    regions = {}
    regions_t = doc.get("regions", {})
    if not isinstance(regions_t, dict):
        raise SceneError("regions: expected a table")
    for rname, r in regions_t.items():
        _check_keys(r, _REGION_KEYS, f"regions.{rname}")
        if "rect" not in r:
            raise SceneError(f"regions.{rname}: missing key 'rect'")
        regions[rname] = tuple(_floats(r["rect"], 4, f"regions.{rname}.rect"))
    if "bounds" in scene:
        bounds = tuple(_floats(scene["bounds"], 4, "scene.bounds"))
    elif len(walls):
        bounds = (float(walls[:, [0, 2]].min()), float(walls[:, [1, 3]].min()),
                  float(walls[:, [0, 2]].max()), float(walls[:, [1, 3]].max()))
    else:
        bounds = (-5.0, -5.0, 5.0, 5.0)
    ox, oy = clamp_to_annulus(*ee_off)
    state = SceneState(robot=pose, ee=pose.to_world(ox, oy), objects=tuple(objects), walls=walls,
                       name=name, bounds=bounds, regions=regions)
    return state


def dump_scene(state: SceneState) -> str:
    """Serialise a state back into descriptor form (walls as single segments)."""
    r = state.robot
    doc = {
        "scene": {"name": state.name, "bounds": list(state.bounds)},
        "robot": {"pose": [r.x, r.y, r.theta], "ee": list(state.ee_offset())},
        "walls": [{"points": [[s[0], s[1]], [s[2], s[3]]]} for s in state.walls.tolist()],
        "objects": [],
        "regions": {k: {"rect": list(v)} for k, v in state.regions.items()},
    }
    for o in state.objects:
        t = {
            "id": o.id,
            "kind": o.kind,
            "anchor": [o.anchor.x, o.anchor.y, o.anchor.theta],
            "mass_class": o.mass_class,
            "footprint": [list(p) for p in o.footprint],
        }
        if o.is_pose_object:
            t["q"] = [o.q.x, o.q.y, o.q.theta]
            t["q_limits"] = [list(o.q_limits[0]), list(o.q_limits[1])]
        else:
            t["q"] = float(o.q)
            t["q_limits"] = list(o.q_limits)
        if o.link:
            t["link"] = o.link
        doc["objects"].append(t)
    return tomli_w.dumps(doc)


def with_walls(state: SceneState, extra: np.ndarray) -> SceneState:
    walls = np.vstack([state.walls, np.asarray(extra, dtype=np.float64).reshape(-1, 4)])
    walls.setflags(write=False)
    return dataclasses.replace(state, walls=walls)
