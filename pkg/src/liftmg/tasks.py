"""Benchmark tasks: episode randomisation, rewards, success and metrics."""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
import tomli

from liftmg import geometry as geo
from liftmg.sense import GeodesicField, SenseError, compute_geodesic_field
from liftmg.world import (ACTION_DT, EE_HOME, ROBOT_RADIUS, Pose2D, SceneState,
                          StepEvents, load_scene)

TASK_KINDS = ("PointNav", "TabletopReachM", "PushDoorNav", "ButtonDoorNav",
              "InteractiveObstaclesNav", "ArrangeKitchenMM", "ArrangeChairMM")
FAMILIES = ("nav", "reach", "mm")

MAX_REJECTIONS = 100
SPAWN_CLEARANCE = ROBOT_RADIUS + 0.05
GOAL_CLEARANCE = 0.5

# completion thresholds: (metres for drawers and chairs, radians for doors)
COMPLETION_THRESHOLDS = {"5": (0.05, math.radians(5.0)), "10": (0.10, math.radians(10.0))}


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    nav: float = 1.0
    reach: float = 1.0
    succ: float = 10.0
    door: float = 5.0       # per radian opened
    button: float = 5.0     # per first press
    obs: float = 2.0        # per metre a light obstacle moves
    drawer: float = 5.0     # per metre closed
    cabinet: float = 2.0    # per radian closed
    chair: float = 5.0      # per metre closer to the tucked pose


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    scene: str
    family: str
    spawn: str
    goal_region: Optional[str] = None
    goal: Optional[tuple] = None
    weights: RewardWeights = RewardWeights()
    d_th: float = 0.5
    d_gth: float = 0.1
    geodesic_range: tuple = (0.0, math.inf)
    base_enabled: bool = True

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise TaskError(f"unknown task kind {self.kind!r}")
        if self.family not in FAMILIES:
            raise TaskError(f"unknown task family {self.family!r}")


@dataclass
class EpisodeResult:
    success: bool
    path_length: float
    shortest_path: float
    reward_sum: float
    completion: dict = field(default_factory=dict)
    subgoal_stats: dict = field(default_factory=dict)
    steps: int = 0
    low_level_steps: int = 0
    interactions: int = 0
    termination: str = ""
    seed: int = 0


# ---------------------------------------------------------------------------
# fixtures


@functools.lru_cache(maxsize=None)
def scene_descriptor(name: str) -> str:
    return resources.files("liftmg.scenes").joinpath(f"{name}.toml").read_text()


@functools.lru_cache(maxsize=None)
def fixture(name: str) -> SceneState:
    return load_scene(scene_descriptor(name))


@functools.lru_cache(maxsize=None)
def _task_table() -> dict:
    return tomli.loads(scene_descriptor("tasks"))


def list_scenes() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("liftmg.scenes").iterdir()
                  if p.name.endswith(".toml") and p.name != "tasks.toml")


def make_task(kind: str, weights: Optional[RewardWeights] = None, **overrides) -> TaskSpec:
    """Task spec from the packaged task table, with optional overrides."""
    table = _task_table()
    if kind not in table:
        raise TaskError(f"unknown task kind {kind!r}")
    row = dict(table[kind])
    if "geodesic_range" in row:
        row["geodesic_range"] = tuple(row["geodesic_range"])
    row.update(overrides)
    return TaskSpec(kind=kind, weights=weights or RewardWeights(), **row)


def tucked_poses(task: TaskSpec) -> dict:
    """Chair positions authored in the fixture are the fully tucked poses."""
    base = fixture(task.scene)
    return {o.id: (o.q.x, o.q.y) for o in base.objects if o.kind == "Chair"}


# ---------------------------------------------------------------------------
# reset


def _clearance(state: SceneState, x: float, y: float, objects=None) -> float:
    d = geo.point_segment_distance(x, y, state.walls).min() if len(state.walls) else math.inf
    for o in (state.objects if objects is None else objects):
        d = min(d, geo.point_polygon_distance(x, y, o.polygon))
    return float(d)


def _uniform_in(rng, rect):
    x0, y0, x1, y1 = rect
    return float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))


def _randomize_objects(task: TaskSpec, base: SceneState, rng) -> Optional[tuple]:
    objs = list(base.objects)
    if task.kind == "ButtonDoorNav":
        x0, y0, x1, y1 = base.regions["button"]
        for i, o in enumerate(objs):
            if o.kind == "Button":
                y = float(rng.uniform(y0, y1))
                objs[i] = dataclasses.replace(o, anchor=Pose2D(o.anchor.x, y, o.anchor.theta))
    elif task.kind == "InteractiveObstaclesNav":
        light_first = bool(rng.integers(2))
        boxes = [i for i, o in enumerate(objs) if o.kind == "FreeBox"]
        for n, i in enumerate(boxes):
            o = objs[i]
            mass = "light" if (n == 0) == light_first else "immovable"
            q = Pose2D(o.q.x + rng.uniform(-0.05, 0.05), o.q.y + rng.uniform(-0.03, 0.03), 0.0)
            objs[i] = dataclasses.replace(o, q=q, mass_class=mass)
    elif task.kind == "ArrangeKitchenMM":
        for i, o in enumerate(objs):
            lo, hi = o.q_limits
            if o.kind == "PrismaticDrawer":
                objs[i] = o.with_q(float(rng.uniform(lo + 0.35 * (hi - lo), hi)))
            elif o.kind == "RevoluteDoor":
                objs[i] = o.with_q(float(rng.uniform(lo + 0.25 * (hi - lo), hi)))
    elif task.kind == "ArrangeChairMM":
        for i, o in enumerate(objs):
            if o.kind != "Chair":
                continue
            side = -1.0 if o.q.x < 3.0 else 1.0
            (xlo, ylo), (xhi, yhi) = o.q_limits
            x = min(max(o.q.x + side * rng.uniform(0.35, 0.9), xlo), xhi)
            y = min(max(o.q.y + rng.uniform(-0.15, 0.15), ylo), yhi)
            objs[i] = o.with_q(Pose2D(x, y, o.q.theta))
        for i, o in enumerate(objs):
            for other in objs[i + 1:]:
                if geo.polygons_overlap(o.polygon, other.polygon):
                    return None
    return tuple(objs)


def _sample_robot(task: TaskSpec, state: SceneState, rng) -> Optional[Pose2D]:
    x, y = _uniform_in(rng, state.regions[task.spawn])
    if _clearance(state, x, y) < SPAWN_CLEARANCE:
        return None
    if task.base_enabled:
        th = float(rng.uniform(-math.pi, math.pi))
    else:
        th = fixture(task.scene).robot.theta + float(rng.uniform(-0.1, 0.1))
    return Pose2D(x, y, th)


def reset(task: TaskSpec, seed: int):
    """Seeded episode start: ``(SceneState, GeodesicField or None)``.

    The field is computed on walls only and its ``goal`` is the episode goal
    (an EE target for the reach task). Mobile-manipulation tasks return
    ``None`` for the field.
    """
    rng = np.random.default_rng(int(seed))
    base = fixture(task.scene)
    for _ in range(MAX_REJECTIONS):
        objs = _randomize_objects(task, base, rng)
        if objs is None:
            continue
        state = dataclasses.replace(base, objects=objs)
        pose = _sample_robot(task, state, rng)
        if pose is None:
            continue
        ee = pose.to_world(*EE_HOME)
        state = dataclasses.replace(state, robot=pose, ee=ee, time=0.0, ee_contact_time=0.0)
        if task.family == "mm":
            return state, None
        if task.goal is not None:
            goal = tuple(task.goal)
        else:
            goal = _uniform_in(rng, state.regions[task.goal_region])
            if task.family == "nav" and _clearance(state, *goal) < GOAL_CLEARANCE:
                continue
            if task.family == "reach":
                d = math.hypot(goal[0] - pose.x, goal[1] - pose.y)
                if not 0.3 <= d <= 0.95 or math.hypot(goal[0] - ee[0], goal[1] - ee[1]) < 0.25:
                    continue
        try:
            fld = compute_geodesic_field(state.walls, goal, state.bounds)
        except SenseError:
            continue
        if task.family == "nav":
            g = fld.value_at(pose.x, pose.y)
            lo, hi = task.geodesic_range
            if not (math.isfinite(g) and lo <= g <= hi):
                continue
            if is_success(task, state, fld):
                continue
        return state, fld
    raise TaskError(f"{task.kind}: no valid placement for seed {seed} after {MAX_REJECTIONS} samples")


# ---------------------------------------------------------------------------
# rewards and success


def episode_goal(task: TaskSpec, fld: Optional[GeodesicField]):
    if fld is not None:
        return fld.goal
    return task.goal


def is_success(task: TaskSpec, state: SceneState, fld: Optional[GeodesicField] = None) -> bool:
    """Distance predicate for navigation and reaching; always False for MM."""
    if task.family == "mm":
        return False
    goal = episode_goal(task, fld)
    if goal is None:
        raise TaskError(f"{task.kind}: no goal available")
    if task.family == "reach":
        return math.hypot(state.ee[0] - goal[0], state.ee[1] - goal[1]) <= task.d_gth
    return math.hypot(state.robot.x - goal[0], state.robot.y - goal[1]) <= task.d_th


def geodesic_distance(fld: GeodesicField, state: SceneState) -> float:
    return fld.value_at(state.robot.x, state.robot.y)


def _q_by_id(state: SceneState) -> dict:
    return {o.id: o for o in state.objects}


def reward(task: TaskSpec, prev: SceneState, nxt: SceneState, events: StepEvents,
           fld: Optional[GeodesicField] = None) -> float:
    """Per low-level step task reward (sum of the task's active terms)."""
    w = task.weights
    r = 0.0
    if task.family == "nav":
        g0 = geodesic_distance(fld, prev)
        g1 = geodesic_distance(fld, nxt)
        if math.isfinite(g0) and math.isfinite(g1):
            r += w.nav * (g0 - g1)
    elif task.family == "reach":
        gx, gy = episode_goal(task, fld)
        r -= w.reach * math.hypot(nxt.ee[0] - gx, nxt.ee[1] - gy) * ACTION_DT
    if prev.objects is not nxt.objects:
        before = _q_by_id(prev)
        for o in nxt.objects:
            p = before[o.id]
            if p.q == o.q:
                continue
            if task.kind == "PushDoorNav" and o.kind == "RevoluteDoor":
                r += w.door * (o.q - p.q)
            elif task.kind == "ButtonDoorNav" and o.kind == "Button" and p.q < 1.0 <= o.q:
                r += w.button
            elif task.kind == "InteractiveObstaclesNav" and o.is_pose_object and o.mass_class == "light":
                r += w.obs * math.hypot(o.q.x - p.q.x, o.q.y - p.q.y)
            elif task.kind == "ArrangeKitchenMM" and o.kind == "PrismaticDrawer":
                r += w.drawer * (p.q - o.q)
            elif task.kind == "ArrangeKitchenMM" and o.kind == "RevoluteDoor":
                r += w.cabinet * (p.q - o.q)
            elif task.kind == "ArrangeChairMM" and o.kind == "Chair":
                tx, ty = tucked_poses(task)[o.id]
                r += w.chair * (math.hypot(p.q.x - tx, p.q.y - ty) - math.hypot(o.q.x - tx, o.q.y - ty))
    if task.family != "mm" and is_success(task, nxt, fld) and not is_success(task, prev, fld):
        r += w.succ
    return float(r)


def completion_counts(task: TaskSpec, state: SceneState) -> dict:
    """Objects within each completion threshold, keyed ``"5"`` and ``"10"``.

    Kitchen: drawers within 5/10 cm and cabinet doors within 5/10 degrees of
    closed. Chairs: centre within 5/10 cm of the tucked position.
    """
    if task.family != "mm":
        raise TaskError(f"{task.kind}: completion counts only exist for mobile-manipulation tasks")
    out = {}
    tucked = tucked_poses(task) if task.kind == "ArrangeChairMM" else {}
    for key, (lin, ang) in COMPLETION_THRESHOLDS.items():
        n = 0
        for o in state.objects:
            if task.kind == "ArrangeKitchenMM":
                if o.kind == "PrismaticDrawer" and o.q - o.q_limits[0] <= lin + 1e-12:
                    n += 1
                elif o.kind == "RevoluteDoor" and o.q - o.q_limits[0] <= ang + 1e-12:
                    n += 1
            elif o.kind == "Chair":
                tx, ty = tucked[o.id]
                if math.hypot(o.q.x - tx, o.q.y - ty) <= lin + 1e-12:
                    n += 1
        out[key] = n
    return out


def completion_total(task: TaskSpec) -> int:
    base = fixture(task.scene)
    if task.kind == "ArrangeKitchenMM":
        return sum(o.kind in ("PrismaticDrawer", "RevoluteDoor") for o in base.objects)
    return sum(o.kind == "Chair" for o in base.objects)


# ---------------------------------------------------------------------------
# metrics


def spl(results: Sequence[EpisodeResult]) -> float:
    """Mean of ``success * shortest / max(traveled, shortest)``."""
    if len(results) == 0:
        raise TaskError("spl of an empty result set")
    terms = []
    for r in results:
        if r.shortest_path <= 0:
            raise TaskError("spl needs a positive shortest path")
        terms.append(float(r.success) * r.shortest_path / max(r.path_length, r.shortest_path))
    return float(np.mean(terms))


def success_rate(results: Sequence[EpisodeResult]) -> float:
    if len(results) == 0:
        raise TaskError("success rate of an empty result set")
    return float(np.mean([float(r.success) for r in results]))
