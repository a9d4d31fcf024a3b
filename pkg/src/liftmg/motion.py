"""Motion generator: subgoal mapping, base and arm planning, trajectory execution.

Base paths are planned in the egocentric map of the most recent scan and
followed with a rotate-then-translate controller. Arm subgoals reach a map
cell in a straight line and then push along a direction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from liftmg import geometry as geo
from liftmg.planners import PlannerConfig, plan_path
from liftmg.sense import MAP_RES, MAP_SIZE, GridMap, cell_to_ego
from liftmg.world import (ACTION_DT, EE_MAX_REACH, EE_MIN_REACH, EE_STEP_MAX, ROBOT_RADIUS,
                          V_MAX, W_MAX, LowLevelAction, Pose2D, SceneState)

BASE_RANGE = 2.5
BASE_R_MAX = BASE_RANGE * math.sqrt(2.0)
PUSH_DIST_MAX = 0.25

INFLATION = ROBOT_RADIUS + MAP_RES / 2.0
ESCAPE_RADIUS = 0.3
MAX_EXEC_STEPS = 300
REACH_TOL = 0.05
ARM_REACH_SPEED = EE_STEP_MAX
ARM_PUSH_SPEED = 0.02
ROTATE_TOL = 1e-3
POS_TOL = 1e-6

_MAP_SPAN = MAP_SIZE * MAP_RES


@dataclass(frozen=True)
class BaseSubgoal:
    r: float
    phi: float
    dtheta: float


@dataclass(frozen=True)
class ArmSubgoal:
    cell: tuple
    push_dir: float
    push_dist: float


Subgoal = Union[BaseSubgoal, ArmSubgoal]


def clip_subgoal(sg: Subgoal) -> Subgoal:
    """Project a subgoal into its bounds (target square, push length, cell range)."""
    if isinstance(sg, BaseSubgoal):
        r = min(max(float(sg.r), 0.0), BASE_R_MAX)
        fx, fy = r * math.cos(sg.phi), r * math.sin(sg.phi)
        fx = min(max(fx, -BASE_RANGE), BASE_RANGE)
        fy = min(max(fy, -BASE_RANGE), BASE_RANGE)
        r = math.hypot(fx, fy)
        phi = math.atan2(fy, fx) if r > 0 else geo.normalize_angle(sg.phi)
        return BaseSubgoal(r, phi, geo.normalize_angle(sg.dtheta))
    row = int(min(max(int(sg.cell[0]), 0), MAP_SIZE - 1))
    col = int(min(max(int(sg.cell[1]), 0), MAP_SIZE - 1))
    return ArmSubgoal((row, col), geo.normalize_angle(sg.push_dir),
                      min(max(float(sg.push_dist), 0.0), PUSH_DIST_MAX))


def subgoal_in_bounds(sg: Subgoal) -> bool:
    if isinstance(sg, BaseSubgoal):
        fx, fy = sg.r * math.cos(sg.phi), sg.r * math.sin(sg.phi)
        return (0.0 <= sg.r <= BASE_R_MAX + 1e-9 and abs(fx) <= BASE_RANGE + 1e-9
                and abs(fy) <= BASE_RANGE + 1e-9 and -math.pi < sg.dtheta <= math.pi)
    r, c = sg.cell
    return 0 <= r < MAP_SIZE and 0 <= c < MAP_SIZE and 0.0 <= sg.push_dist <= PUSH_DIST_MAX


@dataclass(frozen=True)
class ArmTarget:
    point: tuple
    push_dir: float     # world frame
    push_dist: float


def subgoal_to_world(sg: Subgoal, robot: Pose2D, grid: Optional[GridMap] = None):
    """World-frame target of a subgoal: a Pose2D for base, ArmTarget for arm."""
    if isinstance(sg, BaseSubgoal):
        a = robot.theta + sg.phi
        return Pose2D(robot.x + sg.r * math.cos(a), robot.y + sg.r * math.sin(a), robot.theta + sg.dtheta)
    f, l = cell_to_ego(sg.cell[0], sg.cell[1])
    # the cell grid has no exact centre cell; the map centre is the robot itself
    return ArmTarget(robot.to_world(float(f), float(l)), geo.normalize_angle(robot.theta + sg.push_dir),
                     float(sg.push_dist))


# ---------------------------------------------------------------------------
# plans


PLAN_KINDS = ("BasePath", "ArmReachPush", "Failure")


@dataclass(frozen=True)
class MotionPlan:
    kind: str
    waypoints: tuple = ()
    push: Optional[tuple] = None
    stats: dict = field(default_factory=dict, compare=False)
    reason: str = ""

    @property
    def failed(self) -> bool:
        return self.kind == "Failure"


def failure(reason: str, stats: Optional[dict] = None) -> MotionPlan:
    return MotionPlan("Failure", (), None, dict(stats or {}), reason)


def _ego_to_uv(f, l):
    return _MAP_SPAN / 2.0 - np.asarray(l), _MAP_SPAN / 2.0 - np.asarray(f)


def _uv_to_ego(u, v):
    return _MAP_SPAN / 2.0 - np.asarray(v), _MAP_SPAN / 2.0 - np.asarray(u)


def planning_free_space(grid: GridMap, inflation: float = INFLATION) -> tuple[np.ndarray, np.ndarray]:
    """Free cells for a point robot after inflating every obstacle channel.

    Returns ``(free, clearance)`` where ``clearance`` is each cell's distance
    (m, centre to centre) to the nearest obstacle cell.
    """
    obst = grid.obstacles()
    if obst.any():
        clearance = ndimage.distance_transform_edt(~obst) * grid.resolution
    else:
        clearance = np.full(obst.shape, np.inf)
    return clearance > inflation, clearance


def _escape_start(free: np.ndarray, clearance: np.ndarray, start_uv) -> np.ndarray:
    """Let a start that sits in inflated space move outwards.

    Near the start, cells are blocked only if they are closer to obstacles
    than the start cell itself, so the robot may back away but not approach.
    """
    r0 = int(math.floor(start_uv[1] / MAP_RES))
    c0 = int(math.floor(start_uv[0] / MAP_RES))
    if not (0 <= r0 < MAP_SIZE and 0 <= c0 < MAP_SIZE) or free[r0, c0]:
        return free
    c_start = clearance[r0, c0]
    rows, cols = np.mgrid[0:MAP_SIZE, 0:MAP_SIZE]
    near = np.hypot(rows - r0, cols - c0) * MAP_RES <= ESCAPE_RADIUS
    out = free.copy()
    out[near] = clearance[near] >= c_start
    return out


def plan_base(grid: GridMap, start: Pose2D, goal: Pose2D, cfg: PlannerConfig, rng=None) -> MotionPlan:
    """Collision-free base path from ``start`` to ``goal`` on the local map.

    Positions are planned in 2D; the final waypoint carries the goal heading.
    """
    origin = Pose2D(*grid.origin)
    free, clearance = planning_free_space(grid)
    sf, sl = origin.to_local(start.x, start.y)
    gf, gl = origin.to_local(goal.x, goal.y)
    s_uv = np.array(_ego_to_uv(sf, sl), dtype=np.float64)
    g_uv = np.array(_ego_to_uv(gf, gl), dtype=np.float64)
    free = _escape_start(free, clearance, s_uv)
    if math.hypot(*(g_uv - s_uv)) < 1e-9:
        return MotionPlan("BasePath", (Pose2D(start.x, start.y, goal.theta),), None,
                          {"iterations": 0, "nodes": 1, "planner": cfg.kind})
    path, stats = plan_path(free, MAP_RES, s_uv, g_uv, cfg, rng)
    stats = dict(stats, planner=cfg.kind)
    if path is None:
        return failure(stats.get("reason", "no_path"), stats)
    f, l = _uv_to_ego(path[:, 0], path[:, 1])
    wps = []
    for k in range(len(path)):
        x, y = origin.to_world(float(f[k]), float(l[k]))
        if k + 1 < len(path):
            nx, ny = origin.to_world(float(f[k + 1]), float(l[k + 1]))
            th = math.atan2(ny - y, nx - x)
        else:
            th = goal.theta
        wps.append(Pose2D(x, y, th))
    # the first waypoint is the start itself
    wps[0] = Pose2D(start.x, start.y, wps[0].theta)
    return MotionPlan("BasePath", tuple(wps), None, stats)


def plan_arm(state: SceneState, target, push_dir: float, push_dist: float,
             collision_check: bool = True) -> MotionPlan:
    """Straight-line reach to ``target`` then a push of ``push_dist`` along ``push_dir``.

    Only the reach is checked against walls, and only when
    ``collision_check`` is on; the push is meant to make contact.
    """
    r = state.robot
    d = math.hypot(target[0] - r.x, target[1] - r.y)
    stats = {"collision_check": bool(collision_check), "reach": d}
    if d < EE_MIN_REACH - 1e-9 or d > EE_MAX_REACH + 1e-9:
        return failure("out_of_reach", stats)
    ee = (float(state.ee[0]), float(state.ee[1]))
    tgt = (float(target[0]), float(target[1]))
    if collision_check and geo.segment_hits_segments(ee, tgt, state.walls):
        return failure("reach_blocked", stats)
    end = (tgt[0] + push_dist * math.cos(push_dir), tgt[1] + push_dist * math.sin(push_dir))
    return MotionPlan("ArmReachPush", (ee, tgt), (tgt, end), stats)


def plan_to_csv(plan: MotionPlan) -> str:
    """Waypoint list as CSV: ``index, phase, x, y, theta``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "phase", "x", "y", "theta"])
    if plan.kind == "BasePath":
        for i, p in enumerate(plan.waypoints):
            w.writerow([i, "base", f"{p.x:.6f}", f"{p.y:.6f}", f"{p.theta:.6f}"])
    elif plan.kind == "ArmReachPush":
        i = 0
        for p in plan.waypoints:
            w.writerow([i, "reach", f"{p[0]:.6f}", f"{p[1]:.6f}", ""])
            i += 1
        for p in plan.push[1:]:
            w.writerow([i, "push", f"{p[0]:.6f}", f"{p[1]:.6f}", ""])
            i += 1
    return buf.getvalue()


# ---------------------------------------------------------------------------
# execution


@dataclass
class ExecutionResult:
    actions: list
    steps: int
    aborted: str = ""
    reached: bool = True


def _base_actions_to(pose: Pose2D, wp: Pose2D):
    """Next controller action towards ``wp`` (rotate first, then translate)."""
    dx, dy = wp.x - pose.x, wp.y - pose.y
    dist = math.hypot(dx, dy)
    if dist > POS_TOL:
        err = geo.normalize_angle(math.atan2(dy, dx) - pose.theta)
        if abs(err) > ROTATE_TOL:
            return LowLevelAction(0.0, min(max(err / ACTION_DT, -W_MAX), W_MAX), 0.0, 0.0)
        return LowLevelAction(min(dist / ACTION_DT, V_MAX), 0.0, 0.0, 0.0)
    return None


def _ee_action_to(state: SceneState, point, speed: float):
    lx, ly = state.robot.to_local(*point)
    ox, oy = state.ee_offset()
    dx, dy = lx - ox, ly - oy
    d = math.hypot(dx, dy)
    if d <= POS_TOL:
        return None
    s = min(1.0, speed / d)
    return LowLevelAction(0.0, 0.0, dx * s, dy * s)


def execute(plan: MotionPlan, env, max_steps: int = MAX_EXEC_STEPS) -> ExecutionResult:
    """Drive ``env`` along ``plan`` with low-level actions.

    ``env`` must expose ``state`` and ``apply_low_level(action) -> (events, done)``.
    Stops early on body collision, episode termination or the step cap.
    """
    res = ExecutionResult([], 0)
    if plan.failed:
        res.reached = False
        return res

    def act(a: LowLevelAction) -> bool:
        events, done = env.apply_low_level(a)
        res.actions.append(a)
        res.steps += 1
        if events.body_collision:
            res.aborted = "body_collision"
            return False
        if done:
            res.aborted = "episode_done"
            return False
        if res.steps >= max_steps:
            res.aborted = "step_cap"
            return False
        return True

    if plan.kind == "BasePath":
        for wp in plan.waypoints[1:]:
            while True:
                a = _base_actions_to(env.state.robot, wp)
                if a is None:
                    break
                if not act(a):
                    res.reached = False
                    return res
        final = plan.waypoints[-1].theta
        while True:
            err = geo.normalize_angle(final - env.state.robot.theta)
            if abs(err) <= ROTATE_TOL:
                break
            if not act(LowLevelAction(0.0, min(max(err / ACTION_DT, -W_MAX), W_MAX), 0.0, 0.0)):
                res.reached = False
                return res
        return res

    # arm: reach, stopping early if annulus clamping stalls progress
    target = plan.waypoints[-1]

    def ee_dist():
        return math.hypot(env.state.ee[0] - target[0], env.state.ee[1] - target[1])

    while True:
        a = _ee_action_to(env.state, target, ARM_REACH_SPEED)
        if a is None:
            break
        before = ee_dist()
        if not act(a):
            res.reached = False
            return res
        if ee_dist() >= before - 1e-9:
            break
    if math.hypot(env.state.ee[0] - target[0], env.state.ee[1] - target[1]) > REACH_TOL:
        res.reached = False
        res.aborted = "reach_failed"
        return res
    p, q = plan.push
    n = int(math.ceil(math.hypot(q[0] - p[0], q[1] - p[1]) / ARM_PUSH_SPEED - 1e-9))
    for k in range(1, n + 1):
        t = k / n
        pt = (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))
        a = _ee_action_to(env.state, pt, EE_STEP_MAX)
        if a is None:
            continue
        if not act(a):
            return res
    return res
