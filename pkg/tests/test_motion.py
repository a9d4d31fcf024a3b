import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from liftmg import motion as M
from liftmg import sense as S
from liftmg import world as W
from liftmg.planners import PlannerConfig, densify, path_is_free, path_length, plan_path
from liftmg.world import Pose2D

from test_sense import bare_state, dijkstra_oracle


class StepEnv:
    """Minimal executor handle over the world model."""

    def __init__(self, state):
        self.state = state

    def apply_low_level(self, a):
        self.state, ev = W.step(self.state, a)
        return ev, False


def empty_grid(x=0.0, y=0.0, th=0.0):
    return S.GridMap(np.zeros((S.N_CHANNELS, 64, 64), np.float32), (x, y, th))


def doorway_map(seed):
    """One wall with a random gap plus scattered blocks; start and goal on
    opposite sides in the same connected component."""
    rng = np.random.default_rng(seed)
    free = np.ones((64, 64), bool)
    free[:, 30:33] = False
    g = rng.integers(4, 52)
    free[g:g + 8, 30:33] = True
    for _ in range(6):
        r, c = rng.integers(0, 60, 2)
        free[r:r + 4, c:c + 4] = False
    lab, _ = ndimage.label(free)
    while True:
        s = (rng.uniform(0.2, 2.2), rng.uniform(0.2, 4.9))
        t = (rng.uniform(2.9, 4.9), rng.uniform(0.2, 4.9))
        a = lab[int(s[1] / 0.08), int(s[0] / 0.08)]
        b = lab[int(t[1] / 0.08), int(t[0] / 0.08)]
        if a and a == b:
            return free, s, t


# -- subgoal_to_world ----------------------------------------------------------------------

def test_pure_rotation_subgoal():
    p = M.subgoal_to_world(M.BaseSubgoal(0.0, 0.0, math.pi / 4), Pose2D(1.0, 2.0, 0.3))
    assert (p.x, p.y) == (1.0, 2.0)
    assert p.theta == pytest.approx(0.3 + math.pi / 4)


def test_polar_base_target():
    p = M.subgoal_to_world(M.BaseSubgoal(1.0, math.pi / 2, 0.0), Pose2D(0.0, 0.0, 0.0))
    assert p.x == pytest.approx(0.0, abs=1e-12)
    assert p.y == pytest.approx(1.0)


def test_arm_centre_cell_is_the_robot():
    # the four cells around the map centre are half a cell from the robot
    robot = Pose2D(1.0, 1.0, 0.7)
    for cell in ((31, 31), (31, 32), (32, 31), (32, 32)):
        t = M.subgoal_to_world(M.ArmSubgoal(cell, 0.0, 0.1), robot)
        assert math.hypot(t.point[0] - 1.0, t.point[1] - 1.0) == pytest.approx(S.MAP_RES / math.sqrt(2))


@settings(max_examples=100, deadline=None)
@given(r=st.floats(0, 10), phi=st.floats(-7, 7), dth=st.floats(-7, 7))
def test_clipped_base_subgoal_stays_in_square(r, phi, dth):
    sg = M.clip_subgoal(M.BaseSubgoal(r, phi, dth))
    assert M.subgoal_in_bounds(sg)
    t = M.subgoal_to_world(sg, Pose2D(0.0, 0.0, 0.0))
    assert abs(t.x) <= 2.5 + 1e-9 and abs(t.y) <= 2.5 + 1e-9


# -- plan_base -------------------------------------------------------------------------------

def test_start_equals_goal_is_single_waypoint():
    grid = empty_grid()
    plan = M.plan_base(grid, Pose2D(0, 0, 0), Pose2D(0, 0, 1.0), PlannerConfig())
    assert plan.kind == "BasePath"
    assert len(plan.waypoints) == 1
    assert plan.waypoints[0].theta == 1.0


@pytest.mark.parametrize("kind", ["RrtConnect", "LazyPrm"])
def test_straight_shot_is_near_euclidean(kind):
    grid = empty_grid()
    plan = M.plan_base(grid, Pose2D(0, 0, 0), Pose2D(2.0, 0, 0), PlannerConfig(kind=kind))
    assert plan.kind == "BasePath"
    pts = np.array([(p.x, p.y) for p in plan.waypoints])
    assert path_length(pts) <= 1.1 * 2.0
    assert np.max(np.hypot(*np.diff(pts, axis=0).T)) <= 0.05 + 1e-9


@pytest.mark.parametrize("kind", ["RrtConnect", "LazyPrm"])
def test_goal_sealed_in_box_fails(kind):
    free = np.ones((64, 64), bool)
    free[20:40, 20:40] = False
    free[24:36, 24:36] = True
    path, stats = plan_path(free, 0.08, (0.5, 0.5), (2.4, 2.4), PlannerConfig(kind=kind))
    assert path is None
    assert stats["reason"] == "no_path"


def test_planned_path_length_not_below_grid_lower_bound():
    free, s, g = doorway_map(3)
    path, _ = plan_path(free, 0.08, s, g, PlannerConfig(kind="LazyPrm"))
    gi = (int(g[1] / 0.08), int(g[0] / 0.08))
    si = (int(s[1] / 0.08), int(s[0] / 0.08))
    # 8-connected grid distance overestimates the continuous distance by at
    # most a factor 1.0824 plus a cell of snapping at each end
    grid_d = dijkstra_oracle(free, gi, 0.08)[si]
    assert path_length(path) >= grid_d / 1.0824 - 2 * 0.08 * math.sqrt(2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["RrtConnect", "LazyPrm"]))
def test_returned_paths_are_sound_and_dense(seed, kind):
    free, s, g = doorway_map(seed)
    path, _ = plan_path(free, 0.08, s, g, PlannerConfig(kind=kind, seed=seed))
    if path is not None:
        assert path_is_free(free, 0.08, path, 0.05)
        assert np.max(np.hypot(*np.diff(path, axis=0).T)) <= 0.05 + 1e-9
        np.testing.assert_allclose(path[0], s)
        np.testing.assert_allclose(path[-1], g)


@pytest.mark.parametrize("kind", ["RrtConnect", "LazyPrm"])
def test_planners_are_probabilistically_complete_on_doorway_maps(kind):
    ok = 0
    for k in range(50):
        free, s, g = doorway_map(k)
        path, _ = plan_path(free, 0.08, s, g, PlannerConfig(kind=kind, seed=k))
        ok += path is not None
    assert ok / 50 >= 0.95, f"{kind} solved {ok}/50"


@pytest.mark.parametrize("kind", ["RrtConnect", "LazyPrm"])
def test_same_seed_same_plan(kind):
    free, s, g = doorway_map(7)
    a, _ = plan_path(free, 0.08, s, g, PlannerConfig(kind=kind, seed=5))
    b, _ = plan_path(free, 0.08, s, g, PlannerConfig(kind=kind, seed=5))
    if a is None:
        assert b is None
    else:
        np.testing.assert_array_equal(a, b)


def test_densify_spacing():
    p = densify([[0, 0], [1, 0], [1, 0.33]], 0.05)
    assert np.max(np.hypot(*np.diff(p, axis=0).T)) <= 0.05 + 1e-12
    assert path_length(p) == pytest.approx(1.33)


# -- plan_arm --------------------------------------------------------------------------------

def test_arm_target_out_of_reach_fails():
    s = bare_state()
    assert M.plan_arm(s, (1.2, 0.0), 0.0, 0.1).kind == "Failure"
    assert M.plan_arm(s, (0.1, 0.0), 0.0, 0.1).kind == "Failure"


def test_arm_nominal_plan():
    s = bare_state()
    plan = M.plan_arm(s, (0.5, 0.0), 0.0, 0.25)
    assert plan.kind == "ArmReachPush"
    assert plan.waypoints[-1] == (0.5, 0.0)
    (px, py), (qx, qy) = plan.push
    assert math.hypot(qx - px, qy - py) == pytest.approx(0.25)


def test_arm_collision_check_only_blocks_when_enabled():
    # EE starts ahead-left of the base; a wall cuts the straight approach
    s = bare_state(walls=[[0.4, -1.0, 0.4, 1.0]])
    target = (0.6, 0.0)
    from liftmg import geometry as geo
    assert geo.segment_hits_segments(s.ee, target, s.walls)
    assert M.plan_arm(s, target, 0.0, 0.1, collision_check=True).kind == "Failure"
    assert M.plan_arm(s, target, 0.0, 0.1, collision_check=False).kind == "ArmReachPush"


# -- execute ---------------------------------------------------------------------------------------

def test_failure_plan_is_a_noop():
    env = StepEnv(bare_state())
    res = M.execute(M.failure("no_path"), env)
    assert res.steps == 0 and res.actions == [] and not res.reached


def test_single_waypoint_at_current_pose_takes_no_steps():
    env = StepEnv(bare_state())
    plan = M.MotionPlan("BasePath", (Pose2D(0.0, 0.0, 0.0),))
    assert M.execute(plan, env).steps == 0


def test_one_metre_straight_path_takes_twenty_steps():
    env = StepEnv(bare_state())
    wps = tuple(Pose2D(x, 0.0, 0.0) for x in np.linspace(0.0, 1.0, 21))
    res = M.execute(M.MotionPlan("BasePath", wps), env)
    # 0.05 m per 0.1 s action at the 0.5 m/s cap
    assert res.steps == 20
    assert env.state.robot.x == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-1.5, 1.5), y=st.floats(-1.5, 1.5), th=st.floats(-math.pi, math.pi),
       kind=st.sampled_from(["RrtConnect", "LazyPrm"]))
def test_executor_reaches_planned_goal_in_static_scene(x, y, th, kind):
    start = bare_state()
    grid = S.build_grid_map(start, S.raycast_lidar(start))
    goal = Pose2D(x, y, th)
    plan = M.plan_base(grid, start.robot, goal, PlannerConfig(kind=kind))
    assert plan.kind == "BasePath"
    env = StepEnv(start)
    res = M.execute(plan, env)
    r = env.state.robot
    assert res.steps <= M.MAX_EXEC_STEPS
    if not res.aborted:
        assert math.hypot(r.x - x, r.y - y) <= 0.1
        assert abs(math.remainder(r.theta - th, 2 * math.pi)) <= 0.1


def test_arm_execution_pushes_drawer():
    from test_world import DRAWER_ROOM
    s = W.load_scene(DRAWER_ROOM)
    d = s.object("drawer")
    face = 3.0 + d.q
    # robot on the open side, facing the drawer face at x = 3.3
    robot = Pose2D(3.9, 2.0, math.pi)
    s = W.SceneState(robot=robot, ee=robot.to_world(0.3, 0.0), objects=s.objects, walls=s.walls)
    plan = M.plan_arm(s, (face + 0.05, 2.0), math.pi, 0.2)
    env = StepEnv(s)
    res = M.execute(plan, env)
    assert res.reached
    # the push ends at x = 3.15; a touching substep moves the drawer by its
    # whole sweep, so the face may lead the EE by at most one 5 mm substep
    q = env.state.object("drawer").q
    assert 0.15 - 0.005 - 1e-9 <= q <= 0.15 + 1e-9
    assert res.steps <= M.MAX_EXEC_STEPS
