import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liftmg import tasks as T
from liftmg import world as W
from liftmg.world import LowLevelAction, Pose2D

EMPTY_ROOM = """
[scene]
name = "room"

[robot]
pose = [2.0, 2.0, 0.0]

[[walls]]
points = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]]
closed = true
"""

DRAWER_ROOM = EMPTY_ROOM + """
[[objects]]
id = "drawer"
kind = "PrismaticDrawer"
anchor = [3.0, 2.0, 0.0]
q = 0.3
q_limits = [0.0, 0.4]
mass_class = "light"
footprint = [[-0.2, -0.2], [0.0, -0.2], [0.0, 0.2], [-0.2, 0.2]]
"""


def open_state(robot=Pose2D(0.0, 0.0, 0.0), objects=(), walls=None):
    walls = np.zeros((0, 4)) if walls is None else np.asarray(walls, dtype=float)
    return W.SceneState(robot=robot, ee=robot.to_world(*W.EE_HOME), objects=tuple(objects), walls=walls)


# -- load_scene ---------------------------------------------------------------------

def test_minimal_descriptor_has_four_walls_and_no_objects():
    s = W.load_scene(EMPTY_ROOM)
    assert len(s.walls) == 4
    assert s.objects == ()


def test_push_door_fixture_has_closed_revolute_door():
    s = T.fixture("door_rooms")
    doors = [o for o in s.objects if o.kind == "RevoluteDoor"]
    assert len(doors) == 1
    assert doors[0].q_limits == (0.0, pytest.approx(math.pi / 2))
    assert doors[0].q == 0.0


def test_q_outside_limits_is_rejected():
    with pytest.raises(W.SceneError):
        W.load_scene(DRAWER_ROOM.replace("q = 0.3", "q = 0.6"))


def test_unknown_key_is_rejected():
    with pytest.raises(W.SceneError, match="bogus"):
        W.load_scene(EMPTY_ROOM.replace("pose = [2.0, 2.0, 0.0]", "pose = [2.0, 2.0, 0.0]\nbogus = 1"))


def test_syntax_error_reports_location():
    with pytest.raises(W.SceneError, match="line"):
        W.load_scene("[scene\nname = 1")


def test_load_is_deterministic_and_round_trips():
    for name in T.list_scenes():
        text = T.scene_descriptor(name)
        a, b = W.load_scene(text), W.load_scene(text)
        assert W.state_digest(a) == W.state_digest(b)
        c = W.load_scene(W.dump_scene(a))
        assert W.state_digest(c) == W.state_digest(a)


# -- step -----------------------------------------------------------------------------

def test_zero_action_is_identity():
    s = W.load_scene(DRAWER_ROOM)
    s2, ev = W.step(s, LowLevelAction())
    assert s2.robot == s.robot and s2.ee == s.ee and s2.objects == s.objects
    assert not ev.body_collision and not ev.joint_deltas and not ev.button_pressed
    assert s2.time == pytest.approx(0.1)


def test_forward_velocity_is_clamped_and_integrated():
    s2, _ = W.step(open_state(), LowLevelAction(v=1.0))
    # oracle: 4 forward-Euler substeps of 0.025 s at the clamped 0.5 m/s
    x = 0.0
    for _ in range(4):
        x += 0.5 * 0.025
    assert s2.robot.x == pytest.approx(x, abs=1e-12) == pytest.approx(0.05)
    assert s2.robot.y == 0.0


def test_driving_into_wall_backs_out():
    wall = [[0.4, -5.0, 0.4, 5.0]]
    s = open_state(Pose2D(0.06, 0.0, 0.0), walls=wall)
    s2, ev = W.step(s, LowLevelAction(v=0.5))
    assert ev.body_collision
    # substeps of 0.0125 m: the fourth would put the disc edge at 0.41
    assert s2.robot.x + W.ROBOT_RADIUS <= 0.4
    assert s2.robot.x == pytest.approx(0.06 + 3 * 0.0125)


# -- apply_push ----------------------------------------------------------------------

def test_drawer_push_along_axis_closes_by_sweep_length():
    s = W.load_scene(DRAWER_ROOM)
    d = s.object("drawer")
    # drawer face is the local x=0 edge, at world x = 3.0 + q
    face_x = 3.0 + d.q
    sweep = ((face_x + 0.03, 2.0), (face_x - 0.02, 2.0))
    s2, ev = W.apply_push(s, sweep)
    assert ev.joint_deltas["drawer"] == pytest.approx(-0.05)
    assert s2.object("drawer").q == pytest.approx(0.25)


def test_immovable_obstacle_does_not_move():
    s = T.fixture("obstacle_rooms")
    obs = [o for o in s.objects if o.mass_class == "immovable"][0]
    cx, cy = obs.center
    sweep = ((cx - 0.4, cy), (cx - 0.3, cy))
    s2, ev = W.apply_push(s, sweep)
    assert s2.object(obs.id).q == obs.q
    assert ev.joint_deltas.get(obs.id, 0.0) == 0.0


def test_sweep_missing_everything_changes_nothing():
    s = W.load_scene(DRAWER_ROOM)
    s2, ev = W.apply_push(s, ((1.0, 1.0), (1.03, 1.0)))
    assert s2.objects == s.objects
    assert not ev.joint_deltas


def test_button_press_opens_linked_door():
    s = T.fixture("button_rooms")
    b = [o for o in s.objects if o.kind == "Button"][0]
    door = s.object(b.link)
    bx, by = b.center
    # the face lies on the -x side of the button anchor
    s2, ev = W.apply_push(s, ((bx - 0.1, by), (bx, by)))
    assert s2.object(b.id).q == 1.0
    assert b.id in ev.button_pressed
    assert s2.object(door.id).q == pytest.approx(door.q_limits[1])


# -- check_body_collision ---------------------------------------------------------------

def test_room_center_is_collision_free():
    assert not W.check_body_collision(W.load_scene(EMPTY_ROOM))


def test_disc_near_wall_collides():
    # disc radius 0.3 centred 0.2 from the wall
    s = open_state(Pose2D(0.2, 0.0, 0.0), walls=[[0.0, -1.0, 0.0, 1.0]])
    assert W.check_body_collision(s)
    s = open_state(Pose2D(0.31, 0.0, 0.0), walls=[[0.0, -1.0, 0.0, 1.0]])
    assert not W.check_body_collision(s)


def test_ee_touching_door_is_not_a_body_collision():
    s = T.fixture("door_rooms")
    door = s.object("door")
    px, py = door.anchor.x, door.anchor.y - 0.6
    robot = Pose2D(px - 0.5, py, 0.0)
    s = W.SceneState(robot=robot, ee=(px, py), objects=s.objects, walls=s.walls)
    assert W.ee_in_contact(s)
    assert not W.check_body_collision(s)


# -- properties ---------------------------------------------------------------------------

action_st = st.builds(LowLevelAction, st.floats(-1, 1), st.floats(-2, 2), st.floats(-0.1, 0.1),
                      st.floats(-0.1, 0.1))


def _within_limits(o):
    if o.is_pose_object:
        (xl, yl), (xh, yh) = o.q_limits
        return xl - 1e-9 <= o.q.x <= xh + 1e-9 and yl - 1e-9 <= o.q.y <= yh + 1e-9
    return o.q_limits[0] - 1e-12 <= o.q <= o.q_limits[1] + 1e-12


@settings(max_examples=60, deadline=None)
@given(scene=st.sampled_from(["door_rooms", "button_rooms", "obstacle_rooms", "kitchen", "chairs"]),
       seed=st.integers(0, 10_000), actions=st.lists(action_st, min_size=1, max_size=25))
def test_joint_limits_and_button_monotonicity(scene, seed, actions):
    kind = {"door_rooms": "PushDoorNav", "button_rooms": "ButtonDoorNav",
            "obstacle_rooms": "InteractiveObstaclesNav", "kitchen": "ArrangeKitchenMM",
            "chairs": "ArrangeChairMM"}[scene]
    s, _ = T.reset(T.make_task(kind), seed)
    fixed = {o.id: o for o in s.objects if o.mass_class == "immovable" and o.kind != "RevoluteDoor"}
    pressed = set()
    for a in actions:
        s, _ = W.step(s, a)
        for o in s.objects:
            assert _within_limits(o)
            if o.kind == "Button":
                assert o.q in (0.0, 1.0)
                if o.id in pressed:
                    assert o.q == 1.0
                if o.q == 1.0:
                    pressed.add(o.id)
            if o.id in fixed:
                assert o == fixed[o.id]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), actions=st.lists(action_st, min_size=1, max_size=20))
def test_step_is_deterministic(seed, actions):
    s0, _ = T.reset(T.make_task("ArrangeKitchenMM"), seed)
    a, b = s0, s0
    for act in actions:
        a, ea = W.step(a, act)
        b, eb = W.step(b, act)
        assert W.state_digest(a) == W.state_digest(b)
        assert ea == eb


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.5, 3.5), y=st.floats(0.5, 3.5), th=st.floats(-math.pi, math.pi))
def test_zero_action_keeps_pose(x, y, th):
    s = W.load_scene(EMPTY_ROOM)
    s = W.SceneState(robot=Pose2D(x, y, th), ee=Pose2D(x, y, th).to_world(0.3, 0.0), objects=(), walls=s.walls)
    s2, _ = W.step(s, LowLevelAction())
    assert s2.robot == s.robot


@settings(max_examples=100, deadline=None)
@given(sx=st.floats(0.2, 1.8), sy=st.floats(0.2, 3.8), dx=st.floats(-0.0125, 0.0125),
       dy=st.floats(-0.0125, 0.0125))
def test_sweep_outside_footprints_is_conservative(sx, sy, dx, dy):
    s = W.load_scene(DRAWER_ROOM)
    s2, ev = W.apply_push(s, ((sx, sy), (sx + dx, sy + dy)))
    assert s2.objects == s.objects
    assert not ev.joint_deltas


def test_pose_theta_is_normalized():
    assert Pose2D(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
    assert Pose2D(0, 0, -math.pi).theta == pytest.approx(math.pi)
