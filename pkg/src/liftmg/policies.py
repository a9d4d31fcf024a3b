"""Simple non-learned policies: uniform random and geodesic following."""

from __future__ import annotations

import math

import numpy as np

from liftmg.motion import BASE_RANGE, PUSH_DIST_MAX, ArmSubgoal, BaseSubgoal, planning_free_space
from liftmg.sense import MAP_SIZE, N_WAYPOINTS, Observation, ego_to_cell
from liftmg.world import EE_STEP_MAX, V_MAX, W_MAX, LowLevelAction


class RandomSubgoalPolicy:
    """Uniform over the subgoal space; base or arm with equal probability."""

    def __init__(self, seed: int = 0, p_base: float = 0.5):
        self.rng = np.random.default_rng(seed)
        self.p_base = p_base

    def __call__(self, obs: Observation):
        rng = self.rng
        if rng.random() < self.p_base:
            fx, fy = rng.uniform(-BASE_RANGE, BASE_RANGE, size=2)
            return BaseSubgoal(math.hypot(fx, fy), math.atan2(fy, fx), rng.uniform(-math.pi, math.pi))
        r, c = rng.integers(MAP_SIZE, size=2)
        return ArmSubgoal((int(r), int(c)), rng.uniform(-math.pi, math.pi), rng.uniform(0.0, PUSH_DIST_MAX))


class RandomFlatPolicy:
    """Uniform low-level actions within the actuator bounds."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs: Observation) -> LowLevelAction:
        v, w, dx, dy = self.rng.uniform(-1.0, 1.0, size=4)
        return LowLevelAction(v * V_MAX, w * W_MAX, dx * EE_STEP_MAX, dy * EE_STEP_MAX)


class GeodesicFollower:
    """Drive to the farthest waypoint (or the goal when it is in range).

    Uses only the observation, so it works for every navigation task whose
    path is not blocked by an object. Waypoints inside inflated obstacles
    are skipped in favour of nearer ones.
    """

    def __init__(self, lookahead: int = N_WAYPOINTS):
        self.lookahead = lookahead

    def __call__(self, obs: Observation):
        v = obs.task_vec
        dist, bearing = float(v[0]), float(v[1])
        gx, gy = dist * math.cos(bearing), dist * math.sin(bearing)
        cands = [(gx, gy)] if dist <= 2.0 else []
        cands += [(float(v[2 + 2 * k]), float(v[3 + 2 * k])) for k in range(self.lookahead - 1, -1, -1)]
        free, _ = planning_free_space(obs.map)
        fx, fy = cands[0]
        for cx, cy in cands:
            if abs(cx) > BASE_RANGE or abs(cy) > BASE_RANGE:
                continue
            r, c = ego_to_cell(cx, cy)
            if 0 <= r < MAP_SIZE and 0 <= c < MAP_SIZE and free[r, c]:
                fx, fy = cx, cy
                break
        return BaseSubgoal(math.hypot(fx, fy), math.atan2(fy, fx), 0.0)
