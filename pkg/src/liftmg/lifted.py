"""Environment wrapper exposing the subgoal-level and the low-level decision process.

One subgoal step plans with the motion generator, executes the resulting
low-level actions and returns the sum of their task rewards as a single
transition. The same instance also offers plain low-level stepping for the
flat baseline.
"""

from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from liftmg import tasks as T
from liftmg import world
from liftmg.motion import (MAX_EXEC_STEPS, ArmSubgoal, BaseSubgoal, MotionPlan, clip_subgoal,
                           execute, plan_arm, plan_base, subgoal_to_world)
from liftmg.planners import PlannerConfig
from liftmg.sense import Observation, build_observation

INTERACTION_SECONDS = 1.0


@dataclass(frozen=True)
class EpisodeBudget:
    lifted_max: int = 25
    flat_max: int = 750

    def __post_init__(self):
        if self.lifted_max <= 0 or self.flat_max <= 0:
            raise ValueError("budgets must be positive")


@dataclass(frozen=True)
class LiftedTransition:
    obs: Observation
    subgoal: object
    reward: float
    next_obs: Observation
    done: bool
    info: dict = field(compare=False)


TRACE_COLUMNS = ["step", "type", "r", "phi", "dtheta", "row", "col", "push_dir", "push_dist",
                 "T", "reward", "done", "planner_success", "abort_reason", "collision",
                 "contact_s", "joint_deltas"]


class Env:
    """A single task instance; owned by one worker at a time."""

    def __init__(self, task: T.TaskSpec, base_planner: Optional[PlannerConfig] = None,
                 arm_planner: Optional[PlannerConfig] = None, arm_collision_check: bool = True,
                 budget: EpisodeBudget = EpisodeBudget(), max_exec_steps: int = MAX_EXEC_STEPS):
        self.task = task
        self.base_planner = base_planner or PlannerConfig()
        # the arm reach is a straight line; the config is kept for symmetric swapping
        self.arm_planner = arm_planner or PlannerConfig()
        self.arm_collision_check = arm_collision_check
        self.budget = budget
        self.max_exec_steps = max_exec_steps
        self.state: Optional[world.SceneState] = None
        self.field = None
        self._obs = None
        # optional callback receiving every new low-level state (coverage analysis)
        self.on_low_level: Optional[Callable] = None
        # cumulative over the lifetime of this instance, across resets
        self.planner_calls = {"base": 0, "arm_checked": 0, "arm_unchecked": 0}

    # -- episode bookkeeping ------------------------------------------------

    def reset(self, seed: int) -> Observation:
        self.seed = int(seed)
        self.state, self.field = T.reset(self.task, seed)
        self.rng = np.random.default_rng([self.seed, 7])
        self.lifted_steps = 0
        self.flat_steps = 0
        self.low_level_steps = 0
        self.reward_sum = 0.0
        self.path_length = 0.0
        self.interactions = 0
        self.collided = False
        self.succeeded = T.is_success(self.task, self.state, self.field)
        self.done = False
        self.termination = ""
        self.subgoal_stats = {"base": [0, 0], "arm": [0, 0]}
        self.trace = []
        self.shortest_path = (T.geodesic_distance(self.field, self.state)
                              if self.task.family == "nav" else 0.0)
        self._acc = 0.0
        self._obs = None
        return self.observe()

    def clone(self) -> "Env":
        """Independent copy; stepping it never affects this instance."""
        return copy.deepcopy(self)

    def observe(self) -> Observation:
        if self._obs is None:
            self._obs = build_observation(self.state, self.task, self.field)
        return self._obs

    # -- low level ------------------------------------------------------------

    def apply_low_level(self, action: world.LowLevelAction):
        """One simulator step with reward bookkeeping: ``(events, done)``."""
        prev = self.state
        nxt, events = world.step(prev, action, self.task.base_enabled)
        r = T.reward(self.task, prev, nxt, events, self.field)
        self.state = nxt
        self._obs = None
        self._acc += r
        self.reward_sum += r
        self.low_level_steps += 1
        self.path_length += math.hypot(nxt.robot.x - prev.robot.x, nxt.robot.y - prev.robot.y)
        if (prev.ee_contact_time < INTERACTION_SECONDS - 1e-6
                and nxt.ee_contact_time >= INTERACTION_SECONDS - 1e-6):
            self.interactions += 1
        if events.body_collision:
            self.collided = True
        self.succeeded = T.is_success(self.task, nxt, self.field)
        self._last_events = events
        if self.on_low_level is not None:
            self.on_low_level(nxt)
        return events, self.succeeded or self.collided

    def flat_step(self, action: world.LowLevelAction):
        """``(observation, reward, done, info)`` for one low-level action."""
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        self._acc = 0.0
        events, _ = self.apply_low_level(action)
        self.flat_steps += 1
        reason = ""
        if self.collided:
            reason = "body_collision"
        elif self.succeeded:
            reason = "success"
        elif self.flat_steps >= self.budget.flat_max:
            reason = "budget"
        self.done = bool(reason)
        self.termination = reason
        info = {"abort_reason": "body_collision" if self.collided else "", "termination": reason,
                "events": events}
        return self.observe(), self._acc, self.done, info

    # -- subgoal level --------------------------------------------------------

    def plan(self, subgoal) -> MotionPlan:
        obs = self.observe()
        robot = self.state.robot
        if isinstance(subgoal, BaseSubgoal):
            self.planner_calls["base"] += 1
            target = subgoal_to_world(subgoal, robot, obs.map)
            return plan_base(obs.map, robot, target, self.base_planner, self.rng)
        tgt = subgoal_to_world(subgoal, robot, obs.map)
        self.planner_calls["arm_checked" if self.arm_collision_check else "arm_unchecked"] += 1
        return plan_arm(self.state, tgt.point, tgt.push_dir, tgt.push_dist, self.arm_collision_check)

    def lifted_step(self, subgoal) -> LiftedTransition:
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        obs = self.observe()
        sg = clip_subgoal(subgoal)
        kind = "base" if isinstance(sg, BaseSubgoal) else "arm"
        self._acc = 0.0
        contact_before = self.interactions
        plan = self.plan(sg)
        self.subgoal_stats[kind][0] += 1
        res = execute(plan, self, self.max_exec_steps)
        ok = (not plan.failed) and res.aborted not in ("body_collision", "reach_failed")
        if ok:
            self.subgoal_stats[kind][1] += 1
        self.lifted_steps += 1
        reason = ""
        if self.collided:
            reason = "body_collision"
        elif self.succeeded:
            reason = "success"
        elif self.lifted_steps >= self.budget.lifted_max:
            reason = "budget"
        self.done = bool(reason)
        self.termination = reason
        info = {
            "T": res.steps,
            "planner_success": not plan.failed,
            "plan_reason": plan.reason,
            "abort_reason": res.aborted,
            "subgoal_type": kind,
            "subgoal_ok": ok,
            "actions": res.actions,
            "interactions": self.interactions - contact_before,
            "termination": reason,
            "plan_stats": plan.stats,
        }
        r = self._acc
        self._record(sg, info, r)
        return LiftedTransition(obs, sg, r, self.observe(), self.done, info)

    def _record(self, sg, info, r):
        row = {"step": self.lifted_steps, "type": info["subgoal_type"], "T": info["T"],
               "reward": repr(float(r)), "done": int(self.done),
               "planner_success": int(info["planner_success"]), "abort_reason": info["abort_reason"],
               "collision": int(self.collided), "contact_s": f"{self.state.ee_contact_time:.2f}"}
        if isinstance(sg, BaseSubgoal):
            row.update(r=f"{sg.r:.4f}", phi=f"{sg.phi:.4f}", dtheta=f"{sg.dtheta:.4f}")
        else:
            row.update(row=sg.cell[0], col=sg.cell[1], push_dir=f"{sg.push_dir:.4f}",
                       push_dist=f"{sg.push_dist:.4f}")
        row["joint_deltas"] = ";".join(f"{o.id}={self._q_str(o)}" for o in self.state.objects
                                       if o.mass_class == "light" or o.kind == "Button")
        self.trace.append(row)

    @staticmethod
    def _q_str(o):
        if isinstance(o.q, world.Pose2D):
            return f"{o.q.x:.3f}/{o.q.y:.3f}"
        return f"{o.q:.3f}"

    # -- results ----------------------------------------------------------------

    def episode_result(self) -> T.EpisodeResult:
        completion = (T.completion_counts(self.task, self.state) if self.task.family == "mm" else {})
        stats = {k: {"attempted": v[0], "succeeded": v[1]} for k, v in self.subgoal_stats.items()}
        return T.EpisodeResult(
            success=bool(self.succeeded), path_length=self.path_length,
            shortest_path=self.shortest_path, reward_sum=self.reward_sum, completion=completion,
            subgoal_stats=stats, steps=max(self.lifted_steps, self.flat_steps),
            low_level_steps=self.low_level_steps, interactions=self.interactions,
            termination=self.termination, seed=self.seed)

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


def trace_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def run_episode(env: Env, policy: Callable, mode: str = "lifted", seed: int = 0,
                on_transition: Optional[Callable] = None) -> T.EpisodeResult:
    """Roll ``policy`` (observation -> subgoal or low-level action) to termination."""
    if mode not in ("lifted", "flat"):
        raise ValueError(f"unknown mode {mode!r}")
    obs = env.reset(seed)
    while not env.done:
        a = policy(obs)
        if mode == "lifted":
            tr = env.lifted_step(a)
            obs = tr.next_obs
            if on_transition is not None:
                on_transition(tr)
        else:
            nobs, r, done, info = env.flat_step(a)
            if on_transition is not None:
                on_transition((obs, a, r, nobs, done, info))
            obs = nobs
    return env.episode_result()
