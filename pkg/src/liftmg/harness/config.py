"""Run configuration with a TOML round-trip."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli
import tomli_w

from liftmg.planners import PLANNER_KINDS, PlannerConfig
from liftmg.tasks import TASK_KINDS

AGENT_KINDS = ("sgp-r", "sgp-d", "flat-sac")


class ConfigError(ValueError):
    pass


# collect/update cadence and batch defaults per agent kind
_AGENT_DEFAULTS = {
    "sgp-r": dict(n_env_step=1, n_grad_step=1, initial_collect=200, batch_size=256,
                  replay_ratio=0.0, checkpoint_every=1000),
    "flat-sac": dict(n_env_step=1, n_grad_step=1, initial_collect=200, batch_size=256,
                     replay_ratio=0.0, checkpoint_every=1000),
    "sgp-d": dict(n_env_step=25, n_grad_step=6, initial_collect=1000, batch_size=0,
                  replay_ratio=8.0, checkpoint_every=10),
}


@dataclass
class RunConfig:
    task: str = "PointNav"
    agent: str = "sgp-d"
    base_planner: str = "RrtConnect"
    arm_planner: str = "RrtConnect"
    rrt_iterations: int = 20
    rrt_restarts: int = 2
    prm_schedule: list = field(default_factory=lambda: [500, 2000, 5000])
    n_iter: int = 100
    n_env_step: int = 25
    n_grad_step: int = 6
    initial_collect: int = 1000
    # 0 means "derive from replay_ratio": samples drawn per collected transition
    batch_size: int = 0
    replay_ratio: float = 8.0
    replay_capacity: int = 10_000
    workers: int = 16
    seed: int = 0
    out: str = "runs/default"
    train_arm_collision_check: bool = False
    eval_arm_collision_check: bool = True
    eval_episodes: int = 100
    eval_seeds: list = field(default_factory=lambda: [0])
    checkpoint_every: int = 10
    log_every: int = 1
    # sgp-d epsilon decay horizon, in collected steps; 0 means n_iter * n_env_step
    epsilon_horizon: int = 0
    sac_map_pool: int = 2

    def __post_init__(self):
        self.validate()

    @classmethod
    def for_agent(cls, agent: str, **kw) -> "RunConfig":
        if agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {agent!r}")
        base = dict(_AGENT_DEFAULTS[agent])
        base.update(kw)
        return cls(agent=agent, **base)

    def validate(self):
        if self.task not in TASK_KINDS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {self.agent!r}")
        for k in (self.base_planner, self.arm_planner):
            if k not in PLANNER_KINDS:
                raise ConfigError(f"unknown planner kind {k!r}")
        ints = ("n_iter", "n_env_step", "workers", "replay_capacity", "rrt_iterations",
                "checkpoint_every", "log_every", "eval_episodes")
        for name in ints:
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("n_grad_step", "initial_collect", "batch_size", "rrt_restarts", "epsilon_horizon"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.batch_size == 0 and self.replay_ratio <= 0:
            raise ConfigError("batch_size 0 needs a positive replay_ratio")
        if not self.eval_seeds:
            raise ConfigError("eval_seeds must not be empty")
        self.prm_schedule = [int(n) for n in self.prm_schedule]
        self.eval_seeds = [int(s) for s in self.eval_seeds]

    # -- derived -----------------------------------------------------------------

    @property
    def effective_batch(self) -> int:
        if self.batch_size > 0:
            return self.batch_size
        return int(math.ceil(self.replay_ratio * self.n_env_step / max(1, self.n_grad_step)))

    @property
    def total_env_steps(self) -> int:
        return self.n_iter * self.n_env_step

    def planner(self, which: str, seed: int = 0) -> PlannerConfig:
        kind = self.base_planner if which == "base" else self.arm_planner
        return PlannerConfig(kind=kind, rrt_iterations=self.rrt_iterations,
                             rrt_restarts=self.rrt_restarts, prm_schedule=tuple(self.prm_schedule),
                             seed=seed)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            d = tomli.loads(text)
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"bad TOML: {e}") from e
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.dumps())
