"""Collect/update training loop and its CSV metrics log."""

from __future__ import annotations

import csv
import math
import time
from pathlib import Path

import numpy as np

from liftmg import tasks as T
from liftmg.harness.agents import make_adapter, save_agent
from liftmg.harness.config import ConfigError, RunConfig
from liftmg.learn.replay import ReplayBuffer
from liftmg.lifted import Env

TRAIN_SEED_BASE = 1_000_000
SEEDS_PER_WORKER = 100_000
SR_WINDOW = 50

METRIC_COLUMNS = [
    "iteration", "env_steps", "grad_steps", "resets", "episodes", "mean_return", "sr", "spl",
    "completion_5", "completion_10", "base_attempted", "base_succeeded", "arm_attempted",
    "arm_succeeded", "subgoal_sr", "base_subgoal_sr", "arm_subgoal_sr", "loss", "grad_norm",
    "alpha", "epsilon", "arm_checked", "arm_unchecked", "wall_clock",
]
EPISODE_COLUMNS = ["iteration", "worker", "seed", "success", "return", "steps", "path_length",
                   "shortest_path", "termination", "interactions"]


def _fmt(v):
    if v == "" or v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


class MetricsLog:
    """Append-only CSV with a fixed header; also kept in memory as dict rows."""

    def __init__(self, path=None, columns=METRIC_COLUMNS):
        self.columns = list(columns)
        self.rows: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            with open(self.path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(self.columns)

    def append(self, row: dict):
        extra = set(row) - set(self.columns)
        if extra:
            raise KeyError(f"unknown metric columns {sorted(extra)}")
        clean = {c: _fmt(row.get(c, "")) for c in self.columns}
        self.rows.append(clean)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow([clean[c] for c in self.columns])

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def deterministic_rows(self) -> list[dict]:
        """Rows without the wall-clock column (the only run-to-run varying field)."""
        return [{k: v for k, v in r.items() if k != "wall_clock"} for r in self.rows]

    @staticmethod
    def read(path) -> list[dict]:
        with open(path, newline="") as f:
            return list(csv.DictReader(f))


def episode_seed(cfg: RunConfig, worker: int, k: int) -> int:
    """Training episode seeds live above ``TRAIN_SEED_BASE``; eval seeds stay below it."""
    return TRAIN_SEED_BASE + (cfg.seed + worker) * SEEDS_PER_WORKER + k


def make_env(cfg: RunConfig, evaluation: bool, base_kind: str = None, arm_kind: str = None,
             arm_collision_check=None) -> Env:
    c = cfg.replace(base_planner=base_kind or cfg.base_planner, arm_planner=arm_kind or cfg.arm_planner)
    if arm_collision_check is None:
        arm_collision_check = cfg.eval_arm_collision_check if evaluation else cfg.train_arm_collision_check
    return Env(T.make_task(cfg.task), base_planner=c.planner("base"), arm_planner=c.planner("arm"),
               arm_collision_check=arm_collision_check)


class _Worker:
    def __init__(self, cfg, index):
        self.cfg = cfg
        self.index = index
        self.env = make_env(cfg, evaluation=False)
        self.k = 0
        self.obs = None
        self.ret = 0.0

    def reset(self):
        self.obs = self.env.reset(episode_seed(self.cfg, self.index, self.k))
        self.k += 1
        self.ret = 0.0


def _terminal(info) -> bool:
    # running out of budget is a truncation, not a terminal state
    return info["termination"] in ("success", "body_collision")


def train(cfg: RunConfig, out_dir=None, progress=None) -> dict:
    """Run the collect/update loop; writes checkpoints, metrics.csv and episodes.csv.

    Returns a summary dict including the in-memory ``MetricsLog``.
    """
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ConfigError(f"output directory {out} is not writable: {e}") from e
    cfg.save(out / "config.toml")

    adapter = make_adapter(cfg)
    buf = ReplayBuffer(cfg.replay_capacity)
    act_rng = np.random.default_rng([cfg.seed, 11])
    sample_rng = np.random.default_rng([cfg.seed, 13])
    workers = [_Worker(cfg, w) for w in range(cfg.workers)]
    resets = 0
    for w in workers:
        w.reset()
        resets += 1

    log = MetricsLog(out / "metrics.csv")
    ep_log = MetricsLog(out / "episodes.csv", EPISODE_COLUMNS)
    batch = cfg.effective_batch
    env_steps = 0
    grad_steps = 0
    episodes = 0
    recent = []
    best_sr = -1.0
    t0 = time.perf_counter()
    window = _Window()
    cursor = 0

    for it in range(1, cfg.n_iter + 1):
        for _ in range(cfg.n_env_step):
            w = workers[cursor]
            cursor = (cursor + 1) % len(workers)
            adapter.set_progress(env_steps)
            if env_steps < cfg.initial_collect:
                action, stored = adapter.random_action(w.obs, act_rng)
            else:
                action, stored = adapter.act(w.obs, act_rng, explore=True)
            env = w.env
            if adapter.mode == "lifted":
                tr = env.lifted_step(action)
                next_obs, r, done, info = tr.next_obs, tr.reward, tr.done, tr.info
                window.subgoal(info)
            else:
                next_obs, r, done, info = env.flat_step(action)
            adapter.record(buf, w.obs, stored, r, next_obs, _terminal(info))
            w.ret += r
            w.obs = next_obs
            env_steps += 1
            if done:
                res = env.episode_result()
                episodes += 1
                window.episode(cfg, res, w.ret)
                recent.append(float(res.success))
                recent = recent[-SR_WINDOW:]
                ep_log.append({"iteration": it, "worker": w.index, "seed": res.seed,
                               "success": int(res.success), "return": w.ret, "steps": res.steps,
                               "path_length": res.path_length, "shortest_path": res.shortest_path,
                               "termination": res.termination, "interactions": res.interactions})
                w.reset()
                resets += 1
        if len(buf) >= max(cfg.initial_collect, batch, 1) and cfg.n_grad_step > 0:
            for _ in range(cfg.n_grad_step):
                d = adapter.update(buf.sample(batch, sample_rng))
                grad_steps += 1
                window.loss(d)
        if it % cfg.log_every == 0 or it == cfg.n_iter:
            row = window.flush()
            row.update(iteration=it, env_steps=env_steps, grad_steps=grad_steps, resets=resets,
                       episodes=episodes, epsilon=adapter.epsilon if adapter.kind == "sgp-d" else "",
                       wall_clock=time.perf_counter() - t0)
            _planner_counts(row, workers)
            log.append(row)
            if progress is not None:
                progress(log.rows[-1])
        if it % cfg.checkpoint_every == 0 or it == cfg.n_iter:
            meta = {"iteration": it, "env_steps": env_steps, "grad_steps": grad_steps}
            save_agent(out / "latest.ckpt", adapter, cfg, meta)
            sr = float(np.mean(recent)) if recent else 0.0
            if recent and sr > best_sr:
                best_sr = sr
                save_agent(out / "best.ckpt", adapter, cfg, dict(meta, window_sr=sr))
    meta = {"iteration": cfg.n_iter, "env_steps": env_steps, "grad_steps": grad_steps}
    save_agent(out / "final.ckpt", adapter, cfg, meta)
    return {"log": log, "episodes": ep_log, "env_steps": env_steps, "grad_steps": grad_steps,
            "resets": resets, "completed_episodes": episodes, "out": str(out),
            "checkpoint": str(out / "final.ckpt"), "adapter": adapter,
            "planner_calls": _sum_planner_calls(workers)}


def _sum_planner_calls(workers) -> dict:
    tot = {"base": 0, "arm_checked": 0, "arm_unchecked": 0}
    for w in workers:
        for k in tot:
            tot[k] += w.env.planner_calls[k]
    return tot


def _planner_counts(row, workers):
    calls = _sum_planner_calls(workers)
    row["arm_checked"] = calls["arm_checked"]
    row["arm_unchecked"] = calls["arm_unchecked"]


class _Window:
    """Accumulates per-log-interval statistics."""

    def __init__(self):
        self.flush()

    def subgoal(self, info):
        k = info["subgoal_type"]
        self.att[k] += 1
        self.ok[k] += int(info["subgoal_ok"])

    def episode(self, cfg, res, ret):
        self.returns.append(ret)
        self.success.append(float(res.success))
        if res.shortest_path > 0:
            self.spl.append(float(res.success) * res.shortest_path / max(res.path_length, res.shortest_path))
        if res.completion:
            self.c5.append(res.completion.get("5", 0))
            self.c10.append(res.completion.get("10", 0))

    def loss(self, d):
        self.losses.append(d["loss"])
        self.norms.append(d["grad_norm"])
        if d["alpha"] != "":
            self.alpha = d["alpha"]

    def flush(self) -> dict:
        row = {}
        if hasattr(self, "att"):
            mean = lambda xs: float(np.mean(xs)) if xs else ""
            tot_a = self.att["base"] + self.att["arm"]
            row = {
                "mean_return": mean(self.returns), "sr": mean(self.success), "spl": mean(self.spl),
                "completion_5": mean(self.c5), "completion_10": mean(self.c10),
                "base_attempted": self.att["base"], "base_succeeded": self.ok["base"],
                "arm_attempted": self.att["arm"], "arm_succeeded": self.ok["arm"],
                "subgoal_sr": (self.ok["base"] + self.ok["arm"]) / tot_a if tot_a else "",
                "base_subgoal_sr": self.ok["base"] / self.att["base"] if self.att["base"] else "",
                "arm_subgoal_sr": self.ok["arm"] / self.att["arm"] if self.att["arm"] else "",
                "loss": mean(self.losses), "grad_norm": mean(self.norms), "alpha": self.alpha,
            }
        self.att = {"base": 0, "arm": 0}
        self.ok = {"base": 0, "arm": 0}
        self.returns, self.success, self.spl, self.c5, self.c10 = [], [], [], [], []
        self.losses, self.norms = [], []
        self.alpha = ""
        return row
