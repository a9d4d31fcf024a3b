"""Deterministic evaluation suites and the planner-swap comparison."""

from __future__ import annotations

import csv
import io
from typing import Callable, Optional, Sequence

import numpy as np

from liftmg import tasks as T
from liftmg.harness.agents import load_adapter
from liftmg.harness.config import RunConfig
from liftmg.harness.train import TRAIN_SEED_BASE, make_env
from liftmg.lifted import run_episode
from liftmg.planners import PLANNER_KINDS

EVAL_SEED_STRIDE = 10_000
SUMMARY_COLUMNS = ["seed", "episodes", "sr", "spl", "completion_5", "completion_10", "mean_return",
                   "base_subgoal_sr", "arm_subgoal_sr", "arm_checked", "arm_unchecked"]


def eval_episode_seeds(seed: int, n_episodes: int) -> list[int]:
    """Held-out episode seeds for one evaluation seed; disjoint from training seeds."""
    if n_episodes > EVAL_SEED_STRIDE:
        raise ValueError(f"at most {EVAL_SEED_STRIDE} episodes per evaluation seed")
    base = seed * EVAL_SEED_STRIDE
    seeds = [base + i for i in range(n_episodes)]
    if seeds and seeds[-1] >= TRAIN_SEED_BASE:
        raise ValueError("evaluation seed block overlaps training seeds")
    return seeds


def summarize(task: T.TaskSpec, results: Sequence[T.EpisodeResult]) -> dict:
    if not results:
        return {"episodes": 0, "sr": 0.0, "spl": 0.0, "completion_5": "", "completion_10": "",
                "mean_return": "", "base_subgoal_sr": "", "arm_subgoal_sr": ""}
    row = {"episodes": len(results), "sr": T.success_rate(results),
           "spl": T.spl(results) if task.family == "nav" else "",
           "mean_return": float(np.mean([r.reward_sum for r in results]))}
    if task.family == "mm":
        row["completion_5"] = float(np.mean([r.completion.get("5", 0) for r in results]))
        row["completion_10"] = float(np.mean([r.completion.get("10", 0) for r in results]))
    else:
        row["completion_5"] = row["completion_10"] = ""
    for k in ("base", "arm"):
        att = sum(r.subgoal_stats.get(k, {}).get("attempted", 0) for r in results)
        ok = sum(r.subgoal_stats.get(k, {}).get("succeeded", 0) for r in results)
        row[f"{k}_subgoal_sr"] = ok / att if att else ""
    return row


def evaluate_policy(make_policy: Callable, cfg: RunConfig, n_episodes: int,
                    seeds: Sequence[int] = (0,), mode: str = "lifted", base_kind: str = None,
                    arm_kind: str = None, arm_collision_check: Optional[bool] = None) -> dict:
    """Roll ``make_policy(env)`` on held-out seeds; one summary row per seed plus an aggregate.

    ``make_policy`` is called once per episode with the environment, so
    stateful scripted policies start fresh.
    """
    task = T.make_task(cfg.task)
    rows = []
    all_results = []
    for s in seeds:
        env = make_env(cfg, evaluation=True, base_kind=base_kind, arm_kind=arm_kind,
                       arm_collision_check=arm_collision_check)
        results = []
        for ep_seed in eval_episode_seeds(s, n_episodes):
            results.append(run_episode(env, make_policy(env), mode=mode, seed=ep_seed))
        row = {"seed": s, **summarize(task, results), **{k: env.planner_calls[k]
                                                          for k in ("arm_checked", "arm_unchecked")}}
        rows.append(row)
        all_results.extend(results)
    agg = {}
    for key in ("sr", "spl", "completion_5", "completion_10"):
        vals = [r[key] for r in rows if r[key] != ""]
        if vals:
            agg[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                        "max": float(np.max(vals))}
    return {"rows": rows, "aggregate": agg, "results": all_results}


def policy_from_adapter(adapter) -> Callable:
    """Deterministic acting function for a trained agent."""
    rng = np.random.default_rng(0)

    def make(env):
        return lambda obs: adapter.act(obs, rng, explore=False)[0]
    return make


def evaluate(checkpoint, task: str = None, n_episodes: int = 100, seeds: Sequence[int] = (0,),
             base_kind: str = None, arm_kind: str = None, expected_agent: str = None,
             arm_collision_check: Optional[bool] = None) -> dict:
    """Evaluate a checkpoint; raises ``CheckpointError`` for an incompatible file."""
    adapter, cfg, _ = load_adapter(checkpoint, expected_agent)
    if task is not None:
        cfg = cfg.replace(task=task)
    return evaluate_policy(policy_from_adapter(adapter), cfg, n_episodes, seeds, mode=adapter.mode,
                           base_kind=base_kind, arm_kind=arm_kind,
                           arm_collision_check=arm_collision_check)


def planner_swap_eval(checkpoint, task: str = None, n_episodes: int = 100, seed: int = 0,
                      make_policy: Callable = None, cfg: RunConfig = None) -> list[dict]:
    """SR/SPL under every base x arm planner pairing, with deltas from the RRT/RRT row."""
    if make_policy is None:
        adapter, cfg, _ = load_adapter(checkpoint)
        make_policy = policy_from_adapter(adapter)
    if task is not None:
        cfg = cfg.replace(task=task)
    rows = []
    for base in PLANNER_KINDS:
        for arm in PLANNER_KINDS:
            ev = evaluate_policy(make_policy, cfg, n_episodes, [seed], base_kind=base, arm_kind=arm)
            r = ev["rows"][0]
            rows.append({"base": base, "arm": arm, "sr": r["sr"], "spl": r["spl"]})
    ref = rows[0]
    for r in rows:
        r["d_sr"] = r["sr"] - ref["sr"]
        r["d_spl"] = (r["spl"] - ref["spl"]) if r["spl"] != "" else ""
    return rows


def format_delta(x) -> str:
    """Signed two-decimal delta in the usual table style, e.g. ``+0.01``."""
    if x == "":
        return ""
    return f"{x:+.2f}"


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def swap_table_csv(rows: Sequence[dict]) -> str:
    out = []
    for r in rows:
        out.append({"base": r["base"], "arm": r["arm"], "sr": f"{r['sr']:.2f}",
                    "spl": f"{r['spl']:.2f}" if r["spl"] != "" else "",
                    "d_sr": format_delta(r["d_sr"]), "d_spl": format_delta(r["d_spl"])})
    return rows_to_csv(out, ["base", "arm", "sr", "spl", "d_sr", "d_spl"])
