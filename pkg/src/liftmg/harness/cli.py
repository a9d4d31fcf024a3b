"""Command-line entry point: ``liftmg <subcommand> ...``.

Every subcommand writes its outputs under ``--out DIR`` together with a
``manifest.json`` listing the artifacts and the seeds that produced them.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from liftmg import tasks as T
from liftmg import world
from liftmg.harness.config import AGENT_KINDS, ConfigError, RunConfig
from liftmg.learn.checkpoint import CheckpointError


def _add_config_flags(p: argparse.ArgumentParser):
    """One ``--key`` flag per RunConfig field; unset flags keep the file/default value."""
    for f in dataclasses.fields(RunConfig):
        if f.name == "out":
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, bool):
            p.add_argument(flag, dest=f.name, default=None, type=lambda s: s.lower() in ("1", "true", "yes", "on"),
                           metavar="BOOL")
        elif isinstance(default, list):
            p.add_argument(flag, dest=f.name, default=None, nargs="+", type=int)
        else:
            p.add_argument(flag, dest=f.name, default=None, type=type(default))


def _config_from_args(args) -> RunConfig:
    agent = args.agent or "sgp-d"
    if args.config:
        base = RunConfig.load(args.config).to_dict()
    else:
        base = RunConfig.for_agent(agent).to_dict()
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "out":
            base[f.name] = v
    base["out"] = str(args.out)
    return RunConfig.from_dict(base)


def _write_manifest(out: Path, command: str, artifacts: list, seeds, extra: dict = None):
    manifest = {"command": command, "seeds": seeds,
                "artifacts": [{"path": a, "seeds": seeds} if isinstance(a, str) else a for a in artifacts]}
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    from liftmg.harness.train import train

    cfg = _config_from_args(args)
    out = _out(args)

    def progress(row):
        if not args.quiet:
            print(f"iter {row['iteration']} steps {row['env_steps']} episodes {row['episodes']} "
                  f"sr {row['sr']} subgoal_sr {row['subgoal_sr']} loss {row['loss']}", flush=True)

    res = train(cfg, out, progress)
    arts = ["config.toml", "metrics.csv", "episodes.csv", "latest.ckpt", "final.ckpt"]
    if (out / "best.ckpt").exists():
        arts.append("best.ckpt")
    _write_manifest(out, "train", arts, [cfg.seed + w for w in range(cfg.workers)],
                    {"env_steps": res["env_steps"], "grad_steps": res["grad_steps"],
                     "episodes": res["completed_episodes"], "resets": res["resets"]})
    print(f"wrote {out / 'final.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    from liftmg.harness.evaluate import SUMMARY_COLUMNS, evaluate, rows_to_csv

    out = _out(args)
    ev = evaluate(args.checkpoint, args.task, args.episodes, args.seeds, args.base_planner,
                  args.arm_planner)
    (out / "eval.csv").write_text(rows_to_csv(ev["rows"], SUMMARY_COLUMNS))
    (out / "eval_aggregate.json").write_text(json.dumps(ev["aggregate"], indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "eval", ["eval.csv", "eval_aggregate.json"], list(args.seeds),
                    {"checkpoint": str(args.checkpoint), "episodes": args.episodes})
    for r in ev["rows"]:
        print(f"seed {r['seed']}: sr {r['sr']:.3f} spl {r['spl'] if r['spl'] == '' else format(r['spl'], '.3f')}")
    for k, v in ev["aggregate"].items():
        print(f"{k}: mean {v['mean']:.3f} std {v['std']:.3f} max {v['max']:.3f}")
    return 0


def cmd_swap_eval(args) -> int:
    from liftmg.harness.evaluate import planner_swap_eval, swap_table_csv

    out = _out(args)
    rows = planner_swap_eval(args.checkpoint, args.task, args.episodes, args.seed)
    text = swap_table_csv(rows)
    (out / "swap_eval.csv").write_text(text)
    _write_manifest(out, "swap-eval", ["swap_eval.csv"], [args.seed],
                    {"checkpoint": str(args.checkpoint), "episodes": args.episodes})
    print(text, end="")
    return 0


def cmd_explore(args) -> int:
    from liftmg.harness.explore import exploration_analysis

    out = _out(args)
    rep = exploration_analysis(args.task, args.episodes, args.seed, out)
    (out / "exploration.json").write_text(json.dumps(rep, indent=2, sort_keys=True, default=str) + "\n")
    _write_manifest(out, "explore", ["exploration.json"] + rep.get("artifacts", []), [args.seed])
    for k in ("subgoal_cells", "flat_cells", "coverage_ratio", "subgoal_interactions",
              "flat_interactions", "interaction_ratio", "subgoal_cells_per_episode",
              "flat_cells_per_episode"):
        print(f"{k}: {rep[k]}")
    return 0


def cmd_trace(args) -> int:
    from liftmg.harness.agents import load_adapter
    from liftmg.harness.evaluate import policy_from_adapter
    from liftmg.harness.train import make_env
    from liftmg.lifted import run_episode
    from liftmg.policies import GeodesicFollower, RandomSubgoalPolicy

    out = _out(args)
    if args.checkpoint:
        adapter, cfg, _ = load_adapter(args.checkpoint)
        if adapter.mode != "lifted":
            raise ConfigError("trace export needs a subgoal-level agent")
        if args.task:
            cfg = cfg.replace(task=args.task)
        policy = policy_from_adapter(adapter)(None)
    else:
        cfg = RunConfig(task=args.task or "PointNav")
        policy = GeodesicFollower() if args.policy == "geodesic" else RandomSubgoalPolicy(args.seed)
    env = make_env(cfg, evaluation=True)
    res = run_episode(env, policy, "lifted", args.seed)
    name = f"trace_{cfg.task}_{args.seed}.csv"
    (out / name).write_text(env.trace_csv())
    _write_manifest(out, "trace", [name], [args.seed], {"success": bool(res.success)})
    print(f"wrote {out / name} ({len(env.trace)} subgoals, success={res.success})")
    return 0


def scene_check(names=None, n_resets: int = 5) -> list[tuple[str, bool, str]]:
    """Validate fixtures: parse, dump/parse round-trip, collision-free start, task resets."""
    report = []
    names = names or T.list_scenes()
    for name in names:
        try:
            path = Path(name)
            text = path.read_text() if path.suffix == ".toml" and path.exists() else T.scene_descriptor(name)
            st = world.load_scene(text)
            again = world.load_scene(world.dump_scene(st))
            if world.state_digest(again) != world.state_digest(st):
                raise world.SceneError("dump/load round-trip changed the scene")
            if world.check_body_collision(st):
                raise world.SceneError("robot starts in collision")
            kinds = [k for k in T.TASK_KINDS if T.make_task(k).scene == st.name]
            for k in kinds:
                for s in range(n_resets):
                    T.reset(T.make_task(k), s)
            report.append((name, True, f"ok ({len(st.objects)} objects, {len(st.walls)} walls, "
                                       f"tasks: {', '.join(kinds) or 'none'})"))
        except (world.SceneError, T.TaskError, OSError, ValueError) as e:
            report.append((name, False, str(e)))
    return report


def cmd_scene_check(args) -> int:
    out = _out(args)
    rep = scene_check(args.scenes or None, args.resets)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {msg}" for name, ok, msg in rep]
    (out / "scene_check.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "scene-check", ["scene_check.txt"], list(range(args.resets)))
    print("\n".join(lines))
    return 0 if all(ok for _, ok, _ in rep) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liftmg", description="Subgoal-level RL with motion generation.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent")
    t.add_argument("--config", type=Path, help="RunConfig TOML file")
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--quiet", action="store_true")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    planners = ("RrtConnect", "LazyPrm")
    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out seeds")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--task", choices=T.TASK_KINDS)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seeds", type=int, nargs="+", default=[0])
    e.add_argument("--base-planner", choices=planners)
    e.add_argument("--arm-planner", choices=planners)
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("swap-eval", help="evaluate under all planner pairings")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--task", choices=T.TASK_KINDS)
    s.add_argument("--episodes", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_swap_eval)

    x = sub.add_parser("explore", help="random-policy coverage and interaction analysis")
    x.add_argument("--task", choices=T.TASK_KINDS, default="PushDoorNav")
    x.add_argument("--episodes", type=int, default=100)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", type=Path, required=True)
    x.set_defaults(func=cmd_explore)

    r = sub.add_parser("trace", help="export one episode's subgoal trace as CSV")
    r.add_argument("--checkpoint", type=Path)
    r.add_argument("--policy", choices=("random", "geodesic"), default="random")
    r.add_argument("--task", choices=T.TASK_KINDS)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", type=Path, required=True)
    r.set_defaults(func=cmd_trace)

    c = sub.add_parser("scene-check", help="validate scene fixtures")
    c.add_argument("scenes", nargs="*", help="scene names or .toml paths (default: all)")
    c.add_argument("--resets", type=int, default=5)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(func=cmd_scene_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and args.agent is not None and args.agent not in AGENT_KINDS:
        parser.error(f"--agent must be one of {', '.join(AGENT_KINDS)}")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, T.TaskError, world.SceneError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
