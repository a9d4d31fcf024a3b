"""Uniform wrappers so the training loop can drive any agent kind."""

from __future__ import annotations

import numpy as np

from liftmg.learn import checkpoint as ckpt
from liftmg.learn.dqn import N_ACTIONS, DqnAgent, DqnConfig, decode_action, epsilon_at
from liftmg.learn.replay import ReplayBuffer, decode_map, encode_map
from liftmg.learn.sac import (FLAT_ACTION_DIM, SUBGOAL_ACTION_DIM, SacAgent, SacConfig,
                              decode_flat, decode_subgoal, pool_maps)


class DqnAdapter:
    kind = "sgp-d"
    mode = "lifted"

    def __init__(self, cfg, seed: int, agent: DqnAgent = None):
        self.cfg = cfg
        self.agent = agent or DqnAgent(DqnConfig(batch_size=cfg.effective_batch), seed=seed)
        self.epsilon = 1.0

    def set_progress(self, env_steps: int):
        horizon = self.cfg.epsilon_horizon or self.cfg.total_env_steps
        self.epsilon = epsilon_at(env_steps, horizon, self.agent.cfg)

    def random_action(self, obs, rng):
        idx = int(rng.integers(N_ACTIONS))
        return decode_action(idx), idx

    def act(self, obs, rng, explore: bool = True):
        return self.agent.act(obs, self.epsilon if explore else 0.0, rng)

    def record(self, buf: ReplayBuffer, obs, stored, reward, next_obs, terminal):
        buf.add(map=encode_map(obs.map.channels), action=np.int64(stored), reward=np.float64(reward),
                next_map=encode_map(next_obs.map.channels), done=np.float64(terminal))

    def update(self, raw: dict) -> dict:
        batch = {"map": decode_map(raw["map"]), "next_map": decode_map(raw["next_map"]),
                 "action": raw["action"], "reward": raw["reward"], "done": raw["done"]}
        d = self.agent.update(batch)
        return {"loss": d["td_loss"], "grad_norm": d["grad_norm"], "alpha": "",
                "epsilon": self.epsilon}


class SacAdapter:
    def __init__(self, cfg, seed: int, agent: SacAgent = None):
        self.cfg = cfg
        self.kind = cfg.agent
        self.mode = "flat" if cfg.agent == "flat-sac" else "lifted"
        dim = FLAT_ACTION_DIM if self.mode == "flat" else SUBGOAL_ACTION_DIM
        self.decode = decode_flat if self.mode == "flat" else decode_subgoal
        self.agent = agent or SacAgent(SacConfig(action_dim=dim, batch_size=cfg.effective_batch,
                                                 map_pool=cfg.sac_map_pool), seed=seed)
        self.epsilon = ""

    def set_progress(self, env_steps: int):
        pass

    def random_action(self, obs, rng):
        a = rng.uniform(-1.0, 1.0, size=self.agent.cfg.action_dim)
        return self.decode(a), a

    def act(self, obs, rng, explore: bool = True):
        return self.agent.act(obs, deterministic=not explore, rng=rng)

    def record(self, buf: ReplayBuffer, obs, stored, reward, next_obs, terminal):
        pool = self.agent.cfg.map_pool
        buf.add(map=encode_map(pool_maps(obs.map.channels, pool)), vec=obs.task_vec.astype(np.float32),
                action=np.asarray(stored, dtype=np.float32), reward=np.float64(reward),
                next_map=encode_map(pool_maps(next_obs.map.channels, pool)),
                next_vec=next_obs.task_vec.astype(np.float32), done=np.float64(terminal))

    def update(self, raw: dict) -> dict:
        batch = dict(raw)
        batch["map"] = decode_map(raw["map"])
        batch["next_map"] = decode_map(raw["next_map"])
        d = self.agent.update(batch)
        return {"loss": d["critic_loss"], "grad_norm": d["critic_grad_norm"], "alpha": d["alpha"],
                "epsilon": ""}


def make_adapter(cfg, seed: int = None, agent=None):
    seed = cfg.seed if seed is None else seed
    if cfg.agent == "sgp-d":
        return DqnAdapter(cfg, seed, agent)
    return SacAdapter(cfg, seed, agent)


def save_agent(path, adapter, cfg, extra: dict = None):
    meta = {"agent": cfg.agent, "config": cfg.to_dict()}
    meta.update(extra or {})
    ckpt.save(path, adapter.agent.named_arrays(), meta)


def load_adapter(path, expected_agent: str = None):
    """Rebuild the adapter stored in a checkpoint file."""
    from liftmg.harness.config import RunConfig

    arrays, meta = ckpt.load(path)
    if expected_agent is not None and meta.get("agent") != expected_agent:
        raise ckpt.CheckpointError(f"checkpoint holds a {meta.get('agent')!r} agent, "
                                   f"expected {expected_agent!r}")
    cfg = RunConfig.from_dict(meta["config"])
    adapter = make_adapter(cfg)
    adapter.agent.load_arrays(arrays)
    return adapter, cfg, meta
