"""Double DQN over dense per-cell Q-value maps.

The network maps the 8-channel egocentric grid to 24 maps at a quarter of
the input resolution: 12 base maps (one per final-heading bin) followed by
12 arm maps (one per push-direction bin). An action is one entry of that
stack; its cell is scaled back up to the grid to form the subgoal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from liftmg.geometry import normalize_angle
from liftmg.learn import nn
from liftmg.motion import PUSH_DIST_MAX, ArmSubgoal, BaseSubgoal, clip_subgoal
from liftmg.sense import MAP_SIZE, N_CHANNELS, cell_to_ego

N_BASE_BINS = 12
N_ARM_BINS = 12
N_Q_CHANNELS = N_BASE_BINS + N_ARM_BINS
DOWNSAMPLE = 4
Q_SIZE = MAP_SIZE // DOWNSAMPLE
N_ACTIONS = N_Q_CHANNELS * Q_SIZE * Q_SIZE


@dataclass
class DqnConfig:
    gamma: float = 0.99
    lr: float = 2.5e-4
    batch_size: int = 512
    huber_delta: float = 1.0
    target_period: int = 1024
    grad_clip: float = 10.0
    eps_start: float = 0.8
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    widths: tuple = (32, 64, 64, 64)

    def __post_init__(self):
        self.widths = tuple(int(c) for c in self.widths)


def epsilon_at(step: int, total: int, cfg: DqnConfig) -> float:
    """Linear decay from ``eps_start`` to ``eps_end`` over the first fraction of training."""
    horizon = max(1.0, cfg.eps_fraction * total)
    frac = min(1.0, step / horizon)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def build_qnet(cfg: DqnConfig, rng, dtype=np.float32) -> nn.Sequential:
    """Four stride-2 convs down to 1/16, two stride-2 transposed convs back to 1/4."""
    w = cfg.widths
    layers = []
    c_in = N_CHANNELS
    for i, c in enumerate(w):
        layers += [nn.Conv2d(c_in, c, 4, 2, 1, rng, dtype, input_grad=i > 0), nn.ReLU()]
        c_in = c
    layers += [nn.ConvTranspose2d(c_in, w[-2], rng, dtype), nn.ReLU(),
               nn.ConvTranspose2d(w[-2], N_Q_CHANNELS, rng, dtype)]
    return nn.Sequential(layers)


def decode_action(index: int):
    """Flat index over the (24, 16, 16) stack -> subgoal."""
    index = int(index)
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} out of range")
    ch, rem = divmod(index, Q_SIZE * Q_SIZE)
    i, j = divmod(rem, Q_SIZE)
    row = DOWNSAMPLE * i + DOWNSAMPLE // 2
    col = DOWNSAMPLE * j + DOWNSAMPLE // 2
    if ch < N_BASE_BINS:
        f, l = cell_to_ego(row, col)
        dtheta = normalize_angle(2.0 * math.pi * ch / N_BASE_BINS)
        return clip_subgoal(BaseSubgoal(math.hypot(f, l), math.atan2(l, f), dtheta))
    k = ch - N_BASE_BINS
    return clip_subgoal(ArmSubgoal((row, col), normalize_angle(2.0 * math.pi * k / N_ARM_BINS),
                                   PUSH_DIST_MAX))


def select_action(q: np.ndarray, epsilon: float, rng) -> int:
    """Epsilon-greedy over one flattened Q stack; ties go to the lowest index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q.reshape(-1)))


def double_dqn_targets(q_online_next, q_target_next, reward, done, gamma: float) -> np.ndarray:
    """``r + gamma Q_target(s', argmax_a Q_online(s', a))``; just ``r`` when terminal."""
    qo = np.asarray(q_online_next).reshape(len(reward), -1)
    qt = np.asarray(q_target_next).reshape(len(reward), -1)
    best = np.argmax(qo, axis=1)
    boot = qt[np.arange(len(best)), best]
    reward = np.asarray(reward, dtype=np.float64)
    done = np.asarray(done, dtype=np.float64)
    return reward + gamma * (1.0 - done) * boot


class DqnAgent:
    def __init__(self, cfg: DqnConfig = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg = cfg or DqnConfig()
        self.dtype = dtype
        self.online = build_qnet(cfg, np.random.default_rng(seed), dtype)
        self.target = build_qnet(cfg, np.random.default_rng(seed), dtype)
        nn.copy_params(self.target.params, self.online.params)
        self.opt = nn.Adam(self.online.params, cfg.lr)
        self.rng = np.random.default_rng([seed, 2])
        self.updates = 0

    def q_maps(self, maps, net=None) -> np.ndarray:
        maps = np.asarray(maps, dtype=self.dtype)
        if maps.ndim == 3:
            maps = maps[None]
        return (net or self.online).forward(maps)

    def act(self, obs, epsilon: float = 0.0, rng=None):
        """Observation -> (subgoal, flat action index)."""
        rng = rng if rng is not None else self.rng
        if epsilon > 0.0 and rng.random() < epsilon:
            idx = int(rng.integers(N_ACTIONS))
        else:
            idx = select_action(self.q_maps(obs.map.channels)[0], 0.0, rng)
        return decode_action(idx), idx

    def loss(self, batch):
        """Huber TD loss on the taken actions; fills the online gradients.

        Returns ``(loss, targets, q_taken)``.
        """
        cfg = self.cfg
        qo_next = self.q_maps(batch["next_map"])
        qt_next = self.q_maps(batch["next_map"], self.target)
        y = double_dqn_targets(qo_next, qt_next, batch["reward"], batch["done"], cfg.gamma)
        q = self.q_maps(batch["map"])
        n = q.shape[0]
        flat = q.reshape(n, -1)
        a = np.asarray(batch["action"], dtype=np.int64)
        taken = flat[np.arange(n), a]
        loss, dtaken = nn.huber(taken, y.astype(self.dtype), cfg.huber_delta)
        dflat = np.zeros_like(flat)
        dflat[np.arange(n), a] = dtaken
        self.online.backward(dflat.reshape(q.shape))
        return loss, y, taken

    def update(self, batch) -> dict:
        if len(batch["reward"]) < 1:
            raise ValueError("empty batch")
        loss, y, taken = self.loss(batch)
        norm = nn.clip_grad_norm(self.online.grads, self.cfg.grad_clip)
        self.opt.step(self.online.grads)
        self.updates += 1
        if self.updates % self.cfg.target_period == 0:
            nn.copy_params(self.target.params, self.online.params)
        return {"td_loss": loss, "grad_norm": norm, "q_mean": float(np.mean(taken)),
                "target_mean": float(np.mean(y))}

    def named_arrays(self) -> dict:
        out = {f"online.{i}": p for i, p in enumerate(self.online.params)}
        out.update({f"target.{i}": p for i, p in enumerate(self.target.params)})
        out.update({f"opt.{i}": a for i, a in enumerate(self.opt.state())})
        out["opt.t"] = np.array([self.opt.t], dtype=np.int64)
        out["updates"] = np.array([self.updates], dtype=np.int64)
        return out

    def load_arrays(self, arrays: dict):
        mine = self.named_arrays()
        if set(mine) != set(arrays):
            raise ValueError("checkpoint does not match this agent layout")
        for k, a in mine.items():
            if a.shape != arrays[k].shape:
                raise ValueError(f"shape mismatch for {k}: {a.shape} vs {arrays[k].shape}")
        for k, a in mine.items():
            if k not in ("opt.t", "updates"):
                a[...] = arrays[k]
        self.opt.t = int(arrays["opt.t"][0])
        self.updates = int(arrays["updates"][0])
