"""Soft actor-critic over a continuous action box.

Used two ways: as the subgoal regressor (8 outputs decoded into a base or
arm subgoal) and as the flat baseline (4 outputs decoded into a low-level
action). Actor and twin critics share one observation encoder; only the
critic loss trains it, the actor sees its features as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from liftmg.learn import nn
from liftmg.motion import BASE_R_MAX, PUSH_DIST_MAX, ArmSubgoal, BaseSubgoal, clip_subgoal
from liftmg.sense import MAP_SIZE, N_CHANNELS, TASK_VEC_DIM
from liftmg.world import EE_STEP_MAX, V_MAX, W_MAX, LowLevelAction

SUBGOAL_ACTION_DIM = 8
FLAT_ACTION_DIM = 4
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_LOG2 = math.log(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class SacConfig:
    action_dim: int = SUBGOAL_ACTION_DIM
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    init_log_alpha: float = 0.0
    target_entropy: float = None    # defaults to -action_dim
    map_pool: int = 2
    conv_widths: tuple = (16, 32, 32)
    task_width: int = 64
    hidden: int = 256

    def __post_init__(self):
        if self.target_entropy is None:
            self.target_entropy = -float(self.action_dim)
        self.conv_widths = tuple(int(c) for c in self.conv_widths)


# -- action decoding ----------------------------------------------------------------

def base_from_action(a) -> BaseSubgoal:
    r = (float(a[0]) + 1.0) * 0.5 * BASE_R_MAX
    return BaseSubgoal(r, float(a[1]) * math.pi, float(a[2]) * math.pi)


def arm_from_action(a) -> ArmSubgoal:
    row = int(round((float(a[3]) + 1.0) * 0.5 * (MAP_SIZE - 1)))
    col = int(round((float(a[4]) + 1.0) * 0.5 * (MAP_SIZE - 1)))
    px, py = float(a[5]), float(a[6])
    dist = min(math.hypot(px, py), 1.0) * PUSH_DIST_MAX
    return ArmSubgoal((row, col), math.atan2(py, px), dist)


def decode_subgoal(a):
    """Squashed 8-vector -> subgoal; the last entry picks base (> 0) or arm."""
    sg = base_from_action(a) if float(a[7]) > 0.0 else arm_from_action(a)
    return clip_subgoal(sg)


def decode_flat(a) -> LowLevelAction:
    return LowLevelAction(float(a[0]) * V_MAX, float(a[1]) * W_MAX,
                          float(a[2]) * EE_STEP_MAX, float(a[3]) * EE_STEP_MAX)


# -- networks -------------------------------------------------------------------------

def pool_maps(maps, factor: int):
    """Average-pool maps by ``factor``; applied once, before storage or encoding."""
    maps = np.asarray(maps)
    if factor <= 1:
        return maps
    squeeze = maps.ndim == 3
    out = nn.AvgPool2d(factor).forward(maps[None] if squeeze else maps)
    return out[0] if squeeze else out


class Encoder:
    """Strided convs on the pooled map, an MLP on the task vector, concatenated."""

    def __init__(self, cfg: SacConfig, rng, dtype):
        w = cfg.conv_widths
        size = MAP_SIZE // cfg.map_pool
        layers = []
        c_in = N_CHANNELS
        for i, c in enumerate(w):
            layers += [nn.Conv2d(c_in, c, 4, 2, 1, rng, dtype, input_grad=i > 0), nn.ReLU()]
            c_in, size = c, size // 2
        layers.append(nn.Flatten())
        self.conv = nn.Sequential(layers)
        self.mlp = nn.Sequential([nn.Dense(TASK_VEC_DIM, cfg.task_width, rng, dtype), nn.ReLU(),
                                  nn.Dense(cfg.task_width, cfg.task_width, rng, dtype), nn.ReLU()])
        self.n_conv = c_in * size * size
        self.dim = self.n_conv + cfg.task_width
        self.params = self.conv.params + self.mlp.params
        self.grads = self.conv.grads + self.mlp.grads

    def forward(self, maps, vecs):
        return np.concatenate([self.conv.forward(maps), self.mlp.forward(vecs)], axis=1)

    def backward(self, df):
        self.conv.backward(df[:, :self.n_conv])
        self.mlp.backward(df[:, self.n_conv:])


def _head(n_in, n_out, hidden, rng, dtype, out_scale=1.0):
    return nn.Sequential([nn.Dense(n_in, hidden, rng, dtype), nn.ReLU(),
                          nn.Dense(hidden, hidden, rng, dtype), nn.ReLU(),
                          nn.Dense(hidden, n_out, rng, dtype, init_scale=out_scale)])


def squash_log_prob(mu, log_std, eps):
    """Sample ``tanh(mu + std * eps)`` and its exact log-density."""
    u = mu + np.exp(log_std) * eps
    a = np.tanh(u)
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    log_det = 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))
    logp = np.sum(-0.5 * eps ** 2 - log_std - _HALF_LOG_2PI - log_det, axis=1)
    return a, logp


class SacAgent:
    def __init__(self, cfg: SacConfig = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg = cfg or SacConfig()
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.rng = np.random.default_rng([seed, 1])
        d = cfg.action_dim
        self.enc = Encoder(cfg, rng, dtype)
        self.actor = _head(self.enc.dim, 2 * d, cfg.hidden, rng, dtype, out_scale=0.1)
        self.q1 = _head(self.enc.dim + d, 1, cfg.hidden, rng, dtype)
        self.q2 = _head(self.enc.dim + d, 1, cfg.hidden, rng, dtype)
        self.enc_t = Encoder(cfg, np.random.default_rng(0), dtype)
        self.q1_t = _head(self.enc.dim + d, 1, cfg.hidden, np.random.default_rng(0), dtype)
        self.q2_t = _head(self.enc.dim + d, 1, cfg.hidden, np.random.default_rng(0), dtype)
        nn.copy_params(self.target_params, self.critic_params)
        self.log_alpha = np.array([cfg.init_log_alpha], dtype=np.float64)
        self.critic_opt = nn.Adam(self.critic_params, cfg.lr)
        self.actor_opt = nn.Adam(self.actor.params, cfg.lr)
        self.alpha_opt = nn.Adam([self.log_alpha], cfg.lr)
        self.updates = 0

    # -- parameter groups ---------------------------------------------------------

    @property
    def critic_params(self):
        return self.enc.params + self.q1.params + self.q2.params

    @property
    def critic_grads(self):
        return self.enc.grads + self.q1.grads + self.q2.grads

    @property
    def target_params(self):
        return self.enc_t.params + self.q1_t.params + self.q2_t.params

    @property
    def alpha(self) -> float:
        return float(math.exp(self.log_alpha[0]))

    def named_arrays(self) -> dict:
        """Every array that defines the agent, for checkpointing."""
        out = {}
        groups = {"enc": self.enc.params, "actor": self.actor.params, "q1": self.q1.params,
                  "q2": self.q2.params, "target": self.target_params, "log_alpha": [self.log_alpha]}
        for g, arrs in groups.items():
            for i, a in enumerate(arrs):
                out[f"{g}.{i}"] = a
        for name, opt in (("critic_opt", self.critic_opt), ("actor_opt", self.actor_opt),
                          ("alpha_opt", self.alpha_opt)):
            for i, a in enumerate(opt.state()):
                out[f"{name}.{i}"] = a
            out[f"{name}.t"] = np.array([opt.t], dtype=np.int64)
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
            if k.endswith(".t") or k == "updates":
                continue
            a[...] = arrays[k]
        for name, opt in (("critic_opt", self.critic_opt), ("actor_opt", self.actor_opt),
                          ("alpha_opt", self.alpha_opt)):
            opt.t = int(arrays[f"{name}.t"][0])
        self.updates = int(arrays["updates"][0])

    # -- acting ------------------------------------------------------------------------

    def _cast(self, maps, vecs):
        maps = np.asarray(maps, dtype=self.dtype)
        vecs = np.asarray(vecs, dtype=self.dtype)
        if maps.ndim == 3:
            maps, vecs = maps[None], vecs[None]
        return maps, vecs

    def policy_outputs(self, maps, vecs):
        f = self.enc.forward(*self._cast(maps, vecs))
        out = self.actor.forward(f)
        d = self.cfg.action_dim
        return out[:, :d], np.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)

    def preprocess(self, maps):
        return pool_maps(np.asarray(maps, dtype=self.dtype), self.cfg.map_pool)

    def act_raw(self, maps, vecs, deterministic: bool = False, rng=None) -> np.ndarray:
        """Squashed actions in [-1, 1]^d, one row per observation (pooled maps)."""
        mu, log_std = self.policy_outputs(maps, vecs)
        if deterministic:
            return np.tanh(mu)
        rng = rng if rng is not None else self.rng
        eps = rng.standard_normal(mu.shape).astype(mu.dtype)
        return np.tanh(mu + np.exp(log_std) * eps)

    def act(self, obs, deterministic: bool = False, rng=None):
        """Observation -> (decoded action, raw squashed vector)."""
        a = self.act_raw(self.preprocess(obs.map.channels), obs.task_vec, deterministic, rng)[0]
        dec = decode_subgoal if self.cfg.action_dim == SUBGOAL_ACTION_DIM else decode_flat
        return dec(a), a

    # -- losses -------------------------------------------------------------------------

    def _q_pair(self, heads, f, a):
        x = np.concatenate([f, a], axis=1)
        return heads[0].forward(x)[:, 0], heads[1].forward(x)[:, 0]

    def critic_targets(self, batch, eps_next) -> np.ndarray:
        """``r + gamma (1 - done) (min twin target Q - alpha log pi)`` at s'.

        Batches hold pooled maps (see ``preprocess``).
        """
        cfg = self.cfg
        mu, log_std = self.policy_outputs(batch["next_map"], batch["next_vec"])
        a2, logp2 = squash_log_prob(mu, log_std, eps_next)
        ft = self.enc_t.forward(*self._cast(batch["next_map"], batch["next_vec"]))
        t1, t2 = self._q_pair((self.q1_t, self.q2_t), ft, a2)
        soft = np.minimum(t1, t2) - self.alpha * logp2
        r = np.asarray(batch["reward"], dtype=np.float64)
        done = np.asarray(batch["done"], dtype=np.float64)
        return r + cfg.gamma * (1.0 - done) * soft

    def critic_loss(self, batch, y):
        """Sum of the two critics' MSE to fixed targets ``y``; fills critic grads."""
        f = self.enc.forward(*self._cast(batch["map"], batch["vec"]))
        a = np.asarray(batch["action"], dtype=self.dtype)
        x = np.concatenate([f, a], axis=1)
        y = np.asarray(y, dtype=self.dtype)
        df = np.zeros_like(f)
        loss = 0.0
        for head in (self.q1, self.q2):
            q = head.forward(x)[:, 0]
            l, dq = nn.mse(q, y)
            loss += l
            df += head.backward(dq[:, None])[:, :f.shape[1]]
        self.enc.backward(df)
        return loss, f

    def actor_loss(self, f, eps):
        """``mean(alpha log pi - min Q)`` at features ``f``; fills actor grads.

        Returns ``(loss, log_probs)``.
        """
        d = self.cfg.action_dim
        n = f.shape[0]
        out = self.actor.forward(f)
        mu, raw_ls = out[:, :d], out[:, d:]
        log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        a, logp = squash_log_prob(mu, log_std, eps)
        x = np.concatenate([f, a.astype(f.dtype)], axis=1)
        q1 = self.q1.forward(x)[:, 0]
        q2 = self.q2.forward(x)[:, 0]
        use1 = q1 <= q2
        qmin = np.where(use1, q1, q2)
        alpha = self.alpha
        loss = float(np.mean(alpha * logp - qmin))
        # dQmin/da through whichever critic is smaller, per row
        w1 = use1.astype(f.dtype)
        g1 = self.q1.backward((-w1 / n)[:, None])[:, -d:]
        g2 = self.q2.backward((-(1.0 - w1) / n)[:, None])[:, -d:]
        da = g1 + g2
        du = da * (1.0 - a ** 2) + alpha * 2.0 * a / n
        dmu = du
        dls = du * std * eps - alpha / n
        dls = dls * ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX))
        self.actor.backward(np.concatenate([dmu, dls], axis=1).astype(f.dtype))
        return loss, logp

    def alpha_loss(self, logp) -> tuple:
        """``-mean(log_alpha (log pi + target_entropy))`` and its gradient."""
        m = float(np.mean(logp + self.cfg.target_entropy))
        return -float(self.log_alpha[0]) * m, np.array([-m])

    # -- update -----------------------------------------------------------------------------

    def update(self, batch, rng=None) -> dict:
        cfg = self.cfg
        n = len(batch["reward"])
        if n < 1:
            raise ValueError("empty batch")
        rng = rng if rng is not None else self.rng
        d = cfg.action_dim
        eps_next = rng.standard_normal((n, d)).astype(self.dtype)
        eps = rng.standard_normal((n, d)).astype(self.dtype)
        y = self.critic_targets(batch, eps_next)
        c_loss, f = self.critic_loss(batch, y)
        c_norm = nn.global_norm(self.critic_grads)
        self.critic_opt.step(self.critic_grads)
        a_loss, logp = self.actor_loss(f, eps)
        a_norm = nn.global_norm(self.actor.grads)
        self.actor_opt.step(self.actor.grads)
        al_loss, al_grad = self.alpha_loss(logp)
        self.alpha_opt.step([al_grad])
        nn.polyak(self.target_params, self.critic_params, cfg.tau)
        self.updates += 1
        return {"critic_loss": c_loss, "actor_loss": a_loss, "alpha_loss": al_loss,
                "alpha": self.alpha, "entropy": float(-np.mean(logp)),
                "critic_grad_norm": c_norm, "actor_grad_norm": a_norm}
