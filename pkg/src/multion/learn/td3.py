"""Clipped double-Q actor-critic updates (target networks, delayed actor,
target-policy smoothing) on the shared-trunk networks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError
from .augment import augment_shift, shift_actions, shift_offsets
from .networks import ActorCritic, NetSpec, soft_update
from .nn import Adam
from .replay import Batch


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    tau: float = 0.01
    actor_period: int = 2
    explore_std: float = 0.2
    explore_std_final: float = 0.05
    smooth_std: float = 0.1
    smooth_clip: float = 0.3
    batch_size: int = 64
    lr: float = 1e-4
    shift_pad: int = 4
    goal_period: int = 25
    episodes: int = 1000
    warmup_transitions: int = 256
    updates_per_transition: int = 1
    buffer_capacity: int = 50_000
    m_in: int = 24
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        for name in ("gamma", "tau", "lr"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        for name in ("explore_std", "explore_std_final", "smooth_std", "smooth_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("actor_period", "goal_period", "batch_size", "episodes", "updates_per_transition", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.shift_pad < 0 or self.warmup_transitions < 0:
            raise ConfigError("shift_pad and warmup_transitions must be non-negative")
        if self.m_in < 2 * 4 + 1:
            raise ConfigError("m_in too small for the convolution stack")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class Learner:
    """Online and target networks with their two optimizers."""

    def __init__(self, spec: NetSpec, cfg: TrainConfig, seed: int | None = None, dtype=np.float32):
        self.spec = spec
        self.cfg = cfg
        seed = cfg.seed if seed is None else seed
        self.online = ActorCritic(spec, seed, dtype)
        self.target = self.online.clone()
        self.critic_opt = Adam(self.online.critic_params(), lr=cfg.lr)
        self.actor_opt = Adam(self.online.actor_params(), lr=cfg.lr)
        self.critic_updates = 0
        self.actor_updates = 0

    def _augment(self, batch: Batch, rng: np.random.Generator):
        pad = self.cfg.shift_pad
        if pad == 0:
            return batch.obs, batch.next_obs, batch.action
        offs = shift_offsets(len(batch), pad, rng)
        obs = augment_shift(batch.obs, pad, offsets=offs)
        nxt = augment_shift(batch.next_obs, pad, offsets=offs)
        act = shift_actions(batch.action, offs, pad, self.spec.m_in)
        return obs, nxt, act

    def td_target(self, next_obs, next_enc, reward, done, rng: np.random.Generator | None = None) -> np.ndarray:
        cfg = self.cfg
        feat = self.target.features(next_obs)
        a = self.target.act(None, next_enc, feat=feat)
        if rng is not None and cfg.smooth_std > 0:
            noise = np.clip(rng.normal(0.0, cfg.smooth_std, a.shape), -cfg.smooth_clip, cfg.smooth_clip)
            a = np.clip(a + noise.astype(a.dtype), 0.0, 1.0)
        q1, q2 = self.target.q_values(None, next_enc, a, feat=feat)
        return clipped_target(reward, done, q1, q2, cfg.gamma)

    def critic_update(self, batch: Batch, rng: np.random.Generator) -> float:
        if len(batch) == 0:
            raise ConfigError("empty batch")
        obs, nxt, act = self._augment(batch, rng)
        y = self.td_target(nxt, batch.next_enc, batch.reward, batch.done, rng)
        return self.critic_regress(obs, batch.enc, act, y)

    def critic_regress(self, obs, enc, action, y) -> float:
        """One optimizer step of both Q heads (and the trunk) toward ``y``."""
        loss = critic_loss(self.online, obs, enc, action, y)
        self.critic_opt.step()
        self.critic_updates += 1
        return loss

    def q_for_actor(self, feat, enc, action):
        """Q1 of the online critic and a function mapping dL/dQ1 to dL/daction."""
        return online_q1(self.online, feat, enc, action)

    def actor_update(self, batch: Batch, rng: np.random.Generator | None = None) -> float:
        """Ascend Q1(s, actor(s)); the trunk is only read. Soft-updates the targets."""
        obs = batch.obs
        if rng is not None and self.cfg.shift_pad > 0:
            obs = augment_shift(obs, self.cfg.shift_pad, rng)
        loss = actor_loss(self.online, obs, batch.enc, self.q_for_actor)
        self.actor_opt.step()
        # the critic's parameter gradients from this pass are discarded
        for p in self.online.critic_params():
            p.grad[...] = 0
        soft_update(self.target, self.online, self.cfg.tau)
        self.actor_updates += 1
        return loss

    def update(self, batch: Batch, rng: np.random.Generator) -> tuple[float, float | None]:
        closs = self.critic_update(batch, rng)
        aloss = None
        if self.critic_updates % self.cfg.actor_period == 0:
            aloss = self.actor_update(batch, rng)
        return closs, aloss


def clipped_target(reward, done, q1_next, q2_next, gamma: float) -> np.ndarray:
    """y = r + gamma * (1 - done) * min(Q1', Q2')."""
    return reward + gamma * (1.0 - done) * np.minimum(q1_next, q2_next)


def critic_loss(net: ActorCritic, obs, enc, action, y, backward: bool = True) -> float:
    """Sum of both heads' mean squared errors to ``y``; fills critic gradients."""
    if backward:
        for p in net.critic_params():
            p.grad[...] = 0
    B = len(y)
    feat = net.features(obs)
    h = net.critic_head.forward(feat, enc)
    x = np.concatenate([h, enc.astype(h.dtype), action.astype(h.dtype)], axis=1)
    q1 = net.q1.forward(x)[:, 0]
    q2 = net.q2.forward(x)[:, 0]
    e1, e2 = q1 - y, q2 - y
    loss = float(np.mean(e1 * e1) + np.mean(e2 * e2))
    if backward:
        dx = net.q1.backward((2.0 / B * e1)[:, None]) + net.q2.backward((2.0 / B * e2)[:, None])
        dfeat = net.critic_head.backward(dx[:, : net.spec.embed])
        net.trunk.backward(dfeat)
    return loss


def online_q1(net: ActorCritic, feat, enc, action):
    h = net.critic_head.forward(feat, enc)
    x = np.concatenate([h, enc.astype(h.dtype), action.astype(h.dtype)], axis=1)
    q = net.q1.forward(x)[:, 0]
    off = net.spec.embed + net.spec.enc_width

    def backward(dq):
        return net.q1.backward(dq[:, None])[:, off:]

    return q, backward


def actor_loss(net: ActorCritic, obs, enc, q_fn=None, backward: bool = True) -> float:
    """-mean Q1(s, actor(s)); fills actor gradients only (trunk features are read)."""
    q_fn = q_fn or (lambda f, e, a: online_q1(net, f, e, a))
    if backward:
        for p in net.actor_params():
            p.grad[...] = 0
    feat = net.features(obs)
    B = feat.shape[0]
    ha = net.actor_head.forward(feat, enc)
    a = net.actor.forward(np.concatenate([ha, enc.astype(ha.dtype)], axis=1))
    q, q_backward = q_fn(feat, enc, a)
    loss = -float(np.mean(q))
    if backward:
        da = q_backward(np.full(B, -1.0 / B, dtype=a.dtype))
        dha = net.actor.backward(da)[:, : net.spec.embed]
        net.actor_head.backward(dha)
    return loss
