"""Encoder, actor and twin-Q critic for the long-term-goal policy.

The convolutional trunk is shared. Actor and critic each own a
fully-connected head (flattened features plus the target encoding, to a
layer-normalized tanh embedding). Only the critic optimizer updates the
trunk.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeError
from .nn import Conv2d, LayerNorm, Linear, Module, Param, ReLU, Sequential, Sigmoid, Tanh

RELU_GAIN = math.sqrt(2.0)


@dataclass(frozen=True)
class NetSpec:
    in_channels: int = 11
    m_in: int = 24
    conv_channels: int = 32
    conv_layers: int = 4
    embed: int = 50
    enc_width: int = 16
    hidden: int = 256
    action_dim: int = 2

    @property
    def conv_out(self) -> int:
        return self.m_in - 2 * self.conv_layers

    @property
    def flat(self) -> int:
        return self.conv_out * self.conv_out * self.conv_channels

    def as_dict(self) -> dict:
        return asdict(self)


class Trunk(Module):
    def __init__(self, spec: NetSpec, rng: np.random.Generator, dtype=np.float32):
        layers: list[Module] = []
        c = spec.in_channels
        for _ in range(spec.conv_layers):
            layers += [Conv2d(c, spec.conv_channels, rng, gain=RELU_GAIN, dtype=dtype), ReLU()]
            c = spec.conv_channels
        self.net = Sequential(*layers)
        self.spec = spec

    def forward(self, obs: np.ndarray) -> np.ndarray:
        s = self.spec
        if obs.shape[1:] != (s.m_in, s.m_in, s.in_channels):
            raise ShapeError(f"observation must be (B, {s.m_in}, {s.m_in}, {s.in_channels}), got {obs.shape}")
        out = self.net.forward(obs)
        self._shape = out.shape
        return out.reshape(out.shape[0], -1)

    def backward(self, dflat: np.ndarray) -> np.ndarray:
        return self.net.backward(dflat.reshape(self._shape))


class Head(Module):
    """[flattened features, target encoding] -> FC -> LayerNorm -> tanh."""

    def __init__(self, spec: NetSpec, rng: np.random.Generator, dtype=np.float32):
        self.fc = Linear(spec.flat + spec.enc_width, spec.embed, rng, dtype=dtype)
        self.ln = LayerNorm(spec.embed, dtype=dtype)
        self.act = Tanh()
        self._flat = spec.flat

    def forward(self, feat: np.ndarray, enc: np.ndarray) -> np.ndarray:
        x = np.concatenate([feat, enc.astype(feat.dtype)], axis=1)
        return self.act.forward(self.ln.forward(self.fc.forward(x)))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx = self.fc.backward(self.ln.backward(self.act.backward(dout)))
        return dx[:, : self._flat]


def mlp(n_in: int, hidden: int, n_out: int, rng: np.random.Generator, squash: bool = False, dtype=np.float32) -> Sequential:
    layers: list[Module] = [
        Linear(n_in, hidden, rng, gain=RELU_GAIN, dtype=dtype),
        ReLU(),
        Linear(hidden, hidden, rng, gain=RELU_GAIN, dtype=dtype),
        ReLU(),
        Linear(hidden, n_out, rng, dtype=dtype),
    ]
    if squash:
        layers.append(Sigmoid())
    return Sequential(*layers)


class ActorCritic(Module):
    def __init__(self, spec: NetSpec = NetSpec(), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.dtype = dtype
        self.trunk = Trunk(spec, rng, dtype)
        self.critic_head = Head(spec, rng, dtype)
        self.actor_head = Head(spec, rng, dtype)
        self.actor = mlp(spec.embed + spec.enc_width, spec.hidden, spec.action_dim, rng, squash=True, dtype=dtype)
        q_in = spec.embed + spec.enc_width + spec.action_dim
        self.q1 = mlp(q_in, spec.hidden, 1, rng, dtype=dtype)
        self.q2 = mlp(q_in, spec.hidden, 1, rng, dtype=dtype)

    # -- parameter groups ---------------------------------------------------
    def critic_params(self) -> list[Param]:
        return self.trunk.params() + self.critic_head.params() + self.q1.params() + self.q2.params()

    def actor_params(self) -> list[Param]:
        return self.actor_head.params() + self.actor.params()

    def conv_params(self) -> list[Param]:
        return self.trunk.params()

    def clone(self) -> "ActorCritic":
        return copy.deepcopy(self)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        mine = dict(self.named_params())
        missing = set(mine) - set(state)
        if missing:
            raise ShapeError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
        for name, p in mine.items():
            v = np.asarray(state[name])
            if v.shape != p.value.shape:
                raise ShapeError(f"parameter {name}: expected {p.value.shape}, got {v.shape}")
            p.value = v.astype(p.value.dtype).copy()
            p.grad = np.zeros_like(p.value)

    # -- forward passes -----------------------------------------------------
    def features(self, obs: np.ndarray) -> np.ndarray:
        return self.trunk.forward(obs.astype(self.dtype, copy=False))

    def embed(self, obs: np.ndarray, enc: np.ndarray, which: str = "critic") -> np.ndarray:
        head = self.critic_head if which == "critic" else self.actor_head
        return head.forward(self.features(obs), enc)

    def act(self, obs: np.ndarray, enc: np.ndarray, feat: np.ndarray | None = None) -> np.ndarray:
        """Goal action in (0, 1)^2 for each batch row."""
        if feat is None:
            feat = self.features(obs)
        h = self.actor_head.forward(feat, enc)
        return self.actor.forward(np.concatenate([h, enc.astype(h.dtype)], axis=1))

    def q_values(self, obs: np.ndarray, enc: np.ndarray, action: np.ndarray, feat: np.ndarray | None = None):
        if feat is None:
            feat = self.features(obs)
        h = self.critic_head.forward(feat, enc)
        x = np.concatenate([h, enc.astype(h.dtype), action.astype(h.dtype)], axis=1)
        return self.q1.forward(x)[:, 0], self.q2.forward(x)[:, 0]


def soft_update(target: ActorCritic, online: ActorCritic, tau: float) -> None:
    for (_, pt), (_, po) in zip(target.named_params(), online.named_params()):
        if tau >= 1.0:
            pt.value[...] = po.value
        else:
            pt.value *= 1.0 - tau
            pt.value += tau * po.value


def checksum(params: list[Param]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()
