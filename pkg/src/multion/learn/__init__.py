"""Numpy deep-RL stack for the long-term-goal policy."""

from .networks import ActorCritic, NetSpec
from .replay import ReplayBuffer, Transition
from .td3 import Learner, TrainConfig

__all__ = ["ActorCritic", "Learner", "NetSpec", "ReplayBuffer", "TrainConfig", "Transition"]
