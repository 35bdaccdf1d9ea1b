"""
Sampler Agents
Candidate generators for one active-learning round: the multi-fidelity
GFlowNet and the three baselines it is compared against.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from enum import Enum
from typing import List, Optional

import numpy as np

from agents.gflownet import (
    PolicyConfig,
    PolicyNet,
    RewardFn,
    TrainConfig,
    sample_terminals,
    train,
)
from tools.environments import Environment, TerminalPair

logger = logging.getLogger(__name__)


class SamplerKind(str, Enum):
    MF_GFN = "mf_gfn"
    SF_GFN = "sf_gfn"
    RANDOM_FID_GFN = "random_fid_gfn"
    RANDOM = "random"

    @property
    def trains_policy(self) -> bool:
        return self != SamplerKind.RANDOM

    @property
    def multi_fidelity_policy(self) -> bool:
        """Whether the GFlowNet itself chooses the fidelity."""
        return self == SamplerKind.MF_GFN

    @property
    def target_fidelity_only(self) -> bool:
        return self == SamplerKind.SF_GFN


class Sampler(ABC):
    kind: SamplerKind

    def __init__(self, env: Environment):
        self.env = env
        self.last_loss: Optional[float] = None

    @abstractmethod
    def propose(self, reward_fn: RewardFn, n: int, rng: np.random.Generator) -> List[TerminalPair]:
        """Return `n` candidate (x, m) pairs for this round."""

    @property
    def policy(self) -> Optional[PolicyNet]:
        return None


class GFlowNetSampler(Sampler):
    """
    Trains a GFlowNet on the round's reward and samples terminals from it.

    `env` is the environment the policy lives in: fidelity-augmented for
    MF-GFN, single-fidelity for the other two GFlowNet variants. With
    `resample_fidelity`, the fidelity of every proposal is redrawn uniformly
    from 1..`n_fidelities` after sampling.
    """

    def __init__(
        self,
        kind: SamplerKind,
        env: Environment,
        policy_config: PolicyConfig,
        train_config: TrainConfig,
        reinit_each_round: bool = False,
        resample_fidelity: bool = False,
        n_fidelities: int = 1,
    ):
        super().__init__(env)
        self.kind = kind
        self.policy_config = policy_config
        self.train_config = train_config
        self.reinit_each_round = reinit_each_round
        self.resample_fidelity = resample_fidelity
        self.n_fidelities = n_fidelities
        self._net: Optional[PolicyNet] = None

    @property
    def policy(self) -> Optional[PolicyNet]:
        return self._net

    def propose(self, reward_fn: RewardFn, n: int, rng: np.random.Generator) -> List[TerminalPair]:
        if self._net is None or self.reinit_each_round:
            self._net = PolicyNet.for_environment(self.env, self.policy_config, rng)
        self._net, trace = train(self._net, self.env, reward_fn, self.train_config, rng)
        self.last_loss = trace[-1] if trace else None
        logger.debug("%s: trained %d steps, final loss %s", self.kind.value, len(trace), self.last_loss)

        pairs = sample_terminals(self._net, self.env, n, rng)
        if self.resample_fidelity:
            fidelities = rng.integers(1, self.n_fidelities + 1, size=len(pairs))
            pairs = [(x, int(m)) for (x, _), m in zip(pairs, fidelities)]
        return pairs


class RandomSampler(Sampler):
    """Uniform objects with uniformly random fidelities; ignores the reward."""

    kind = SamplerKind.RANDOM

    def __init__(self, env: Environment, n_fidelities: int):
        super().__init__(env)
        self.n_fidelities = n_fidelities

    def propose(self, reward_fn: RewardFn, n: int, rng: np.random.Generator) -> List[TerminalPair]:
        objects = self.env.sample_objects(rng, n)
        fidelities = rng.integers(1, self.n_fidelities + 1, size=n)
        return [(x, int(m)) for x, m in zip(objects, fidelities)]


def create_sampler(
    kind: SamplerKind,
    env: Environment,
    policy_config: Optional[PolicyConfig] = None,
    train_config: Optional[TrainConfig] = None,
    reinit_each_round: bool = False,
) -> Sampler:
    """
    Build the sampler for `kind` over the multi-fidelity environment `env`.

    Returns:
        MF-GFN over `env`; SF-GFN and random-fidelity GFN over its
        single-fidelity twin; or the uniform random baseline.
    """
    kind = SamplerKind(kind)
    policy_config = policy_config or PolicyConfig()
    train_config = train_config or TrainConfig()
    n_fidelities = env.n_fidelities

    if kind == SamplerKind.RANDOM:
        return RandomSampler(env, n_fidelities)
    if kind == SamplerKind.MF_GFN:
        return GFlowNetSampler(kind, env, policy_config, train_config, reinit_each_round, n_fidelities=n_fidelities)
    return GFlowNetSampler(
        kind,
        env.single_fidelity(),
        policy_config,
        train_config,
        reinit_each_round,
        resample_fidelity=kind == SamplerKind.RANDOM_FID_GFN,
        n_fidelities=n_fidelities,
    )
